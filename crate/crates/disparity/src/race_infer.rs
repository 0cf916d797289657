//! Group-composition imputation for calls that never became stops.
//!
//! Stopped subjects have recorded group labels; callers do not. The
//! imputation assumes that within a (context, call type) cell the group
//! composition of calls that led to stops matches the composition of
//! calls that did not. For each call type we pool the call-induced
//! stops whose stop types the call type is known to produce, take their
//! group counts as the composition, and spread the unlinked call count
//! across groups accordingly.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scm::{ContextId, Race};

/// Mapping from call types to the stop types they are observed to
/// produce, with observed link frequencies retained.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypeMapping {
    map: BTreeMap<String, BTreeMap<String, u64>>,
}

impl TypeMapping {
    /// Derive the mapping empirically from linked (call type, stop type)
    /// pairs. Errors on empty input: with no linked stops there is
    /// nothing to anchor the imputation on.
    pub fn from_linked_pairs<I, S, T>(pairs: I) -> Result<TypeMapping>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut map: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        let mut any = false;
        for (call_type, stop_type) in pairs {
            any = true;
            *map.entry(call_type.into())
                .or_default()
                .entry(stop_type.into())
                .or_default() += 1;
        }
        if !any {
            return Err(Error::EmptyInput("no linked call/stop pairs".into()));
        }
        Ok(TypeMapping { map })
    }

    /// Parse a hand-authored override file: `{"call_type": ["stop_type", ...]}`.
    /// Listed stop types carry unit weight.
    pub fn from_json_str(s: &str) -> Result<TypeMapping> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(s)?;
        if raw.is_empty() {
            return Err(Error::EmptyInput("empty type mapping".into()));
        }
        let mut map = BTreeMap::new();
        for (call_type, stop_types) in raw {
            if stop_types.is_empty() {
                return Err(Error::InvalidParams(format!(
                    "call type `{call_type}` maps to no stop types"
                )));
            }
            map.insert(
                call_type,
                stop_types.into_iter().map(|t| (t, 1u64)).collect(),
            );
        }
        Ok(TypeMapping { map })
    }

    pub fn stop_types(&self, call_type: &str) -> Option<&BTreeMap<String, u64>> {
        self.map.get(call_type)
    }

    pub fn is_mapped(&self, call_type: &str) -> bool {
        self.map.contains_key(call_type)
    }

    pub fn call_types(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Unlinked call volume of one call type within one context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallTypeCount {
    pub call_type: String,
    pub n_calls: u64,
}

/// One call-induced stop within the context, reduced to what the
/// imputation needs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkedStopRace {
    pub stop_type: String,
    pub race: Race,
}

/// Imputed composition of one (context, call type) cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompositionEstimate {
    pub context: ContextId,
    pub call_type: String,
    pub n_calls: u64,
    pub frac_by_race: BTreeMap<Race, f64>,
    pub n_by_race: BTreeMap<Race, f64>,
    /// Pooled matching-stop counts behind the fractions, kept for
    /// standard-error computations downstream.
    pub n_matching_stops: BTreeMap<Race, u64>,
}

/// Why a call type was left out of the imputation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// Never seen among linked pairs and absent from the override.
    Unmapped,
    /// Mapped, but none of its stop types occur among this context's
    /// call-induced stops.
    NoMatchingStops,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcludedType {
    pub context: ContextId,
    pub call_type: String,
    pub n_calls: u64,
    pub reason: ExclusionReason,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InferenceOutcome {
    pub estimates: Vec<CompositionEstimate>,
    pub excluded: Vec<ExcludedType>,
}

impl InferenceOutcome {
    /// Total imputed count per group across all estimated call types.
    pub fn totals_by_race(&self) -> BTreeMap<Race, f64> {
        let mut totals = BTreeMap::new();
        for est in &self.estimates {
            for (race, n) in &est.n_by_race {
                *totals.entry(*race).or_insert(0.0) += n;
            }
        }
        totals
    }
}

/// Impute group compositions for the unlinked calls of context `u`.
///
/// `calls` holds the unlinked call volume per call type, `stops` the
/// context's call-induced stops. Composition is count-based over the
/// pooled matching stops: stop types that occur more often contribute
/// proportionally more. Call types that cannot be imputed are returned
/// in `excluded` with their call counts, never silently dropped.
pub fn infer_composition(
    calls: &[CallTypeCount],
    stops: &[LinkedStopRace],
    mapping: &TypeMapping,
    u: &ContextId,
) -> InferenceOutcome {
    // Stop counts by (stop type, race) within the context.
    let mut by_stop_type: BTreeMap<&str, BTreeMap<Race, u64>> = BTreeMap::new();
    for s in stops {
        *by_stop_type
            .entry(s.stop_type.as_str())
            .or_default()
            .entry(s.race)
            .or_default() += 1;
    }

    let mut outcome = InferenceOutcome::default();
    for call in calls {
        let Some(matching) = mapping.stop_types(&call.call_type) else {
            outcome.excluded.push(ExcludedType {
                context: u.clone(),
                call_type: call.call_type.clone(),
                n_calls: call.n_calls,
                reason: ExclusionReason::Unmapped,
            });
            continue;
        };
        let mut pooled: BTreeMap<Race, u64> = BTreeMap::new();
        for stop_type in matching.keys() {
            if let Some(counts) = by_stop_type.get(stop_type.as_str()) {
                for (race, n) in counts {
                    *pooled.entry(*race).or_default() += n;
                }
            }
        }
        let total: u64 = pooled.values().sum();
        if total == 0 {
            outcome.excluded.push(ExcludedType {
                context: u.clone(),
                call_type: call.call_type.clone(),
                n_calls: call.n_calls,
                reason: ExclusionReason::NoMatchingStops,
            });
            continue;
        }
        let mut frac_by_race = BTreeMap::new();
        let mut n_by_race = BTreeMap::new();
        for (race, n) in &pooled {
            let frac = *n as f64 / total as f64;
            frac_by_race.insert(*race, frac);
            n_by_race.insert(*race, frac * call.n_calls as f64);
        }
        outcome.estimates.push(CompositionEstimate {
            context: u.clone(),
            call_type: call.call_type.clone(),
            n_calls: call.n_calls,
            frac_by_race,
            n_by_race,
            n_matching_stops: pooled,
        });
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_from_pairs() {
        let m = TypeMapping::from_linked_pairs([("T1", "A"), ("T1", "B"), ("T2", "A")]).unwrap();
        let t1: Vec<&str> = m.stop_types("T1").unwrap().keys().map(|s| s.as_str()).collect();
        assert_eq!(t1, vec!["A", "B"]);
        let t2: Vec<&str> = m.stop_types("T2").unwrap().keys().map(|s| s.as_str()).collect();
        assert_eq!(t2, vec!["A"]);
        assert!(!m.is_mapped("T3"));
    }

    #[test]
    fn mapping_empty_is_error() {
        let pairs: Vec<(&str, &str)> = vec![];
        assert!(matches!(
            TypeMapping::from_linked_pairs(pairs),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn mapping_retains_frequencies() {
        let m =
            TypeMapping::from_linked_pairs([("T1", "A"), ("T1", "A"), ("T1", "B")]).unwrap();
        let t1 = m.stop_types("T1").unwrap();
        assert_eq!(t1["A"], 2);
        assert_eq!(t1["B"], 1);
    }

    #[test]
    fn override_file_roundtrip() {
        let m = TypeMapping::from_json_str(r#"{"T1": ["A", "B"], "T2": ["C"]}"#).unwrap();
        assert!(m.is_mapped("T2"));
        assert_eq!(m.stop_types("T1").unwrap().len(), 2);
        assert!(TypeMapping::from_json_str("{}").is_err());
        assert!(TypeMapping::from_json_str(r#"{"T1": []}"#).is_err());
    }

    fn stops(counts: &[(&str, Race, u64)]) -> Vec<LinkedStopRace> {
        counts
            .iter()
            .flat_map(|(t, r, n)| {
                (0..*n).map(|_| LinkedStopRace {
                    stop_type: t.to_string(),
                    race: *r,
                })
            })
            .collect()
    }

    #[test]
    fn composition_hand_case() {
        // 8 unlinked calls of type T; matching stops 3 majority, 1
        // minority: fractions (0.75, 0.25), counts (6, 2).
        let u = ContextId::new("c1");
        let mapping = TypeMapping::from_linked_pairs([("T", "A")]).unwrap();
        let calls = vec![CallTypeCount {
            call_type: "T".into(),
            n_calls: 8,
        }];
        let stops = stops(&[("A", Race::Majority, 3), ("A", Race::Minority, 1)]);
        let out = infer_composition(&calls, &stops, &mapping, &u);
        assert!(out.excluded.is_empty());
        let est = &out.estimates[0];
        assert_eq!(est.frac_by_race[&Race::Majority], 0.75);
        assert_eq!(est.frac_by_race[&Race::Minority], 0.25);
        assert_eq!(est.n_by_race[&Race::Majority], 6.0);
        assert_eq!(est.n_by_race[&Race::Minority], 2.0);
    }

    #[test]
    fn single_race_stops_assign_everything() {
        let u = ContextId::new("c1");
        let mapping = TypeMapping::from_linked_pairs([("T", "A")]).unwrap();
        let calls = vec![CallTypeCount {
            call_type: "T".into(),
            n_calls: 5,
        }];
        let stops = stops(&[("A", Race::Minority, 4)]);
        let out = infer_composition(&calls, &stops, &mapping, &u);
        let est = &out.estimates[0];
        assert_eq!(est.n_by_race[&Race::Minority], 5.0);
        assert_eq!(est.n_by_race.get(&Race::Majority), None);
    }

    #[test]
    fn unmapped_and_unmatched_types_are_flagged() {
        let u = ContextId::new("c1");
        let mapping = TypeMapping::from_linked_pairs([("T1", "A"), ("T2", "B")]).unwrap();
        let calls = vec![
            CallTypeCount {
                call_type: "T2".into(),
                n_calls: 4,
            },
            CallTypeCount {
                call_type: "T3".into(),
                n_calls: 7,
            },
        ];
        // Context has stops only of type A, so T2 (mapped to B) cannot
        // be imputed here and T3 was never mapped at all.
        let stops = stops(&[("A", Race::Majority, 2)]);
        let out = infer_composition(&calls, &stops, &mapping, &u);
        assert!(out.estimates.is_empty());
        assert_eq!(out.excluded.len(), 2);
        assert_eq!(out.excluded[0].reason, ExclusionReason::NoMatchingStops);
        assert_eq!(out.excluded[0].n_calls, 4);
        assert_eq!(out.excluded[1].reason, ExclusionReason::Unmapped);
        assert_eq!(out.excluded[1].n_calls, 7);
    }

    #[test]
    fn mass_is_conserved_per_type() {
        let u = ContextId::new("c1");
        let mapping =
            TypeMapping::from_linked_pairs([("T", "A"), ("T", "B"), ("T", "C")]).unwrap();
        let calls = vec![CallTypeCount {
            call_type: "T".into(),
            n_calls: 1000,
        }];
        let stops = stops(&[
            ("A", Race::Majority, 13),
            ("B", Race::Minority, 29),
            ("C", Race::Majority, 7),
            ("C", Race::Minority, 11),
        ]);
        let out = infer_composition(&calls, &stops, &mapping, &u);
        let est = &out.estimates[0];
        let frac_total: f64 = est.frac_by_race.values().sum();
        assert!((frac_total - 1.0).abs() < 1e-9);
        let n_total: f64 = est.n_by_race.values().sum();
        assert!((n_total - 1000.0).abs() < 1e-9 * 1000.0);
    }

    #[test]
    fn duplicating_stops_leaves_fractions_unchanged() {
        let u = ContextId::new("c1");
        let mapping = TypeMapping::from_linked_pairs([("T", "A"), ("T", "B")]).unwrap();
        let calls = vec![CallTypeCount {
            call_type: "T".into(),
            n_calls: 50,
        }];
        let base = stops(&[
            ("A", Race::Majority, 3),
            ("B", Race::Minority, 2),
            ("B", Race::Majority, 1),
        ]);
        let tripled: Vec<_> = base
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.clone(), 3))
            .collect();
        let a = infer_composition(&calls, &base, &mapping, &u);
        let b = infer_composition(&calls, &tripled, &mapping, &u);
        assert_eq!(a.estimates[0].frac_by_race, b.estimates[0].frac_by_race);
        assert_eq!(a.estimates[0].n_by_race, b.estimates[0].n_by_race);
    }
}
