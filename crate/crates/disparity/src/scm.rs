//! Exact probabilities for the five-stage enforcement model.
//!
//! Each incident unfolds within a discrete context `u` as a chain of
//! binary stages: the subject's group (`D`, majority or minority), their
//! criminality (`C`), whether the incident is reported (`R`), whether a
//! stop occurs (`M`, only possible once reported) and whether an
//! enforcement action follows (`Y`, only possible once stopped).
//!
//! The one structural assumption is that criminality is independent of
//! group given the context: `p_crime` carries no group index. Everything
//! else — reporting, stopping, acting — may depend on group, criminality
//! and context.
//!
//! This module holds the parameterization ([`ScmParams`]) and the
//! closed-form quantities derived from it: the interventional action
//! probability, the innocent share among reported subjects (`xi`), the
//! per-context disparity `delta` computed by two independent algebraic
//! routes, and the stage-level parity / fairness checks.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Agreement tolerance for closed-form identities. All exact formulas in
/// this module are short products and ratios of values in `[0, 1]`, so
/// any two routes to the same quantity must agree to near machine
/// precision.
pub const EXACT_TOL: f64 = 1e-12;

/// Normalization slack above which a loaded parameter file gets a
/// warning before its context weights are rescaled.
pub const WEIGHT_WARN_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Group label of the subject of an incident.
///
/// Exactly two groups; every quantity in the crate is antisymmetric
/// under swapping them (delta changes sign, everything else relabels).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Race {
    Majority,
    Minority,
}

impl Race {
    pub const BOTH: [Race; 2] = [Race::Majority, Race::Minority];

    pub fn other(self) -> Race {
        match self {
            Race::Majority => Race::Minority,
            Race::Minority => Race::Majority,
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Race::Majority => f.write_str("majority"),
            Race::Minority => f.write_str("minority"),
        }
    }
}

/// Whether the subject actually committed a crime. Never observed in
/// real data; known in simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criminality {
    Innocent,
    Criminal,
}

impl Criminality {
    pub const BOTH: [Criminality; 2] = [Criminality::Innocent, Criminality::Criminal];

    /// Index into per-class probability arrays: `[innocent, criminal]`.
    pub fn index(self) -> usize {
        match self {
            Criminality::Innocent => 0,
            Criminality::Criminal => 1,
        }
    }

    pub fn from_flag(criminal: bool) -> Criminality {
        if criminal {
            Criminality::Criminal
        } else {
            Criminality::Innocent
        }
    }
}

impl fmt::Display for Criminality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criminality::Innocent => f.write_str("innocent"),
            Criminality::Criminal => f.write_str("criminal"),
        }
    }
}

/// Opaque identifier of a context stratum (a precinct in real data, an
/// arbitrary label in synthetic data).
///
/// Cheap to clone; simulation attaches one to every sampled incident.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextId(Arc<str>);

impl ContextId {
    pub fn new(id: impl AsRef<str>) -> ContextId {
        ContextId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ContextId {
    fn from(s: &str) -> ContextId {
        ContextId::new(s)
    }
}

impl From<String> for ContextId {
    fn from(s: String) -> ContextId {
        ContextId::new(s)
    }
}

impl Serialize for ContextId {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ContextId {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        Ok(ContextId::new(s))
    }
}

/// Per-class probabilities indexed by criminality: `[innocent, criminal]`.
pub type StageProbs = [f64; 2];

/// A value held separately for each group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RacePair<T> {
    pub maj: T,
    pub min: T,
}

impl<T> RacePair<T> {
    pub fn new(maj: T, min: T) -> RacePair<T> {
        RacePair { maj, min }
    }

    pub fn get(&self, d: Race) -> &T {
        match d {
            Race::Majority => &self.maj,
            Race::Minority => &self.min,
        }
    }

    /// Swap the two groups' blocks (the relabeling used by the
    /// antisymmetry checks).
    pub fn swapped(self) -> RacePair<T> {
        RacePair {
            maj: self.min,
            min: self.maj,
        }
    }
}

impl<T: Copy> RacePair<T> {
    pub fn uniform(v: T) -> RacePair<T> {
        RacePair { maj: v, min: v }
    }
}

/// Full stage parameterization of one context.
///
/// `p_crime` deliberately has no group index: criminality and group are
/// independent given the context. The stage ordering constraints
/// (`M = 0` forces `Y = 0`, `R = 0` forces `M = 0`) are encoded by the
/// conditioning structure — `p_stop` is the stop probability *given a
/// report*, `p_action` the action probability *given a stop* — never by
/// extra parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextParams {
    /// P(D = minority | U = u).
    pub p_minority: f64,
    /// P(C = criminal | U = u); no group argument by construction.
    pub p_crime: f64,
    /// P(R = 1 | D, C, U = u), per group, per class.
    pub p_report: RacePair<StageProbs>,
    /// P(M = 1 | R = 1, D, C, U = u).
    pub p_stop: RacePair<StageProbs>,
    /// P(Y = 1 | M = 1, R = 1, D, C, U = u).
    pub p_action: RacePair<StageProbs>,
}

impl ContextParams {
    /// Parameters identical for both groups and both classes — handy in
    /// tests and as a neutral baseline.
    pub fn flat(p_minority: f64, p_crime: f64, p_report: f64, p_stop: f64, p_action: f64) -> Self {
        ContextParams {
            p_minority,
            p_crime,
            p_report: RacePair::uniform([p_report, p_report]),
            p_stop: RacePair::uniform([p_stop, p_stop]),
            p_action: RacePair::uniform([p_action, p_action]),
        }
    }

    fn validate(&self, id: &ContextId) -> Result<()> {
        let check = |name: &str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParams(format!(
                    "context `{id}`: {name} = {v} not in [0, 1]"
                )));
            }
            Ok(())
        };
        check("p_minority", self.p_minority)?;
        check("p_crime", self.p_crime)?;
        for d in Race::BOTH {
            for c in Criminality::BOTH {
                check("p_report", self.p_report.get(d)[c.index()])?;
                check("p_stop", self.p_stop.get(d)[c.index()])?;
                check("p_action", self.p_action.get(d)[c.index()])?;
            }
        }
        Ok(())
    }

    /// Relabel the groups within this context.
    pub fn swap_races(&self) -> ContextParams {
        ContextParams {
            p_minority: 1.0 - self.p_minority,
            p_crime: self.p_crime,
            p_report: self.p_report.swapped(),
            p_stop: self.p_stop.swapped(),
            p_action: self.p_action.swapped(),
        }
    }
}

/// Filter describing one cell of the model: a context, a group, and
/// optionally a criminality class (absent means marginalized over it).
#[derive(Clone, Debug, PartialEq)]
pub struct StageQuery {
    pub context: ContextId,
    pub race: Race,
    pub criminality: Option<Criminality>,
}

/// The whole model: a weighted family of contexts.
///
/// Context iteration order is the sort order of the ids, so every
/// derived computation is deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct ScmParams {
    contexts: BTreeMap<ContextId, ContextParams>,
    weights: BTreeMap<ContextId, f64>,
}

impl ScmParams {
    /// Build a validated parameter set. Weights must be nonnegative and
    /// sum to 1 within [`EXACT_TOL`]; use [`ScmParams::from_json_str`]
    /// for inputs that need normalization.
    pub fn new(entries: Vec<(ContextId, f64, ContextParams)>) -> Result<ScmParams> {
        if entries.is_empty() {
            return Err(Error::InvalidParams("at least one context required".into()));
        }
        let mut contexts = BTreeMap::new();
        let mut weights = BTreeMap::new();
        let mut total = 0.0;
        for (id, weight, params) in entries {
            if id.as_str().is_empty() {
                return Err(Error::InvalidParams("empty context id".into()));
            }
            if weight < 0.0 || !weight.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "context `{id}`: weight {weight} must be a nonnegative finite number"
                )));
            }
            params.validate(&id)?;
            total += weight;
            if contexts.insert(id.clone(), params).is_some() {
                return Err(Error::InvalidParams(format!("duplicate context id `{id}`")));
            }
            weights.insert(id, weight);
        }
        if (total - 1.0).abs() > EXACT_TOL {
            return Err(Error::InvalidParams(format!(
                "context weights sum to {total}, expected 1"
            )));
        }
        Ok(ScmParams { contexts, weights })
    }

    /// Single context with weight 1.
    pub fn single(id: impl Into<ContextId>, params: ContextParams) -> ScmParams {
        ScmParams::new(vec![(id.into(), 1.0, params)]).expect("single context is always valid")
    }

    /// Equal weights across the given contexts.
    pub fn uniform(entries: Vec<(ContextId, ContextParams)>) -> Result<ScmParams> {
        let n = entries.len();
        if n == 0 {
            return Err(Error::InvalidParams("at least one context required".into()));
        }
        // Assign the remainder to the last context so the weights sum to
        // exactly 1 in floating point.
        let w = 1.0 / n as f64;
        let mut acc = 0.0;
        let entries = entries
            .into_iter()
            .enumerate()
            .map(|(i, (id, p))| {
                let wi = if i + 1 == n { 1.0 - acc } else { w };
                acc += wi;
                (id, wi, p)
            })
            .collect();
        ScmParams::new(entries)
    }

    pub fn context(&self, u: &ContextId) -> Result<&ContextParams> {
        self.contexts
            .get(u)
            .ok_or_else(|| Error::UnknownContext(u.clone()))
    }

    pub fn weight(&self, u: &ContextId) -> Result<f64> {
        self.weights
            .get(u)
            .copied()
            .ok_or_else(|| Error::UnknownContext(u.clone()))
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    /// Contexts in deterministic (sorted) order.
    pub fn iter(&self) -> impl Iterator<Item = (&ContextId, &ContextParams)> {
        self.contexts.iter()
    }

    pub fn context_ids(&self) -> impl Iterator<Item = &ContextId> {
        self.contexts.keys()
    }

    /// Relabel the two groups everywhere. `delta_exact` is exactly
    /// negated under this transformation.
    pub fn swap_races(&self) -> ScmParams {
        ScmParams {
            contexts: self
                .contexts
                .iter()
                .map(|(id, p)| (id.clone(), p.swap_races()))
                .collect(),
            weights: self.weights.clone(),
        }
    }

    /// Parse the JSON parameter file format:
    ///
    /// ```json
    /// {"contexts": [{"id": "P1", "weight": 0.5, "p_minority": 0.4,
    ///   "p_crime": 0.2,
    ///   "p_report": {"maj": [0.1, 0.8], "min": [0.1, 0.8]},
    ///   "p_stop":   {"maj": [0.5, 0.9], "min": [0.5, 0.9]},
    ///   "p_action": {"maj": [0.2, 0.7], "min": [0.2, 0.7]}}]}
    /// ```
    ///
    /// Weights are normalized on load; a normalization further than
    /// [`WEIGHT_WARN_TOL`] from 1 is logged as a warning.
    pub fn from_json_str(s: &str) -> Result<ScmParams> {
        let file: ParamsFile = serde_json::from_str(s)?;
        if file.contexts.is_empty() {
            return Err(Error::InvalidParams("at least one context required".into()));
        }
        let total: f64 = file.contexts.iter().map(|c| c.weight).sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "context weights sum to {total}; cannot normalize"
            )));
        }
        if (total - 1.0).abs() > WEIGHT_WARN_TOL {
            log::warn!("context weights sum to {total}; normalizing");
        }
        let n = file.contexts.len();
        let mut acc = 0.0;
        let entries = file
            .contexts
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let w = if i + 1 == n {
                    1.0 - acc
                } else {
                    let w = c.weight / total;
                    acc += w;
                    w
                };
                (
                    ContextId::new(c.id),
                    w,
                    ContextParams {
                        p_minority: c.p_minority,
                        p_crime: c.p_crime,
                        p_report: c.p_report,
                        p_stop: c.p_stop,
                        p_action: c.p_action,
                    },
                )
            })
            .collect();
        ScmParams::new(entries)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<ScmParams> {
        let s = std::fs::read_to_string(path)?;
        ScmParams::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> String {
        let file = ParamsFile {
            contexts: self
                .contexts
                .iter()
                .map(|(id, p)| ContextEntry {
                    id: id.as_str().to_string(),
                    weight: self.weights[id],
                    p_minority: p.p_minority,
                    p_crime: p.p_crime,
                    p_report: p.p_report,
                    p_stop: p.p_stop,
                    p_action: p.p_action,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("parameter serialization cannot fail")
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    contexts: Vec<ContextEntry>,
}

#[derive(Serialize, Deserialize)]
struct ContextEntry {
    id: String,
    weight: f64,
    p_minority: f64,
    p_crime: f64,
    p_report: RacePair<StageProbs>,
    p_stop: RacePair<StageProbs>,
    p_action: RacePair<StageProbs>,
}

// ---------------------------------------------------------------------------
// Closed-form quantities
// ---------------------------------------------------------------------------

/// Interventional action probability: the chance a subject of group `d`
/// (set by intervention) with criminality `c` in context `u` ends up
/// reported, stopped and actioned.
///
/// Because each stage is gated by the previous one, the intervention
/// factorizes into the plain product of the three stage parameters.
pub fn interventional_prob(
    params: &ScmParams,
    d: Race,
    c: Criminality,
    u: &ContextId,
) -> Result<f64> {
    let ctx = params.context(u)?;
    let i = c.index();
    Ok(ctx.p_action.get(d)[i] * ctx.p_stop.get(d)[i] * ctx.p_report.get(d)[i])
}

/// Share of innocents among reported subjects of group `d` in context
/// `u`: P(C = innocent | R = 1, D = d, U = u).
///
/// Errors if group `d` has zero reporting mass in `u` (the conditional
/// is undefined).
pub fn xi(params: &ScmParams, d: Race, u: &ContextId) -> Result<f64> {
    let ctx = params.context(u)?;
    let rep = ctx.p_report.get(d);
    let innocent_mass = rep[0] * (1.0 - ctx.p_crime);
    let criminal_mass = rep[1] * ctx.p_crime;
    let mass = innocent_mass + criminal_mass;
    if mass <= 0.0 {
        return Err(Error::UndefinedConditional(format!(
            "group {d} has zero reporting mass in context `{u}`"
        )));
    }
    Ok(innocent_mass / mass)
}

/// P(Y = 1, M = 1 | R = 1, C = c, D = d, U = u): probability a reported
/// subject of a given class is stopped and actioned.
pub fn conditional_action_prob(
    params: &ScmParams,
    d: Race,
    c: Criminality,
    u: &ContextId,
) -> Result<f64> {
    let ctx = params.context(u)?;
    let i = c.index();
    Ok(ctx.p_stop.get(d)[i] * ctx.p_action.get(d)[i])
}

/// P(R = 1 | D = d, U = u), marginalized over criminality.
pub fn reporting_rate(params: &ScmParams, d: Race, u: &ContextId) -> Result<f64> {
    let ctx = params.context(u)?;
    let rep = ctx.p_report.get(d);
    Ok(rep[0] * (1.0 - ctx.p_crime) + rep[1] * ctx.p_crime)
}

/// Per-group P(Y = 1, M = 1 | R = 1, D = d, U = u) computed by two
/// independent routes.
///
/// Route one marginalizes the joint over criminality and divides by the
/// reporting mass. Route two weighs the per-class action probabilities
/// by the innocent share `xi`. They are algebraically identical, so any
/// disagreement beyond [`EXACT_TOL`] indicates a defect.
pub fn delta_exact_forms(params: &ScmParams, u: &ContextId) -> Result<(f64, f64)> {
    let ctx = params.context(u)?;

    let direct_for = |d: Race| -> Result<f64> {
        let class_weight = [1.0 - ctx.p_crime, ctx.p_crime];
        let mut joint = 0.0;
        let mut reported = 0.0;
        for c in Criminality::BOTH {
            let i = c.index();
            let r = ctx.p_report.get(d)[i];
            joint += class_weight[i] * r * ctx.p_stop.get(d)[i] * ctx.p_action.get(d)[i];
            reported += class_weight[i] * r;
        }
        if reported <= 0.0 {
            return Err(Error::UndefinedConditional(format!(
                "group {d} has zero reporting mass in context `{u}`"
            )));
        }
        Ok(joint / reported)
    };

    let decomposed_for = |d: Race| -> Result<f64> {
        let x = xi(params, d, u)?;
        let y_inn = ctx.p_stop.get(d)[0] * ctx.p_action.get(d)[0];
        let y_cri = ctx.p_stop.get(d)[1] * ctx.p_action.get(d)[1];
        Ok(y_inn * x + y_cri * (1.0 - x))
    };

    let direct = direct_for(Race::Majority)? - direct_for(Race::Minority)?;
    let decomposed = decomposed_for(Race::Majority)? - decomposed_for(Race::Minority)?;
    Ok((direct, decomposed))
}

/// Observational disparity in context `u`: the majority minus minority
/// probability of being stopped-and-actioned given a report.
///
/// Computed by both routes of [`delta_exact_forms`]; errors if they
/// disagree beyond [`EXACT_TOL`].
pub fn delta_exact(params: &ScmParams, u: &ContextId) -> Result<f64> {
    let (direct, decomposed) = delta_exact_forms(params, u)?;
    let gap = (direct - decomposed).abs();
    if gap > EXACT_TOL {
        return Err(Error::InvariantViolation(format!(
            "delta routes disagree by {gap:e} in context `{u}`"
        )));
    }
    Ok(direct)
}

/// Stage-level parity flags over the whole parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParityFlags {
    /// Stop-and-action parameters agree across groups for every class
    /// and context.
    pub law_enforcement: bool,
    /// Reporting parameters agree across groups for every class and
    /// context.
    pub reporting: bool,
}

/// Check race-invariance of the enforcement stage (stop times action)
/// and the reporting stage, within [`EXACT_TOL`].
pub fn parity_check(params: &ScmParams) -> ParityFlags {
    let mut law_enforcement = true;
    let mut reporting = true;
    for (_, ctx) in params.iter() {
        for c in Criminality::BOTH {
            let i = c.index();
            let enf_maj = ctx.p_stop.maj[i] * ctx.p_action.maj[i];
            let enf_min = ctx.p_stop.min[i] * ctx.p_action.min[i];
            if (enf_maj - enf_min).abs() > EXACT_TOL {
                law_enforcement = false;
            }
            if (ctx.p_report.maj[i] - ctx.p_report.min[i]).abs() > EXACT_TOL {
                reporting = false;
            }
        }
    }
    ParityFlags {
        law_enforcement,
        reporting,
    }
}

/// Gaps for the two fairness notions implied by reporting parity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FairnessGaps {
    /// |P(C = criminal | R = 1, majority, u) − P(C = criminal | R = 1, minority, u)|.
    pub predictive_parity_gap: f64,
    /// |P(R = 1 | majority, u) − P(R = 1 | minority, u)|.
    pub group_fairness_gap: f64,
}

/// Compute both fairness gaps for context `u`. When reporting parity
/// holds, both gaps are below [`EXACT_TOL`]; the converse need not hold.
pub fn fairness_implications(params: &ScmParams, u: &ContextId) -> Result<FairnessGaps> {
    let crim_given_report =
        |d: Race| -> Result<f64> { Ok(1.0 - xi(params, d, u)?) };
    let predictive_parity_gap =
        (crim_given_report(Race::Majority)? - crim_given_report(Race::Minority)?).abs();
    let group_fairness_gap =
        (reporting_rate(params, Race::Majority, u)? - reporting_rate(params, Race::Minority, u)?)
            .abs();
    Ok(FairnessGaps {
        predictive_parity_gap,
        group_fairness_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(params: ContextParams) -> (ScmParams, ContextId) {
        let u = ContextId::new("u0");
        (ScmParams::single(u.clone(), params), u)
    }

    #[test]
    fn interventional_identity_case() {
        let (params, u) = single(ContextParams::flat(0.5, 0.5, 1.0, 1.0, 1.0));
        for d in Race::BOTH {
            for c in Criminality::BOTH {
                assert_eq!(interventional_prob(&params, d, c, &u).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn interventional_halves_multiply() {
        let (params, u) = single(ContextParams::flat(0.5, 0.5, 0.5, 0.5, 0.5));
        let p = interventional_prob(&params, Race::Minority, Criminality::Criminal, &u).unwrap();
        assert!((p - 0.125).abs() < EXACT_TOL);
    }

    #[test]
    fn interventional_unknown_context() {
        let (params, _) = single(ContextParams::flat(0.5, 0.5, 0.5, 0.5, 0.5));
        let missing = ContextId::new("nope");
        assert!(matches!(
            interventional_prob(&params, Race::Majority, Criminality::Innocent, &missing),
            Err(Error::UnknownContext(_))
        ));
    }

    #[test]
    fn xi_hand_case() {
        // Half the population criminal, innocents reported at 0.2 and
        // criminals at 0.8: innocent share of reports is 0.1 / 0.5.
        let mut ctx = ContextParams::flat(0.5, 0.5, 0.0, 0.5, 0.5);
        ctx.p_report = RacePair::uniform([0.2, 0.8]);
        let (params, u) = single(ctx);
        let x = xi(&params, Race::Majority, &u).unwrap();
        assert!((x - 0.2).abs() < EXACT_TOL);
    }

    #[test]
    fn xi_no_criminals() {
        let (params, u) = single(ContextParams::flat(0.5, 0.0, 0.3, 0.5, 0.5));
        assert_eq!(xi(&params, Race::Minority, &u).unwrap(), 1.0);
    }

    #[test]
    fn xi_class_blind_reporting() {
        let (params, u) = single(ContextParams::flat(0.5, 0.37, 0.4, 0.5, 0.5));
        let x = xi(&params, Race::Majority, &u).unwrap();
        assert!((x - (1.0 - 0.37)).abs() < EXACT_TOL);
    }

    #[test]
    fn xi_zero_reporting_mass() {
        let (params, u) = single(ContextParams::flat(0.5, 0.5, 0.0, 0.5, 0.5));
        assert!(matches!(
            xi(&params, Race::Majority, &u),
            Err(Error::UndefinedConditional(_))
        ));
    }

    #[test]
    fn conditional_action_products() {
        let mut ctx = ContextParams::flat(0.5, 0.5, 0.5, 1.0, 0.3);
        let (params, u) = single(ctx.clone());
        let p = conditional_action_prob(&params, Race::Majority, Criminality::Innocent, &u).unwrap();
        assert!((p - 0.3).abs() < EXACT_TOL);

        ctx.p_stop = RacePair::uniform([0.5, 0.5]);
        ctx.p_action = RacePair::uniform([0.6, 0.6]);
        let (params, u) = single(ctx);
        let p = conditional_action_prob(&params, Race::Minority, Criminality::Criminal, &u).unwrap();
        assert!((p - 0.3).abs() < EXACT_TOL);
    }

    /// Parameters realizing the hand-worked disparity example: equal
    /// innocent shares of 0.5, innocent action probabilities 0.2 vs 0.4,
    /// criminal action probability 0.6 for both groups.
    fn hand_case() -> (ScmParams, ContextId) {
        let ctx = ContextParams {
            p_minority: 0.5,
            p_crime: 0.5,
            p_report: RacePair::uniform([0.5, 0.5]),
            p_stop: RacePair::new([0.5, 1.0], [0.5, 1.0]),
            p_action: RacePair::new([0.4, 0.6], [0.8, 0.6]),
        };
        single(ctx)
    }

    #[test]
    fn delta_hand_case() {
        let (params, u) = hand_case();
        assert!((xi(&params, Race::Majority, &u).unwrap() - 0.5).abs() < EXACT_TOL);
        assert!((xi(&params, Race::Minority, &u).unwrap() - 0.5).abs() < EXACT_TOL);
        let d = delta_exact(&params, &u).unwrap();
        assert!((d - (-0.1)).abs() < EXACT_TOL, "delta = {d}");
    }

    #[test]
    fn delta_symmetric_is_zero() {
        let (params, u) = single(ContextParams::flat(0.3, 0.2, 0.4, 0.6, 0.5));
        assert_eq!(delta_exact(&params, &u).unwrap(), 0.0);
    }

    #[test]
    fn delta_antisymmetric_under_relabel() {
        let (params, u) = hand_case();
        let swapped = params.swap_races();
        let d = delta_exact(&params, &u).unwrap();
        let d_swapped = delta_exact(&swapped, &u).unwrap();
        assert_eq!(d, -d_swapped);
    }

    #[test]
    fn parity_flags_symmetric() {
        let (params, _) = single(ContextParams::flat(0.4, 0.3, 0.5, 0.5, 0.5));
        let flags = parity_check(&params);
        assert!(flags.law_enforcement && flags.reporting);
    }

    #[test]
    fn parity_flags_reporting_broken() {
        let mut ctx = ContextParams::flat(0.4, 0.3, 0.5, 0.5, 0.5);
        ctx.p_report.min[0] += 0.1;
        let (params, _) = single(ctx);
        let flags = parity_check(&params);
        assert!(flags.law_enforcement);
        assert!(!flags.reporting);
    }

    #[test]
    fn fairness_hand_case() {
        // Class-sensitive but group-blind reporting: both gaps vanish
        // and the shared criminal share of reports is 0.27 / 0.34.
        let mut ctx = ContextParams::flat(0.5, 0.3, 0.0, 0.5, 0.5);
        ctx.p_report = RacePair::uniform([0.1, 0.9]);
        let (params, u) = single(ctx);
        let gaps = fairness_implications(&params, &u).unwrap();
        assert!(gaps.predictive_parity_gap < EXACT_TOL);
        assert!(gaps.group_fairness_gap < EXACT_TOL);
        let crim_share = 1.0 - xi(&params, Race::Majority, &u).unwrap();
        assert!((crim_share - 0.27 / 0.34).abs() < EXACT_TOL);
    }

    #[test]
    fn fairness_degenerate_crime() {
        let mut ctx = ContextParams::flat(0.5, 0.0, 0.0, 0.5, 0.5);
        ctx.p_report = RacePair::new([0.4, 0.9], [0.7, 0.2]);
        let (params, u) = single(ctx);
        let gaps = fairness_implications(&params, &u).unwrap();
        assert!(gaps.predictive_parity_gap < EXACT_TOL);
        assert!(gaps.group_fairness_gap > 0.0);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let ctx = ContextParams::flat(0.5, 0.5, 0.5, 0.5, 0.5);
        let err = ScmParams::new(vec![
            (ContextId::new("a"), 0.5, ctx.clone()),
            (ContextId::new("b"), 0.6, ctx),
        ]);
        assert!(matches!(err, Err(Error::InvalidParams(_))));
    }

    #[test]
    fn json_roundtrip_normalizes() {
        let json = r#"{"contexts": [
            {"id": "p1", "weight": 2.0, "p_minority": 0.4, "p_crime": 0.2,
             "p_report": {"maj": [0.1, 0.8], "min": [0.2, 0.8]},
             "p_stop":   {"maj": [0.5, 0.9], "min": [0.5, 0.9]},
             "p_action": {"maj": [0.2, 0.7], "min": [0.3, 0.7]}},
            {"id": "p2", "weight": 2.0, "p_minority": 0.5, "p_crime": 0.3,
             "p_report": {"maj": [0.3, 0.6], "min": [0.3, 0.6]},
             "p_stop":   {"maj": [0.4, 0.8], "min": [0.4, 0.8]},
             "p_action": {"maj": [0.5, 0.6], "min": [0.5, 0.6]}}
        ]}"#;
        let params = ScmParams::from_json_str(json).unwrap();
        let total: f64 = params.context_ids().map(|u| params.weight(u).unwrap()).sum();
        assert!((total - 1.0).abs() <= EXACT_TOL);
        let reparsed = ScmParams::from_json_str(&params.to_json_string()).unwrap();
        assert_eq!(params, reparsed);
    }

    #[test]
    fn rejects_out_of_range_probability() {
        let json = r#"{"contexts": [
            {"id": "p1", "weight": 1.0, "p_minority": 0.4, "p_crime": 1.2,
             "p_report": {"maj": [0.1, 0.8], "min": [0.2, 0.8]},
             "p_stop":   {"maj": [0.5, 0.9], "min": [0.5, 0.9]},
             "p_action": {"maj": [0.2, 0.7], "min": [0.3, 0.7]}}
        ]}"#;
        assert!(matches!(
            ScmParams::from_json_str(json),
            Err(Error::InvalidParams(_))
        ));
    }
}
