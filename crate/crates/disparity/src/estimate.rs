//! Estimation of the per-context disparity from incident data.
//!
//! Each (context, group) cell is a Bernoulli estimation problem: among
//! reported subjects, how many were stopped and actioned. The disparity
//! estimate is the difference of the two groups' cell rates with a
//! normal-approximation confidence interval, and the null "no
//! disparity" is rejected exactly when the interval excludes zero.
//!
//! Reported counts are `f64` because the denominators of ingested data
//! are partly imputed (see [`crate::race_infer`]) and therefore
//! fractional; simulator-derived counts are exact integers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::scm::{ContextId, Criminality, Race, RacePair, ScmParams};
use crate::simulate::IncidentRecord;

/// Default minimum reported count per group for a context to enter the
/// significance tally. Cells below it are flagged insufficient instead
/// of producing a degenerate interval.
pub const DEFAULT_MIN_REPORTED: f64 = 30.0;

pub const DEFAULT_CONFIDENCE: f64 = 0.95;

/// Critical value for the two-sided interval. The 95% default uses the
/// conventional 1.96 rather than the exact normal quantile; other levels
/// fall back to the exact quantile.
pub fn z_for_confidence(confidence: f64) -> Result<f64> {
    if !(0.0 < confidence && confidence < 1.0) {
        return Err(Error::InvalidParams(format!(
            "confidence {confidence} not in (0, 1)"
        )));
    }
    if confidence == 0.95 {
        return Ok(1.96);
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(normal.inverse_cdf(0.5 + confidence / 2.0))
}

/// One (context, group) cell: reported count, event count, event rate
/// and its Bernoulli standard error `sqrt(p_hat (1 - p_hat))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellEstimate {
    pub context: ContextId,
    pub race: Race,
    pub n_reported: f64,
    pub n_event: f64,
    pub p_hat: f64,
    pub se: f64,
}

/// Build a cell from raw counts. Errors when nothing was reported (the
/// rate is undefined) or the counts are inconsistent.
pub fn cell_from_counts(
    context: ContextId,
    race: Race,
    n_reported: f64,
    n_event: f64,
) -> Result<CellEstimate> {
    if n_reported <= 0.0 {
        return Err(Error::InsufficientData(format!(
            "no reported {race} subjects in context `{context}`"
        )));
    }
    if n_event < 0.0 || n_event > n_reported {
        return Err(Error::Integrity(format!(
            "context `{context}`: event count {n_event} outside [0, {n_reported}]"
        )));
    }
    let p_hat = n_event / n_reported;
    CellEstimate::from_rate(context, race, n_reported, n_event, p_hat)
}

impl CellEstimate {
    fn from_rate(
        context: ContextId,
        race: Race,
        n_reported: f64,
        n_event: f64,
        p_hat: f64,
    ) -> Result<CellEstimate> {
        Ok(CellEstimate {
            context,
            race,
            n_reported,
            n_event,
            p_hat,
            se: (p_hat * (1.0 - p_hat)).max(0.0).sqrt(),
        })
    }
}

/// Count a cell directly from simulator records (reported subjects of
/// the given group in the given context; events are stopped-and-actioned
/// records).
pub fn estimate_cell(
    records: &[IncidentRecord],
    u: &ContextId,
    d: Race,
) -> Result<CellEstimate> {
    let mut n_reported = 0u64;
    let mut n_event = 0u64;
    for r in records {
        if r.reported && r.race == d && &r.context == u {
            n_reported += 1;
            if r.stopped && r.actioned {
                n_event += 1;
            }
        }
    }
    cell_from_counts(u.clone(), d, n_reported as f64, n_event as f64)
}

/// Direction of a significant disparity. `Zero` for anything not
/// significant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

/// Disparity estimate for one context: point estimate, interval,
/// significance decision and the group sample sizes behind it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DisparityResult {
    pub context: ContextId,
    pub delta_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
    pub sign: Sign,
    pub n_maj: f64,
    pub n_min: f64,
    /// Set when a group cell was missing or below the minimum-count
    /// guard; such results never count as significant.
    pub insufficient: bool,
}

/// Difference of the two cells with its two-sided interval:
/// `delta_hat ± z * sqrt(se_maj² / n_maj + se_min² / n_min)`.
pub fn delta_hat(
    maj: &CellEstimate,
    min: &CellEstimate,
    confidence: f64,
) -> Result<DisparityResult> {
    debug_assert_eq!(maj.context, min.context);
    let z = z_for_confidence(confidence)?;
    let delta = maj.p_hat - min.p_hat;
    let half_width =
        z * (maj.se * maj.se / maj.n_reported + min.se * min.se / min.n_reported).sqrt();
    let ci_low = delta - half_width;
    let ci_high = delta + half_width;
    let significant = ci_low > 0.0 || ci_high < 0.0;
    let sign = if !significant {
        Sign::Zero
    } else if delta < 0.0 {
        Sign::Negative
    } else {
        Sign::Positive
    };
    Ok(DisparityResult {
        context: maj.context.clone(),
        delta_hat: delta,
        ci_low,
        ci_high,
        significant,
        sign,
        n_maj: maj.n_reported,
        n_min: min.n_reported,
        insufficient: false,
    })
}

/// [`delta_hat`] with the minimum-count guard: missing or undersized
/// cells yield a flagged, never-significant result instead of a
/// degenerate interval.
pub fn delta_hat_guarded(
    context: &ContextId,
    maj: Option<&CellEstimate>,
    min: Option<&CellEstimate>,
    confidence: f64,
    min_reported: f64,
) -> Result<DisparityResult> {
    let sufficient = |cell: Option<&CellEstimate>| {
        cell.map_or(false, |c| c.n_reported >= min_reported)
    };
    if sufficient(maj) && sufficient(min) {
        return delta_hat(maj.unwrap(), min.unwrap(), confidence);
    }
    Ok(DisparityResult {
        context: context.clone(),
        delta_hat: 0.0,
        ci_low: 0.0,
        ci_high: 0.0,
        significant: false,
        sign: Sign::Zero,
        n_maj: maj.map_or(0.0, |c| c.n_reported),
        n_min: min.map_or(0.0, |c| c.n_reported),
        insufficient: true,
    })
}

/// Reported/event counts for one criminality class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub n_reported: u64,
    pub n_event: u64,
}

/// Empirical class decomposition of one context, estimable only on
/// criminality-labeled (synthetic) data.
///
/// Recombining the terms reproduces the plain disparity estimate on the
/// same records bit-exactly, because both are ratios of the same counts;
/// [`DecompositionTerms::recombine`] uses the count route.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionTerms {
    pub context: ContextId,
    pub xi_maj: f64,
    pub xi_min: f64,
    pub y_inn_maj: f64,
    pub y_inn_min: f64,
    pub y_cri_maj: f64,
    pub y_cri_min: f64,
    counts: Option<RacePair<[ClassCounts; 2]>>,
}

impl DecompositionTerms {
    /// Terms supplied directly (no underlying counts).
    #[allow(clippy::too_many_arguments)]
    pub fn from_values(
        context: ContextId,
        xi_maj: f64,
        xi_min: f64,
        y_inn_maj: f64,
        y_inn_min: f64,
        y_cri_maj: f64,
        y_cri_min: f64,
    ) -> DecompositionTerms {
        DecompositionTerms {
            context,
            xi_maj,
            xi_min,
            y_inn_maj,
            y_inn_min,
            y_cri_maj,
            y_cri_min,
            counts: None,
        }
    }

    /// Exact terms from model parameters.
    pub fn exact(params: &ScmParams, u: &ContextId) -> Result<DecompositionTerms> {
        let ctx = params.context(u)?;
        let y = |d: Race, c: Criminality| ctx.p_stop.get(d)[c.index()] * ctx.p_action.get(d)[c.index()];
        Ok(DecompositionTerms {
            context: u.clone(),
            xi_maj: crate::scm::xi(params, Race::Majority, u)?,
            xi_min: crate::scm::xi(params, Race::Minority, u)?,
            y_inn_maj: y(Race::Majority, Criminality::Innocent),
            y_inn_min: y(Race::Minority, Criminality::Innocent),
            y_cri_maj: y(Race::Majority, Criminality::Criminal),
            y_cri_min: y(Race::Minority, Criminality::Criminal),
            counts: None,
        })
    }

    /// The class-weighted disparity: innocent and criminal action rates
    /// mixed by the innocent share, majority minus minority.
    pub fn delta_via_classes(&self) -> f64 {
        let maj = self.y_inn_maj * self.xi_maj + self.y_cri_maj * (1.0 - self.xi_maj);
        let min = self.y_inn_min * self.xi_min + self.y_cri_min * (1.0 - self.xi_min);
        maj - min
    }

    /// Recombine into the plain disparity estimate. When the terms came
    /// from records this reuses the underlying counts, so the result is
    /// bit-identical to [`delta_hat`] on those records; otherwise it is
    /// the class-weighted form.
    pub fn recombine(&self) -> f64 {
        match &self.counts {
            Some(counts) => {
                let rate = |cc: &[ClassCounts; 2]| {
                    let n = cc[0].n_reported + cc[1].n_reported;
                    let e = cc[0].n_event + cc[1].n_event;
                    e as f64 / n as f64
                };
                rate(&counts.maj) - rate(&counts.min)
            }
            None => self.delta_via_classes(),
        }
    }
}

/// Estimate the class decomposition of context `u` from
/// criminality-labeled records. Errors if any (group, class) cell has no
/// reported subjects, since its action-rate term would be undefined.
pub fn decompose(records: &[IncidentRecord], u: &ContextId) -> Result<DecompositionTerms> {
    let mut counts = RacePair::uniform([ClassCounts::default(); 2]);
    for r in records {
        if !r.reported || &r.context != u {
            continue;
        }
        let cell = match r.race {
            Race::Majority => &mut counts.maj[r.criminality.index()],
            Race::Minority => &mut counts.min[r.criminality.index()],
        };
        cell.n_reported += 1;
        if r.stopped && r.actioned {
            cell.n_event += 1;
        }
    }
    for d in Race::BOTH {
        for c in Criminality::BOTH {
            if counts.get(d)[c.index()].n_reported == 0 {
                return Err(Error::InsufficientData(format!(
                    "no reported {c} {d} subjects in context `{u}`"
                )));
            }
        }
    }
    let xi_of = |cc: &[ClassCounts; 2]| {
        cc[0].n_reported as f64 / (cc[0].n_reported + cc[1].n_reported) as f64
    };
    let rate = |cc: ClassCounts| cc.n_event as f64 / cc.n_reported as f64;
    Ok(DecompositionTerms {
        context: u.clone(),
        xi_maj: xi_of(&counts.maj),
        xi_min: xi_of(&counts.min),
        y_inn_maj: rate(counts.maj[0]),
        y_inn_min: rate(counts.min[0]),
        y_cri_maj: rate(counts.maj[1]),
        y_cri_min: rate(counts.min[1]),
        counts: Some(counts),
    })
}

/// Tally of significance outcomes across contexts. Fractions are taken
/// over contexts with sufficient data and are `None` when there are
/// none.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceSummary {
    pub frac_negative: Option<f64>,
    pub frac_positive: Option<f64>,
    pub frac_null: Option<f64>,
    pub n_insufficient: u64,
    pub n_contexts: u64,
}

pub fn significance_summary(results: &[DisparityResult]) -> SignificanceSummary {
    let mut neg = 0u64;
    let mut pos = 0u64;
    let mut null = 0u64;
    let mut insufficient = 0u64;
    for r in results {
        if r.insufficient {
            insufficient += 1;
        } else {
            match r.sign {
                Sign::Negative => neg += 1,
                Sign::Positive => pos += 1,
                Sign::Zero => null += 1,
            }
        }
    }
    let tested = neg + pos + null;
    let frac = |k: u64| {
        if tested > 0 {
            Some(k as f64 / tested as f64)
        } else {
            None
        }
    };
    SignificanceSummary {
        frac_negative: frac(neg),
        frac_positive: frac(pos),
        frac_null: frac(null),
        n_insufficient: insufficient,
        n_contexts: results.len() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(n: f64, e: f64) -> CellEstimate {
        cell_from_counts(ContextId::new("u0"), Race::Majority, n, e).unwrap()
    }

    fn cell_min(n: f64, e: f64) -> CellEstimate {
        cell_from_counts(ContextId::new("u0"), Race::Minority, n, e).unwrap()
    }

    #[test]
    fn cell_half_events() {
        let c = cell(100.0, 50.0);
        assert_eq!(c.p_hat, 0.5);
        assert_eq!(c.se, 0.5);
    }

    #[test]
    fn cell_zero_events_boundary() {
        let c = cell(100.0, 0.0);
        assert_eq!(c.p_hat, 0.0);
        assert_eq!(c.se, 0.0);
    }

    #[test]
    fn cell_zero_reported_is_error() {
        let err = cell_from_counts(ContextId::new("u0"), Race::Majority, 0.0, 0.0);
        assert!(matches!(err, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn interval_equal_rates() {
        let r = delta_hat(&cell(100.0, 50.0), &cell_min(100.0, 50.0), 0.95).unwrap();
        assert_eq!(r.delta_hat, 0.0);
        let expected = 1.96 * (0.25f64 / 100.0 + 0.25 / 100.0).sqrt();
        assert!((r.ci_high - expected).abs() < 1e-12);
        assert!((r.ci_high - 0.13859).abs() < 5e-6);
        assert!(!r.significant);
        assert_eq!(r.sign, Sign::Zero);
    }

    #[test]
    fn interval_significant_negative() {
        let r = delta_hat(&cell(400.0, 80.0), &cell_min(400.0, 160.0), 0.95).unwrap();
        assert!((r.delta_hat - (-0.2)).abs() < 1e-12);
        let hw = 1.96 * (0.16f64 / 400.0 + 0.24 / 400.0).sqrt();
        assert!((hw - 0.06198).abs() < 5e-6);
        assert!((r.ci_low - (-0.2 - hw)).abs() < 1e-12);
        assert!(r.significant);
        assert_eq!(r.sign, Sign::Negative);
    }

    #[test]
    fn swapping_cells_mirrors_interval() {
        let a = cell(400.0, 80.0);
        let b = cell_min(300.0, 150.0);
        let r = delta_hat(&a, &b, 0.95).unwrap();
        let b_as_maj = cell(300.0, 150.0);
        let a_as_min = cell_min(400.0, 80.0);
        let s = delta_hat(&b_as_maj, &a_as_min, 0.95).unwrap();
        assert_eq!(r.delta_hat, -s.delta_hat);
        assert_eq!(r.ci_low, -s.ci_high);
        assert_eq!(r.ci_high, -s.ci_low);
    }

    #[test]
    fn significance_matches_half_width_exactly() {
        for (n_e_maj, n_e_min) in [(50.0, 52.0), (50.0, 70.0), (10.0, 90.0)] {
            let r = delta_hat(&cell(200.0, n_e_maj), &cell_min(200.0, n_e_min), 0.95).unwrap();
            let hw = (r.ci_high - r.ci_low) / 2.0;
            assert_eq!(r.significant, r.delta_hat.abs() > hw || hw == 0.0 && r.delta_hat != 0.0);
        }
    }

    #[test]
    fn guard_flags_undersized_cells() {
        let u = ContextId::new("u0");
        let small = cell(10.0, 2.0);
        let big = cell_min(100.0, 20.0);
        let r = delta_hat_guarded(&u, Some(&small), Some(&big), 0.95, 30.0).unwrap();
        assert!(r.insufficient);
        assert!(!r.significant);
        assert_eq!(r.sign, Sign::Zero);
        assert_eq!(r.n_maj, 10.0);

        let r = delta_hat_guarded(&u, None, Some(&big), 0.95, 30.0).unwrap();
        assert!(r.insufficient);
        assert_eq!(r.n_maj, 0.0);
    }

    #[test]
    fn decompose_hand_counts() {
        // 50 reported innocents with 10 events, 50 reported criminals with
        // 30, identically for both groups.
        let u = ContextId::new("u0");
        let mut records = Vec::new();
        for d in Race::BOTH {
            for (c, n, e) in [
                (Criminality::Innocent, 50u64, 10u64),
                (Criminality::Criminal, 50, 30),
            ] {
                for i in 0..n {
                    let hit = i < e;
                    records.push(IncidentRecord {
                        context: u.clone(),
                        race: d,
                        criminality: c,
                        reported: true,
                        stopped: hit,
                        actioned: hit,
                    });
                }
            }
        }
        let t = decompose(&records, &u).unwrap();
        assert_eq!(t.xi_maj, 0.5);
        assert_eq!(t.y_inn_maj, 0.2);
        assert_eq!(t.y_cri_maj, 0.6);

        let maj = estimate_cell(&records, &u, Race::Majority).unwrap();
        let min = estimate_cell(&records, &u, Race::Minority).unwrap();
        let direct = delta_hat(&maj, &min, 0.95).unwrap();
        assert_eq!(t.recombine(), direct.delta_hat);
    }

    #[test]
    fn decompose_empty_cell_is_error() {
        let u = ContextId::new("u0");
        let records = vec![IncidentRecord {
            context: u.clone(),
            race: Race::Majority,
            criminality: Criminality::Innocent,
            reported: true,
            stopped: false,
            actioned: false,
        }];
        assert!(matches!(
            decompose(&records, &u),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn summary_fractions() {
        let u = ContextId::new("u");
        let mk = |sign, significant, insufficient| DisparityResult {
            context: u.clone(),
            delta_hat: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            significant,
            sign,
            n_maj: 100.0,
            n_min: 100.0,
            insufficient,
        };
        let results: Vec<_> = std::iter::empty()
            .chain((0..4).map(|_| mk(Sign::Negative, true, false)))
            .chain((0..2).map(|_| mk(Sign::Positive, true, false)))
            .chain((0..4).map(|_| mk(Sign::Zero, false, false)))
            .collect();
        let s = significance_summary(&results);
        assert_eq!(s.frac_negative, Some(0.4));
        assert_eq!(s.frac_positive, Some(0.2));
        assert_eq!(s.frac_null, Some(0.4));
        assert_eq!(s.n_insufficient, 0);
        let total =
            s.frac_negative.unwrap() + s.frac_positive.unwrap() + s.frac_null.unwrap();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn summary_all_insufficient() {
        let u = ContextId::new("u");
        let results = vec![DisparityResult {
            context: u,
            delta_hat: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            significant: false,
            sign: Sign::Zero,
            n_maj: 1.0,
            n_min: 0.0,
            insufficient: true,
        }];
        let s = significance_summary(&results);
        assert_eq!(s.frac_negative, None);
        assert_eq!(s.n_insufficient, 1);
    }

    #[test]
    fn z_values() {
        assert_eq!(z_for_confidence(0.95).unwrap(), 1.96);
        let z99 = z_for_confidence(0.99).unwrap();
        assert!((z99 - 2.5758).abs() < 1e-3);
        assert!(z_for_confidence(1.5).is_err());
    }
}
