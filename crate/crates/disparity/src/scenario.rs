//! Scenario regimes: limiting forms of the disparity and attribution of
//! significant results.
//!
//! A regime is a declared set of premises about which stages are
//! (approximately) unbiased. Under each regime the class decomposition
//! of the disparity collapses to a single interpretable term — the
//! limiting form — and the residual between the full disparity and that
//! form is bounded by an expression in the premise violations. The
//! engine never infers which regime applies; callers declare one (or
//! several, side by side) and read off the attribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{DecompositionTerms, DisparityResult, Sign};
use crate::scm::{ContextId, Race, ScmParams};

/// Default numeric slack under which a regime's premises are considered
/// to hold.
pub const DEFAULT_PREMISE_SLACK: f64 = 0.05;

/// Hard ceiling: above this premise slack the limiting form is not
/// meaningful and [`verify_proposition`] refuses to evaluate it.
pub const MAX_PREMISE_SLACK: f64 = 0.1;

/// The declared assumption regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioAssumption {
    /// Nearly all reported subjects are innocent (e.g. blanket security
    /// screening).
    #[serde(rename = "scenario1")]
    MostlyInnocent,
    /// Nearly all reported subjects are criminal (e.g. high-precision
    /// automated reporting).
    #[serde(rename = "scenario2")]
    MostlyCriminal,
    /// Mixed reporting; reporting composition and enforcement against
    /// criminals assumed unbiased.
    #[serde(rename = "case1")]
    UnbiasedReportingAndCriminalPolicing,
    /// Mixed reporting; reporting composition and enforcement against
    /// innocents assumed unbiased.
    #[serde(rename = "case2")]
    UnbiasedReportingAndInnocentPolicing,
    /// Mixed reporting; enforcement assumed unbiased for both classes,
    /// leaving reporting composition as the only channel.
    #[serde(rename = "case3")]
    UnbiasedPolicingBothClasses,
}

impl ScenarioAssumption {
    pub const ALL: [ScenarioAssumption; 5] = [
        ScenarioAssumption::MostlyInnocent,
        ScenarioAssumption::MostlyCriminal,
        ScenarioAssumption::UnbiasedReportingAndCriminalPolicing,
        ScenarioAssumption::UnbiasedReportingAndInnocentPolicing,
        ScenarioAssumption::UnbiasedPolicingBothClasses,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScenarioAssumption::MostlyInnocent => "scenario1",
            ScenarioAssumption::MostlyCriminal => "scenario2",
            ScenarioAssumption::UnbiasedReportingAndCriminalPolicing => "case1",
            ScenarioAssumption::UnbiasedReportingAndInnocentPolicing => "case2",
            ScenarioAssumption::UnbiasedPolicingBothClasses => "case3",
        }
    }
}

impl std::fmt::Display for ScenarioAssumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// The regime's limiting expression evaluated on the given terms.
pub fn limit_form(t: &DecompositionTerms, assumption: ScenarioAssumption) -> f64 {
    match assumption {
        ScenarioAssumption::MostlyInnocent => t.y_inn_maj - t.y_inn_min,
        ScenarioAssumption::MostlyCriminal => t.y_cri_maj - t.y_cri_min,
        ScenarioAssumption::UnbiasedReportingAndCriminalPolicing => {
            t.xi_maj * (t.y_inn_maj - t.y_inn_min)
        }
        ScenarioAssumption::UnbiasedReportingAndInnocentPolicing => {
            (1.0 - t.xi_maj) * (t.y_cri_maj - t.y_cri_min)
        }
        ScenarioAssumption::UnbiasedPolicingBothClasses => {
            (t.y_cri_maj - t.y_inn_maj) * (t.xi_min - t.xi_maj)
        }
    }
}

/// How far the terms are from the regime's premises (0 = premises hold
/// exactly).
pub fn premise_slack(t: &DecompositionTerms, assumption: ScenarioAssumption) -> f64 {
    let xi_gap = (t.xi_maj - t.xi_min).abs();
    let y_inn_gap = (t.y_inn_maj - t.y_inn_min).abs();
    let y_cri_gap = (t.y_cri_maj - t.y_cri_min).abs();
    match assumption {
        ScenarioAssumption::MostlyInnocent => (1.0 - t.xi_maj).max(1.0 - t.xi_min),
        ScenarioAssumption::MostlyCriminal => t.xi_maj.max(t.xi_min),
        ScenarioAssumption::UnbiasedReportingAndCriminalPolicing => xi_gap.max(y_cri_gap),
        ScenarioAssumption::UnbiasedReportingAndInnocentPolicing => xi_gap.max(y_inn_gap),
        ScenarioAssumption::UnbiasedPolicingBothClasses => y_inn_gap.max(y_cri_gap),
    }
}

pub fn premises_hold(
    t: &DecompositionTerms,
    assumption: ScenarioAssumption,
    threshold: f64,
) -> bool {
    premise_slack(t, assumption) <= threshold
}

/// Residual bound implied by the regime's algebra. The residual between
/// the full class-weighted disparity and the limiting form never exceeds
/// this expression, premises close or not.
pub fn residual_bound(t: &DecompositionTerms, assumption: ScenarioAssumption) -> f64 {
    let xi_gap = (t.xi_maj - t.xi_min).abs();
    let y_inn_gap = (t.y_inn_maj - t.y_inn_min).abs();
    let y_cri_gap = (t.y_cri_maj - t.y_cri_min).abs();
    match assumption {
        ScenarioAssumption::MostlyInnocent => 2.0 * (1.0 - t.xi_maj).max(1.0 - t.xi_min),
        ScenarioAssumption::MostlyCriminal => 2.0 * t.xi_maj.max(t.xi_min),
        ScenarioAssumption::UnbiasedReportingAndCriminalPolicing => xi_gap + y_cri_gap,
        ScenarioAssumption::UnbiasedReportingAndInnocentPolicing => xi_gap + y_inn_gap,
        ScenarioAssumption::UnbiasedPolicingBothClasses => y_inn_gap.max(y_cri_gap),
    }
}

/// Outcome of checking a regime's limiting form against the exact
/// disparity of one context.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PropositionCheck {
    pub delta: f64,
    pub limit: f64,
    pub residual: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Check a regime against terms whose exact disparity is `delta`.
/// Errors when the premises are grossly violated (slack above
/// [`MAX_PREMISE_SLACK`]).
pub fn verify_proposition_terms(
    t: &DecompositionTerms,
    delta: f64,
    assumption: ScenarioAssumption,
) -> Result<PropositionCheck> {
    let slack = premise_slack(t, assumption);
    if slack > MAX_PREMISE_SLACK {
        return Err(Error::PremisesViolated {
            slack,
            limit: MAX_PREMISE_SLACK,
        });
    }
    let limit = limit_form(t, assumption);
    let residual = (delta - limit).abs();
    let bound = residual_bound(t, assumption);
    Ok(PropositionCheck {
        delta,
        limit,
        residual,
        bound,
        ok: residual <= bound,
    })
}

/// [`verify_proposition_terms`] on the exact terms of context `u`.
pub fn verify_proposition(
    params: &ScmParams,
    u: &ContextId,
    assumption: ScenarioAssumption,
) -> Result<PropositionCheck> {
    let terms = DecompositionTerms::exact(params, u)?;
    let delta = crate::scm::delta_exact(params, u)?;
    verify_proposition_terms(&terms, delta, assumption)
}

/// Pipeline stage a disparity is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Policing,
    Reporting,
}

/// Criminality class the attributed bias acts on; reporting-side
/// attributions have no class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriminalityClass {
    Innocents,
    Criminals,
    NotApplicable,
}

/// Regime-conditional explanation of a significant disparity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub assumption: ScenarioAssumption,
    pub stage: Stage,
    pub against_race: Race,
    pub criminality_class: CriminalityClass,
    /// The estimate of the regime's limiting expression — for a
    /// significant result this is the disparity estimate itself.
    pub limit_value: f64,
    pub explanation: String,
}

/// Map a significant result to its regime-specific takeaway. Errors on
/// non-significant results: there is nothing to attribute.
pub fn attribute(
    result: &DisparityResult,
    assumption: ScenarioAssumption,
) -> Result<Attribution> {
    if !result.significant || result.sign == Sign::Zero {
        return Err(Error::NotSignificant);
    }
    let negative = result.sign == Sign::Negative;
    use ScenarioAssumption::*;
    let (stage, against_race, criminality_class) = match assumption {
        MostlyInnocent | UnbiasedReportingAndCriminalPolicing => (
            Stage::Policing,
            if negative { Race::Minority } else { Race::Majority },
            CriminalityClass::Innocents,
        ),
        MostlyCriminal | UnbiasedReportingAndInnocentPolicing => (
            Stage::Policing,
            if negative { Race::Minority } else { Race::Majority },
            CriminalityClass::Criminals,
        ),
        // Under class-blind enforcement the only remaining channel is the
        // reporting composition, and the over-reported group is the
        // opposite of the one the observational sign points at.
        UnbiasedPolicingBothClasses => (
            Stage::Reporting,
            if negative { Race::Majority } else { Race::Minority },
            CriminalityClass::NotApplicable,
        ),
    };
    let direction = if negative { "negative" } else { "positive" };
    let explanation = match stage {
        Stage::Policing => format!(
            "Under the {assumption} regime, a significant {direction} disparity in context `{ctx}` \
             points to enforcement actions bearing disproportionately on {class} of the {race} group.",
            ctx = result.context,
            class = match criminality_class {
                CriminalityClass::Innocents => "innocents",
                CriminalityClass::Criminals => "criminals",
                CriminalityClass::NotApplicable => "subjects",
            },
            race = against_race,
        ),
        Stage::Reporting => format!(
            "Under the {assumption} regime, a significant {direction} disparity in context `{ctx}` \
             points to over-reporting of the {race} group: their reported pool carries a higher \
             innocent share, which lowers their observed action rate.",
            ctx = result.context,
            race = against_race,
        ),
    };
    Ok(Attribution {
        assumption,
        stage,
        against_race,
        criminality_class,
        limit_value: result.delta_hat,
        explanation,
    })
}
