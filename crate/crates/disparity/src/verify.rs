//! Numerical verification of the model's exact identities.
//!
//! Every closed form in [`crate::scm`] has an independent brute-force
//! route here: the interventional product is checked against a
//! truncated-factorization enumeration over all stage-outcome
//! combinations, and the disparity against a full joint enumeration.
//! The sweep in [`run_sweep`] exercises each identity, the parity
//! implications, the fairness implications and every scenario limit on
//! randomized parameter draws, and reports one pass/fail row per result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::estimate::DecompositionTerms;
use crate::scenario::{self, ScenarioAssumption};
use crate::scm::{
    delta_exact, delta_exact_forms, fairness_implications, interventional_prob, parity_check,
    ContextId, ContextParams, Criminality, Race, RacePair, ScmParams, EXACT_TOL,
};

fn bern(p: f64, bit: u8) -> f64 {
    if bit == 1 {
        p
    } else {
        1.0 - p
    }
}

/// Point mass at 0 for stages forced off by the gating structure.
fn forced_zero(bit: u8) -> f64 {
    if bit == 0 {
        1.0
    } else {
        0.0
    }
}

/// Brute-force interventional action probability: enumerate all eight
/// (report, stop, action) outcome combinations of the truncated
/// factorization and add up the mass with action = 1.
pub fn enumerate_interventional(ctx: &ContextParams, d: Race, c: Criminality) -> f64 {
    let i = c.index();
    let p_r = ctx.p_report.get(d)[i];
    let p_m = ctx.p_stop.get(d)[i];
    let p_y = ctx.p_action.get(d)[i];
    let mut total = 0.0;
    for r in [0u8, 1] {
        for m in [0u8, 1] {
            for y in [0u8, 1] {
                let pr = bern(p_r, r);
                let pm = if r == 1 { bern(p_m, m) } else { forced_zero(m) };
                let py = if m == 1 { bern(p_y, y) } else { forced_zero(y) };
                if y == 1 {
                    total += pr * pm * py;
                }
            }
        }
    }
    total
}

/// Brute-force P(action and stop | report, group) by enumerating the
/// full (criminality, report, stop, action) joint. Returns `None` when
/// the group has no reporting mass.
pub fn enumerate_action_given_report(ctx: &ContextParams, d: Race) -> Option<f64> {
    let mut event_mass = 0.0;
    let mut report_mass = 0.0;
    for c in Criminality::BOTH {
        let i = c.index();
        let w = if c == Criminality::Criminal {
            ctx.p_crime
        } else {
            1.0 - ctx.p_crime
        };
        for r in [0u8, 1] {
            for m in [0u8, 1] {
                for y in [0u8, 1] {
                    let pr = bern(ctx.p_report.get(d)[i], r);
                    let pm = if r == 1 {
                        bern(ctx.p_stop.get(d)[i], m)
                    } else {
                        forced_zero(m)
                    };
                    let py = if m == 1 {
                        bern(ctx.p_action.get(d)[i], y)
                    } else {
                        forced_zero(y)
                    };
                    let mass = w * pr * pm * py;
                    if r == 1 {
                        report_mass += mass;
                        if m == 1 && y == 1 {
                            event_mass += mass;
                        }
                    }
                }
            }
        }
    }
    (report_mass > 0.0).then(|| event_mass / report_mass)
}

/// Brute-force disparity of one context via the joint enumeration.
pub fn enumerate_delta(ctx: &ContextParams) -> Option<f64> {
    Some(
        enumerate_action_given_report(ctx, Race::Majority)?
            - enumerate_action_given_report(ctx, Race::Minority)?,
    )
}

// ---------------------------------------------------------------------------
// Randomized parameter construction
// ---------------------------------------------------------------------------

/// Probabilities kept inside [0.02, 0.98] so conditionals never
/// degenerate in randomized sweeps.
fn rp(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.02..0.98)
}

fn random_stage(rng: &mut ChaCha8Rng) -> RacePair<[f64; 2]> {
    RacePair::new([rp(rng), rp(rng)], [rp(rng), rp(rng)])
}

fn assemble(entries: Vec<(String, f64, ContextParams)>) -> ScmParams {
    let total: f64 = entries.iter().map(|(_, w, _)| *w).sum();
    let n = entries.len();
    let mut acc = 0.0;
    ScmParams::new(
        entries
            .into_iter()
            .enumerate()
            .map(|(i, (id, w, p))| {
                let wi = if i + 1 == n { 1.0 - acc } else { w / total };
                acc += wi;
                (ContextId::new(id), wi, p)
            })
            .collect(),
    )
    .expect("generated parameters are valid")
}

/// Fully random parameter set with the given number of contexts.
pub fn random_params(rng: &mut ChaCha8Rng, n_contexts: usize) -> ScmParams {
    let entries = (0..n_contexts)
        .map(|i| {
            (
                format!("u{i}"),
                rng.random_range(0.1..1.0),
                ContextParams {
                    p_minority: rp(rng),
                    p_crime: rp(rng),
                    p_report: random_stage(rng),
                    p_stop: random_stage(rng),
                    p_action: random_stage(rng),
                },
            )
        })
        .collect();
    assemble(entries)
}

/// Random parameters with both group blocks identical in every stage.
pub fn random_symmetric_params(rng: &mut ChaCha8Rng, n_contexts: usize) -> ScmParams {
    let entries = (0..n_contexts)
        .map(|i| {
            let report = [rp(rng), rp(rng)];
            let stop = [rp(rng), rp(rng)];
            let action = [rp(rng), rp(rng)];
            (
                format!("u{i}"),
                rng.random_range(0.1..1.0),
                ContextParams {
                    p_minority: rp(rng),
                    p_crime: rp(rng),
                    p_report: RacePair::uniform(report),
                    p_stop: RacePair::uniform(stop),
                    p_action: RacePair::uniform(action),
                },
            )
        })
        .collect();
    assemble(entries)
}

/// Copy `params` and move one minority-side stage parameter (random
/// context, stage and class) `magnitude` away from the majority value,
/// in whichever direction stays inside [0, 1].
pub fn inject_asymmetry(
    params: &ScmParams,
    rng: &mut ChaCha8Rng,
    magnitude: f64,
) -> ScmParams {
    let ids: Vec<ContextId> = params.context_ids().cloned().collect();
    let target = ids[rng.random_range(0..ids.len())].clone();
    let stage = rng.random_range(0..3u8);
    let class = rng.random_range(0..2usize);
    let entries = params
        .iter()
        .map(|(id, ctx)| {
            let mut ctx = ctx.clone();
            if *id == target {
                let block = match stage {
                    0 => &mut ctx.p_report,
                    1 => &mut ctx.p_stop,
                    _ => &mut ctx.p_action,
                };
                let base = block.maj[class];
                block.min[class] = if base + magnitude <= 1.0 {
                    base + magnitude
                } else {
                    base - magnitude
                };
            }
            (
                id.as_str().to_string(),
                params.weight(id).expect("context present"),
                ctx,
            )
        })
        .collect();
    assemble(entries)
}

/// One-context parameters whose premise violation for `assumption`
/// scales with `s`, with perturbation directions chosen coherently so
/// the residual shrinks monotonically along the path s → 0.
///
/// The random pieces are drawn from `rng` before `s` is applied, so
/// calling this with the same rng state and different `s` values walks
/// one path.
pub fn slack_path_params(base: &SlackPathBase, s: f64) -> ScmParams {
    let b = base;
    let ctx = match b.assumption {
        // Innocent share pinned near 1 (or 0) via the crime rate;
        // class-blind reporting keeps the share equal across groups.
        ScenarioAssumption::MostlyInnocent | ScenarioAssumption::MostlyCriminal => {
            let p_crime = if b.assumption == ScenarioAssumption::MostlyInnocent {
                0.5 * s
            } else {
                1.0 - 0.5 * s
            };
            ContextParams {
                p_minority: 0.5,
                p_crime,
                p_report: RacePair::new([b.r_maj, b.r_maj], [b.r_min, b.r_min]),
                p_stop: RacePair::uniform([1.0, 1.0]),
                p_action: RacePair::new(
                    [b.y_inn_maj, b.y_cri_maj],
                    [b.y_inn_min, b.y_cri_min],
                ),
            }
        }
        ScenarioAssumption::UnbiasedReportingAndCriminalPolicing => ContextParams {
            p_minority: 0.5,
            p_crime: 0.4,
            p_report: RacePair::new(
                [b.r_maj, b.r_min],
                // Minority innocents reported slightly less, criminals
                // slightly more: innocent share gap grows with s.
                [b.r_maj * (1.0 - s * b.k), b.r_min * (1.0 + s * b.k)],
            ),
            p_stop: RacePair::uniform([1.0, 1.0]),
            p_action: RacePair::new(
                [b.y_inn_maj, b.y_cri_maj],
                [b.y_inn_min, (b.y_cri_maj + s * b.h).min(1.0)],
            ),
        },
        ScenarioAssumption::UnbiasedReportingAndInnocentPolicing => ContextParams {
            p_minority: 0.5,
            p_crime: 0.4,
            p_report: RacePair::new(
                [b.r_maj, b.r_min],
                [b.r_maj * (1.0 - s * b.k), b.r_min * (1.0 + s * b.k)],
            ),
            p_stop: RacePair::uniform([1.0, 1.0]),
            p_action: RacePair::new(
                [b.y_inn_min - s * b.h, b.y_cri_maj],
                [b.y_inn_min, b.y_cri_min],
            ),
        },
        ScenarioAssumption::UnbiasedPolicingBothClasses => ContextParams {
            p_minority: 0.5,
            p_crime: 0.4,
            p_report: RacePair::new([b.r_maj, b.r_min], [b.r_min, b.r_maj]),
            p_stop: RacePair::uniform([1.0, 1.0]),
            p_action: RacePair::new(
                [b.y_inn_min - s * b.h, b.y_cri_min - s * b.h2],
                [b.y_inn_min, b.y_cri_min],
            ),
        },
    };
    ScmParams::single("u0", ctx)
}

/// Frozen random direction of one slack path.
#[derive(Clone, Copy, Debug)]
pub struct SlackPathBase {
    pub assumption: ScenarioAssumption,
    r_maj: f64,
    r_min: f64,
    y_inn_maj: f64,
    y_inn_min: f64,
    y_cri_maj: f64,
    y_cri_min: f64,
    k: f64,
    h: f64,
    h2: f64,
}

impl SlackPathBase {
    pub fn draw(rng: &mut ChaCha8Rng, assumption: ScenarioAssumption) -> SlackPathBase {
        // Innocents are actioned less than criminals and the class gaps
        // stay bounded away from zero, so the residual components share
        // a sign and scale linearly along the path.
        let y_inn_maj = rng.random_range(0.10..0.30);
        let y_inn_min = rng.random_range(0.35..0.45);
        let y_cri_maj = rng.random_range(0.60..0.75);
        let y_cri_min = rng.random_range(0.76..0.90);
        SlackPathBase {
            assumption,
            r_maj: rng.random_range(0.3..0.9),
            r_min: rng.random_range(0.3..0.9),
            y_inn_maj,
            y_inn_min,
            y_cri_maj,
            y_cri_min,
            k: rng.random_range(0.1..0.4),
            h: rng.random_range(0.05..0.2),
            h2: rng.random_range(0.05..0.2),
        }
    }
}

// ---------------------------------------------------------------------------
// The check table
// ---------------------------------------------------------------------------

/// One pass/fail row of the verification table.
#[derive(Clone, Debug)]
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    pub n_draws: usize,
    /// Worst observed discrepancy (meaning depends on the row).
    pub worst: f64,
    /// Threshold the discrepancy is held to.
    pub tolerance: f64,
    pub detail: String,
}

const SLACK_SEQUENCE: [f64; 3] = [0.1, 0.01, 0.001];

/// Run the full identity sweep: `n_draws` randomized draws per row,
/// deterministic in `seed`.
pub fn run_sweep(seed: u64, n_draws: usize) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Interventional product vs stage-outcome enumeration.
    {
        let mut worst: f64 = 0.0;
        for _ in 0..n_draws {
            let n_contexts = 1 + rng.random_range(0..3u8) as usize;
            let params = random_params(&mut rng, n_contexts);
            for (u, ctx) in params.iter() {
                for d in Race::BOTH {
                    for c in Criminality::BOTH {
                        let closed = interventional_prob(&params, d, c, u)
                            .expect("context present");
                        let brute = enumerate_interventional(ctx, d, c);
                        worst = worst.max((closed - brute).abs());
                    }
                }
            }
        }
        rows.push(CheckRow {
            name: "interventional_product_vs_enumeration",
            passed: worst <= EXACT_TOL,
            n_draws,
            worst,
            tolerance: EXACT_TOL,
            detail: "stage-product form against 8-outcome enumeration".into(),
        });
    }

    // Disparity: direct conditional route vs class decomposition vs the
    // joint enumeration.
    {
        let mut worst: f64 = 0.0;
        for _ in 0..n_draws {
            let n_contexts = 1 + rng.random_range(0..3u8) as usize;
            let params = random_params(&mut rng, n_contexts);
            for (u, ctx) in params.iter() {
                let (direct, decomposed) =
                    delta_exact_forms(&params, u).expect("nondegenerate draw");
                let brute = enumerate_delta(ctx).expect("nondegenerate draw");
                worst = worst.max((direct - decomposed).abs());
                worst = worst.max((direct - brute).abs());
            }
        }
        rows.push(CheckRow {
            name: "delta_direct_vs_class_decomposition",
            passed: worst <= EXACT_TOL,
            n_draws,
            worst,
            tolerance: EXACT_TOL,
            detail: "two closed-form routes and joint enumeration agree".into(),
        });
    }

    // Stage parity implies zero disparity.
    {
        let mut worst: f64 = 0.0;
        let mut parity_ok = true;
        for _ in 0..n_draws {
            let n_contexts = 1 + rng.random_range(0..3u8) as usize;
            let params = random_symmetric_params(&mut rng, n_contexts);
            let flags = parity_check(&params);
            parity_ok &= flags.law_enforcement && flags.reporting;
            for u in params.context_ids() {
                worst = worst.max(delta_exact(&params, u).expect("nondegenerate").abs());
            }
        }
        rows.push(CheckRow {
            name: "parity_implies_zero_delta",
            passed: parity_ok && worst <= EXACT_TOL,
            n_draws,
            worst,
            tolerance: EXACT_TOL,
            detail: "group-symmetric draws yield zero disparity everywhere".into(),
        });
    }

    // Contrapositive: a nonzero disparity must come with a parity
    // violation, and injected single-stage asymmetry is detectable.
    {
        let mut consistent = true;
        let mut detected = 0usize;
        for _ in 0..n_draws {
            let n_contexts = 1 + rng.random_range(0..3u8) as usize;
            let params = random_params(&mut rng, n_contexts);
            let flags = parity_check(&params);
            let any_delta = params
                .context_ids()
                .any(|u| delta_exact(&params, u).expect("nondegenerate").abs() > 1e-9);
            if any_delta && flags.law_enforcement && flags.reporting {
                consistent = false;
            }

            let symmetric = random_symmetric_params(&mut rng, 2);
            let perturbed = inject_asymmetry(&symmetric, &mut rng, 0.05);
            if perturbed
                .context_ids()
                .any(|u| delta_exact(&perturbed, u).expect("nondegenerate").abs() > 1e-15)
            {
                detected += 1;
            }
        }
        let rate = detected as f64 / n_draws as f64;
        rows.push(CheckRow {
            name: "nonzero_delta_implies_parity_violation",
            passed: consistent && rate >= 0.95,
            n_draws,
            worst: 1.0 - rate,
            tolerance: 0.05,
            detail: format!(
                "no draw with nonzero disparity and full parity; injected 0.05 asymmetry detected in {:.1}% of draws",
                100.0 * rate
            ),
        });
    }

    // Scenario limits: residual within the algebraic bound on every
    // draw of the slack sequence, shrinking monotonically along each path.
    for assumption in ScenarioAssumption::ALL {
        let name = match assumption {
            ScenarioAssumption::MostlyInnocent => "mostly_innocent_limit",
            ScenarioAssumption::MostlyCriminal => "mostly_criminal_limit",
            ScenarioAssumption::UnbiasedReportingAndCriminalPolicing => {
                "unbiased_reporting_criminal_policing_limit"
            }
            ScenarioAssumption::UnbiasedReportingAndInnocentPolicing => {
                "unbiased_reporting_innocent_policing_limit"
            }
            ScenarioAssumption::UnbiasedPolicingBothClasses => {
                "unbiased_policing_composition_limit"
            }
        };
        let mut all_ok = true;
        let mut monotone = true;
        let mut worst_ratio: f64 = 0.0;
        for _ in 0..n_draws {
            let base = SlackPathBase::draw(&mut rng, assumption);
            let mut prev = f64::INFINITY;
            for s in SLACK_SEQUENCE {
                let params = slack_path_params(&base, s);
                let u = ContextId::new("u0");
                let check = scenario::verify_proposition(&params, &u, assumption)
                    .expect("path slack stays below the hard ceiling");
                all_ok &= check.ok;
                if check.bound > 0.0 {
                    worst_ratio = worst_ratio.max(check.residual / check.bound);
                }
                if check.residual > prev {
                    monotone = false;
                }
                prev = check.residual;
            }
        }
        rows.push(CheckRow {
            name,
            passed: all_ok && monotone,
            n_draws,
            worst: worst_ratio,
            tolerance: 1.0,
            detail: "residual within bound at slack 0.1/0.01/0.001, monotone along each path"
                .into(),
        });
    }

    // Reporting parity implies both fairness gaps vanish.
    {
        let mut worst: f64 = 0.0;
        for _ in 0..n_draws {
            let n_contexts = 1 + rng.random_range(0..3u8) as usize;
            let mut params = random_params(&mut rng, n_contexts);
            // Symmetrize reporting only; enforcement stays asymmetric.
            let entries = params
                .iter()
                .map(|(id, ctx)| {
                    let mut ctx = ctx.clone();
                    ctx.p_report.min = ctx.p_report.maj;
                    (
                        id.as_str().to_string(),
                        params.weight(id).expect("context present"),
                        ctx,
                    )
                })
                .collect();
            params = assemble(entries);
            for u in params.context_ids() {
                let gaps = fairness_implications(&params, u).expect("nondegenerate");
                worst = worst.max(gaps.predictive_parity_gap);
                worst = worst.max(gaps.group_fairness_gap);
            }
        }
        rows.push(CheckRow {
            name: "reporting_parity_fairness_gaps",
            passed: worst <= EXACT_TOL,
            n_draws,
            worst,
            tolerance: EXACT_TOL,
            detail: "group-blind reporting zeroes predictive-parity and group-fairness gaps"
                .into(),
        });
    }

    rows
}

/// Per-context diagnostics of a user-supplied parameter set.
#[derive(Clone, Debug)]
pub struct ContextCheck {
    pub context: ContextId,
    pub delta: f64,
    pub xi_maj: f64,
    pub xi_min: f64,
    /// Disagreement between the two closed-form disparity routes.
    pub forms_gap: f64,
    /// Disagreement between the closed form and the joint enumeration.
    pub enumeration_gap: f64,
}

pub fn check_params(params: &ScmParams) -> Result<Vec<ContextCheck>> {
    let mut out = Vec::new();
    for (u, ctx) in params.iter() {
        let (direct, decomposed) = delta_exact_forms(params, u)?;
        let brute = enumerate_delta(ctx).ok_or_else(|| {
            crate::error::Error::UndefinedConditional(format!(
                "zero reporting mass in context `{u}`"
            ))
        })?;
        out.push(ContextCheck {
            context: u.clone(),
            delta: delta_exact(params, u)?,
            xi_maj: crate::scm::xi(params, Race::Majority, u)?,
            xi_min: crate::scm::xi(params, Race::Minority, u)?,
            forms_gap: (direct - decomposed).abs(),
            enumeration_gap: (direct - brute).abs(),
        });
    }
    Ok(out)
}

/// Exact decomposition terms of every context, paired with the exact
/// disparity — the per-context ground truth table emitted by simulation
/// runs.
pub fn ground_truth(params: &ScmParams) -> Result<Vec<(ContextId, f64, DecompositionTerms)>> {
    params
        .iter()
        .map(|(u, _)| {
            let terms = DecompositionTerms::exact(params, u)?;
            Ok((u.clone(), delta_exact(params, u)?, terms))
        })
        .collect()
}
