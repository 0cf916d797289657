//! Seeded Monte Carlo sampling from an [`ScmParams`].
//!
//! Incidents are drawn in the causal order context → group → criminality
//! → report → stop → action. Sampling is stratified: the number of
//! incidents per context is drawn once from the weight distribution,
//! then each context is filled block by block, every block owning its
//! own counter-derived RNG stream. The output therefore depends only on
//! `(params, seed, n)` — never on how many workers ran the blocks — and
//! is ordered by (context, block).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scm::{ContextId, Criminality, Race, ScmParams, StageQuery};

/// Incidents per RNG block. Blocks are the unit of parallel fan-out.
const BLOCK: u64 = 1 << 16;

/// Stream id reserved for the per-context allocation draw.
const ALLOC_STREAM: u64 = 0;

/// One sampled (or ingested) incident with its stage outcomes.
///
/// Stage implications hold record-wise: `actioned` implies `stopped`
/// implies `reported`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncidentRecord {
    pub context: ContextId,
    pub race: Race,
    pub criminality: Criminality,
    pub reported: bool,
    pub stopped: bool,
    pub actioned: bool,
}

/// What to sample: how many incidents, from which seed, and optionally
/// with the group stage pinned by intervention (incoming edges to the
/// group variable are cut; criminality is still drawn from the context).
#[derive(Clone, Copy, Debug)]
pub struct SimSpec {
    pub n_incidents: u64,
    pub seed: u64,
    pub intervention: Option<Race>,
}

impl SimSpec {
    pub fn new(n_incidents: u64, seed: u64) -> SimSpec {
        SimSpec {
            n_incidents,
            seed,
            intervention: None,
        }
    }

    pub fn with_intervention(mut self, d: Race) -> SimSpec {
        self.intervention = Some(d);
        self
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for a sampling block: context index in the high half,
/// block index in the low half, offset past the allocation stream.
fn block_stream(ctx_idx: u64, block_idx: u64) -> u64 {
    debug_assert!(block_idx < u32::MAX as u64);
    (ctx_idx + 1) << 32 | block_idx
}

/// Split `n` across the contexts according to their weights, using the
/// chain-of-binomials construction so the draw is a single pass.
fn allocate_counts(weights: &[f64], n: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut counts = Vec::with_capacity(weights.len());
    let mut remaining = n;
    let mut weight_left: f64 = weights.iter().sum();
    for (i, &w) in weights.iter().enumerate() {
        if i + 1 == weights.len() {
            counts.push(remaining);
            break;
        }
        let p = if weight_left > 0.0 {
            (w / weight_left).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let k = Binomial::new(remaining, p)
            .expect("clamped probability is valid")
            .sample(rng);
        counts.push(k);
        remaining -= k;
        weight_left -= w;
    }
    counts
}

/// Draw `spec.n_incidents` incidents by ancestral sampling.
///
/// Identical `(params, spec)` always yield a bit-identical sequence.
pub fn sample_incidents(params: &ScmParams, spec: &SimSpec) -> Result<Vec<IncidentRecord>> {
    if spec.n_incidents == 0 {
        return Err(Error::InvalidParams("n_incidents must be at least 1".into()));
    }
    let contexts: Vec<_> = params.iter().collect();
    let weights: Vec<f64> = contexts
        .iter()
        .map(|(id, _)| params.weight(id).expect("context present"))
        .collect();

    let mut alloc_rng = stream_rng(spec.seed, ALLOC_STREAM);
    let counts = allocate_counts(&weights, spec.n_incidents, &mut alloc_rng);

    // One task per (context, block), in output order.
    let mut tasks = Vec::new();
    for (ctx_idx, ((id, ctx), &count)) in contexts.iter().zip(&counts).enumerate() {
        let mut done = 0;
        let mut block_idx = 0;
        while done < count {
            let len = BLOCK.min(count - done);
            tasks.push((ctx_idx as u64, block_idx, (*id).clone(), *ctx, len));
            done += len;
            block_idx += 1;
        }
    }

    let blocks: Vec<Vec<IncidentRecord>> = tasks
        .into_par_iter()
        .map(|(ctx_idx, block_idx, id, ctx, len)| {
            let mut rng = stream_rng(spec.seed, block_stream(ctx_idx, block_idx));
            let mut out = Vec::with_capacity(len as usize);
            for _ in 0..len {
                let race = match spec.intervention {
                    Some(d) => d,
                    None => {
                        if rng.random::<f64>() < ctx.p_minority {
                            Race::Minority
                        } else {
                            Race::Majority
                        }
                    }
                };
                let criminality =
                    Criminality::from_flag(rng.random::<f64>() < ctx.p_crime);
                let i = criminality.index();
                let reported = rng.random::<f64>() < ctx.p_report.get(race)[i];
                let stopped = reported && rng.random::<f64>() < ctx.p_stop.get(race)[i];
                let actioned = stopped && rng.random::<f64>() < ctx.p_action.get(race)[i];
                out.push(IncidentRecord {
                    context: id.clone(),
                    race,
                    criminality,
                    reported,
                    stopped,
                    actioned,
                });
            }
            out
        })
        .collect();

    Ok(blocks.into_iter().flatten().collect())
}

/// Empirical frequency estimate of P(event | condition).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CondEstimate {
    pub p: f64,
    pub n_condition: u64,
    pub n_event: u64,
}

impl CondEstimate {
    /// Binomial standard error of the estimate itself.
    pub fn standard_error(&self) -> f64 {
        (self.p * (1.0 - self.p) / self.n_condition as f64).sqrt()
    }
}

/// Count-based conditional probability over a record set. Errors if the
/// condition is never satisfied.
pub fn empirical_conditional<E, C>(
    records: &[IncidentRecord],
    event: E,
    condition: C,
) -> Result<CondEstimate>
where
    E: Fn(&IncidentRecord) -> bool,
    C: Fn(&IncidentRecord) -> bool,
{
    let mut n_condition = 0;
    let mut n_event = 0;
    for r in records {
        if condition(r) {
            n_condition += 1;
            if event(r) {
                n_event += 1;
            }
        }
    }
    if n_condition == 0 {
        return Err(Error::UndefinedConditional(
            "conditioning event never satisfied".into(),
        ));
    }
    Ok(CondEstimate {
        p: n_event as f64 / n_condition as f64,
        n_condition,
        n_event,
    })
}

/// Empirical P(stopped and actioned | reported) for the cell described
/// by `query`; a missing criminality marginalizes over it.
pub fn action_rate(records: &[IncidentRecord], query: &StageQuery) -> Result<CondEstimate> {
    empirical_conditional(
        records,
        |r| r.stopped && r.actioned,
        |r| {
            r.reported
                && r.context == query.context
                && r.race == query.race
                && query.criminality.map_or(true, |c| r.criminality == c)
        },
    )
}

/// Dump incidents as CSV: one row per incident, booleans as 0/1.
pub fn write_incidents_csv<W: Write>(records: &[IncidentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "context_id",
        "race",
        "criminality",
        "reported",
        "stopped",
        "actioned",
    ])?;
    let bit = |b: bool| if b { "1" } else { "0" };
    for r in records {
        w.write_record([
            r.context.as_str(),
            &r.race.to_string(),
            bit(r.criminality == Criminality::Criminal),
            bit(r.reported),
            bit(r.stopped),
            bit(r.actioned),
        ])?;
    }
    w.flush()?;
    Ok(())
}
