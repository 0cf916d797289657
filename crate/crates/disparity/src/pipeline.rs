//! End-to-end analysis: files in, report out.

use std::path::Path;

use crate::error::Result;
use crate::estimate::{
    cell_from_counts, delta_hat_guarded, significance_summary, CellEstimate, DisparityResult,
};
use crate::ingest::{
    build_denominators, count_events, load_and_stitch, AnalysisConfig, ForceThreshold,
    LinkedDataset, RejectedRow,
};
use crate::race_infer::TypeMapping;
use crate::report::{AnalysisReport, ExclusionEntry, Provenance, ResultRow, ThresholdSummary};
use crate::scenario::attribute;
use crate::scm::Race;

pub struct AnalysisOutcome {
    pub report: AnalysisReport,
    pub rejects: Vec<RejectedRow>,
}

/// Load the configured mapping override, if any. Relative paths resolve
/// against `config_dir`.
pub fn load_override_mapping(
    config: &AnalysisConfig,
    config_dir: Option<&Path>,
) -> Result<Option<TypeMapping>> {
    let Some(path) = &config.type_mapping_override else {
        return Ok(None);
    };
    let resolved = match config_dir {
        Some(dir) if Path::new(path).is_relative() => dir.join(path),
        _ => Path::new(path).to_path_buf(),
    };
    let text = std::fs::read_to_string(resolved)?;
    Ok(Some(TypeMapping::from_json_str(&text)?))
}

/// Mapping derived from the dataset's own linked pairs. A dataset with
/// no links yields an empty mapping: every unlinked call type ends up
/// flagged unmapped rather than silently imputed.
pub fn derive_mapping(ds: &LinkedDataset) -> TypeMapping {
    let pairs: Vec<(String, String)> = ds
        .linked_pairs()
        .map(|(c, s, _)| (c.call_type.clone(), s.stop_type.clone()))
        .collect();
    if pairs.is_empty() {
        log::warn!(
            "no linked pairs; type mapping is empty and all unlinked calls will be excluded"
        );
        return TypeMapping::default();
    }
    TypeMapping::from_linked_pairs(pairs).expect("pairs checked non-empty")
}

/// Run the full analysis over already-linked data.
pub fn analyze_dataset(
    ds: &LinkedDataset,
    config: &AnalysisConfig,
    mapping: &TypeMapping,
    config_hash: String,
) -> Result<AnalysisReport> {
    let denominators = build_denominators(ds, &config.race_pair, mapping);

    let contexts: Vec<_> = {
        let mut ids: Vec<_> = denominators
            .reported
            .keys()
            .map(|(u, _)| u.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    };

    let mut results = Vec::new();
    let mut summaries = Vec::new();
    let mut n_tests = 0u64;
    for &level in &config.thresholds {
        let threshold = ForceThreshold::new(level)?;
        let events = count_events(ds, &config.race_pair, threshold);
        let mut threshold_results: Vec<(DisparityResult, Vec<_>)> = Vec::new();
        for u in &contexts {
            let cell = |race: Race| -> Option<CellEstimate> {
                let n = *denominators.reported.get(&(u.clone(), race))?;
                let e = events.get(&(u.clone(), race)).copied().unwrap_or(0);
                cell_from_counts(u.clone(), race, n, e as f64).ok()
            };
            let maj = cell(Race::Majority);
            let min = cell(Race::Minority);
            let result = delta_hat_guarded(
                u,
                maj.as_ref(),
                min.as_ref(),
                config.confidence,
                config.min_reported,
            )?;
            if !result.insufficient {
                n_tests += 1;
            }
            let attributions = if result.significant {
                config
                    .assumptions
                    .iter()
                    .map(|&a| attribute(&result, a))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            threshold_results.push((result, attributions));
        }
        let plain: Vec<DisparityResult> =
            threshold_results.iter().map(|(r, _)| r.clone()).collect();
        summaries.push(ThresholdSummary::new(level, &significance_summary(&plain)));
        for (r, attributions) in threshold_results {
            results.push(ResultRow {
                context: r.context.clone(),
                threshold: level,
                n_maj: r.n_maj,
                n_min: r.n_min,
                delta_hat: r.delta_hat,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
                significant: r.significant,
                sign: r.sign,
                insufficient: r.insufficient,
                attributions,
            });
        }
    }

    let inference_exclusions = denominators
        .excluded
        .iter()
        .map(|e| ExclusionEntry {
            context: e.context.clone(),
            call_type: e.call_type.clone(),
            n_calls: e.n_calls,
            reason: match e.reason {
                crate::race_infer::ExclusionReason::Unmapped => "unmapped".into(),
                crate::race_infer::ExclusionReason::NoMatchingStops => {
                    "no_matching_stops".into()
                }
            },
        })
        .collect();

    Ok(AnalysisReport {
        provenance: Provenance {
            tool: "disparity".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash,
            seed: None,
            n_tests,
        },
        dataset: ds.summary.clone(),
        inference_exclusions,
        results,
        summaries,
    })
}

/// Load, stitch and analyze. `config_dir` anchors relative override
/// paths named in the config file.
pub fn run_analysis(
    calls_path: impl AsRef<Path>,
    stops_path: impl AsRef<Path>,
    config: &AnalysisConfig,
    config_dir: Option<&Path>,
    config_hash: String,
) -> Result<AnalysisOutcome> {
    // An override mapping also informs the window join's type
    // compatibility test, so load it before stitching.
    let override_mapping = load_override_mapping(config, config_dir)?;
    let labels = (!config.force_level_labels.is_empty()).then_some(&config.force_level_labels);
    let (ds, rejects) = load_and_stitch(
        calls_path,
        stops_path,
        &config.join,
        labels,
        override_mapping.as_ref(),
    )?;
    let mapping = override_mapping.unwrap_or_else(|| derive_mapping(&ds));
    let report = analyze_dataset(&ds, config, &mapping, config_hash)?;
    Ok(AnalysisOutcome { report, rejects })
}
