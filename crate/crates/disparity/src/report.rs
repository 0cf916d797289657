//! Analysis report assembly and deterministic emission.
//!
//! Serialization is byte-stable: struct fields emit in declaration
//! order, collections are sorted, and every float is rounded to six
//! significant digits before writing. Identical inputs therefore
//! produce identical bytes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimate::{Sign, SignificanceSummary};
use crate::ingest::DatasetSummary;
use crate::scenario::Attribution;
use crate::scm::ContextId;

/// Significant digits kept in emitted artifacts.
pub const EMIT_SIG_DIGITS: u32 = 6;

/// Round to `digits` significant digits (not decimal places).
pub fn round_sig(x: f64, digits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits as i32 - 1 - magnitude);
    (x * factor).round() / factor
}

fn r6(x: f64) -> f64 {
    round_sig(x, EMIT_SIG_DIGITS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    /// Seed used to generate the inputs, when known (simulation runs);
    /// plain file analysis carries none.
    pub seed: Option<u64>,
    /// Number of hypothesis tests behind the report. No multiplicity
    /// correction is applied; consumers may apply their own.
    pub n_tests: u64,
}

/// One (context, threshold) test with its attributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub context: ContextId,
    pub threshold: u32,
    pub n_maj: f64,
    pub n_min: f64,
    pub delta_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
    pub sign: Sign,
    pub insufficient: bool,
    pub attributions: Vec<Attribution>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub threshold: u32,
    pub n_contexts: u64,
    pub n_insufficient: u64,
    pub frac_negative: Option<f64>,
    pub frac_positive: Option<f64>,
    pub frac_null: Option<f64>,
}

impl ThresholdSummary {
    pub fn new(threshold: u32, s: &SignificanceSummary) -> ThresholdSummary {
        ThresholdSummary {
            threshold,
            n_contexts: s.n_contexts,
            n_insufficient: s.n_insufficient,
            frac_negative: s.frac_negative,
            frac_positive: s.frac_positive,
            frac_null: s.frac_null,
        }
    }
}

/// A call type excluded from imputation in one context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExclusionEntry {
    pub context: ContextId,
    pub call_type: String,
    pub n_calls: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub provenance: Provenance,
    pub dataset: DatasetSummary,
    pub inference_exclusions: Vec<ExclusionEntry>,
    pub results: Vec<ResultRow>,
    pub summaries: Vec<ThresholdSummary>,
}

impl AnalysisReport {
    pub fn from_json_str(s: &str) -> Result<AnalysisReport> {
        Ok(serde_json::from_str(s)?)
    }

    /// Copy with every float rounded for emission.
    fn rounded(&self) -> AnalysisReport {
        let mut out = self.clone();
        let round_year = |p: &mut crate::ingest::YearStats| {
            p.p_stop_given_call = r6(p.p_stop_given_call);
            p.p_call_given_stop = r6(p.p_call_given_stop);
        };
        out.dataset.p_stop_given_call = r6(out.dataset.p_stop_given_call);
        out.dataset.p_call_given_stop = r6(out.dataset.p_call_given_stop);
        out.dataset.per_year.iter_mut().for_each(round_year);
        for r in &mut out.results {
            r.n_maj = r6(r.n_maj);
            r.n_min = r6(r.n_min);
            r.delta_hat = r6(r.delta_hat);
            r.ci_low = r6(r.ci_low);
            r.ci_high = r6(r.ci_high);
            for a in &mut r.attributions {
                a.limit_value = r6(a.limit_value);
            }
        }
        for s in &mut out.summaries {
            s.frac_negative = s.frac_negative.map(r6);
            s.frac_positive = s.frac_positive.map(r6);
            s.frac_null = s.frac_null.map(r6);
        }
        out
    }

    /// Deterministic JSON emission.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.rounded()).expect("report serialization cannot fail")
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{}", r6(x))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// One row per (context, threshold) test.
pub fn write_results_csv<W: Write>(report: &AnalysisReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "context",
        "threshold",
        "n_maj",
        "n_min",
        "delta_hat",
        "ci_low",
        "ci_high",
        "significant",
        "sign",
        "insufficient",
    ])?;
    for r in &report.results {
        let sign = match r.sign {
            Sign::Negative => "negative",
            Sign::Zero => "zero",
            Sign::Positive => "positive",
        };
        w.write_record([
            r.context.as_str(),
            &r.threshold.to_string(),
            &fmt_f64(r.n_maj),
            &fmt_f64(r.n_min),
            &fmt_f64(r.delta_hat),
            &fmt_f64(r.ci_low),
            &fmt_f64(r.ci_high),
            if r.significant { "1" } else { "0" },
            sign,
            if r.insufficient { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready significance fractions, one row per threshold.
///
/// The null fraction is emitted as one minus the rounded significant
/// fractions so the three columns re-sum to one despite the 6-digit
/// rounding.
pub fn write_significance_csv<W: Write>(report: &AnalysisReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "threshold",
        "n_contexts",
        "n_insufficient",
        "frac_negative",
        "frac_positive",
        "frac_null",
    ])?;
    for s in &report.summaries {
        let frac_null = match (s.frac_negative, s.frac_positive, s.frac_null) {
            (Some(neg), Some(pos), Some(_)) => Some(r6(1.0 - r6(neg) - r6(pos))),
            _ => None,
        };
        w.write_record([
            s.threshold.to_string(),
            s.n_contexts.to_string(),
            s.n_insufficient.to_string(),
            fmt_opt(s.frac_negative),
            fmt_opt(s.frac_positive),
            fmt_opt(frac_null),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{CriminalityClass, ScenarioAssumption, Stage};
    use crate::scm::Race;

    fn sample_report() -> AnalysisReport {
        AnalysisReport {
            provenance: Provenance {
                tool: "disparity".into(),
                version: "0.0.0".into(),
                config_hash: "abc".into(),
                seed: None,
                n_tests: 3,
            },
            dataset: DatasetSummary {
                n_calls: 1000,
                n_stops: 100,
                n_call_induced: 60,
                p_stop_given_call: 0.06,
                p_call_given_stop: 0.6,
                per_year: vec![],
            },
            inference_exclusions: vec![ExclusionEntry {
                context: ContextId::new("P9"),
                call_type: "odd".into(),
                n_calls: 4,
                reason: "unmapped".into(),
            }],
            results: vec![ResultRow {
                context: ContextId::new("P1"),
                threshold: 1,
                n_maj: 512.0,
                n_min: 488.123456789,
                delta_hat: -0.0612345678,
                ci_low: -0.0912345678,
                ci_high: -0.0312345678,
                significant: true,
                sign: Sign::Negative,
                insufficient: false,
                attributions: vec![Attribution {
                    assumption: ScenarioAssumption::UnbiasedReportingAndCriminalPolicing,
                    stage: Stage::Policing,
                    against_race: Race::Minority,
                    criminality_class: CriminalityClass::Innocents,
                    limit_value: -0.0612345678,
                    explanation: "x".into(),
                }],
            }],
            summaries: vec![ThresholdSummary {
                threshold: 1,
                n_contexts: 3,
                n_insufficient: 0,
                frac_negative: Some(1.0 / 3.0),
                frac_positive: Some(1.0 / 3.0),
                frac_null: Some(1.0 / 3.0),
            }],
        }
    }

    #[test]
    fn round_sig_cases() {
        assert_eq!(round_sig(0.0612345678, 6), 0.0612346);
        assert_eq!(round_sig(123456789.0, 6), 123457000.0);
        assert_eq!(round_sig(-0.000123456789, 6), -0.000123457);
        assert_eq!(round_sig(0.0, 6), 0.0);
        assert_eq!(round_sig(1.0, 6), 1.0);
    }

    #[test]
    fn emission_is_deterministic() {
        let report = sample_report();
        assert_eq!(report.to_json_string(), report.to_json_string());
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_results_csv(&report, &mut a).unwrap();
        write_results_csv(&report, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_roundtrip() {
        let report = sample_report();
        let parsed = AnalysisReport::from_json_str(&report.to_json_string()).unwrap();
        assert_eq!(parsed.results[0].sign, Sign::Negative);
        assert_eq!(parsed.results[0].attributions.len(), 1);
        assert_eq!(parsed.provenance.n_tests, 3);
    }

    #[test]
    fn significance_fractions_resum_to_one() {
        let report = sample_report();
        let mut buf = Vec::new();
        write_significance_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        let cols: Vec<&str> = row.split(',').collect();
        let total: f64 = cols[3..6]
            .iter()
            .map(|c| c.parse::<f64>().unwrap())
            .sum();
        assert!(
            (total - 1.0).abs() <= 1e-9,
            "fractions sum to {total} in row `{row}`"
        );
    }

    #[test]
    fn empty_report_is_valid() {
        let mut report = sample_report();
        report.results.clear();
        report.summaries = vec![ThresholdSummary {
            threshold: 1,
            n_contexts: 0,
            n_insufficient: 2,
            frac_negative: None,
            frac_positive: None,
            frac_null: None,
        }];
        let json = report.to_json_string();
        let parsed = AnalysisReport::from_json_str(&json).unwrap();
        assert_eq!(parsed.summaries[0].n_insufficient, 2);
        let mut buf = Vec::new();
        write_significance_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",,,"));
    }
}
