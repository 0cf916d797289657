//! Loading call and stop CSVs, stitching call-induced stops, and turning
//! the linked dataset into per-(context, group) estimation cells.
//!
//! Schemas:
//!
//! ```text
//! calls: call_id,timestamp,context_id,call_type,linked_stop_id   (last column optional)
//! stops: stop_id,timestamp,context_id,stop_type,race,force_levels,call_id
//!        force_levels is a semicolon-separated list of levels,       (call_id optional)
//!        numeric or named via the configured level dictionary
//! ```
//!
//! Malformed rows are quarantined with a reason instead of aborting the
//! run; duplicate ids are a hard integrity error. Timestamps are
//! normalized to UTC.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::race_infer::{
    infer_composition, CallTypeCount, CompositionEstimate, ExcludedType, LinkedStopRace,
    TypeMapping,
};
use crate::scenario::ScenarioAssumption;
use crate::scm::{ContextId, Race};

/// One 911-style call for service.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallRecord {
    pub call_id: String,
    pub timestamp: DateTime<Utc>,
    pub context_id: ContextId,
    pub call_type: String,
    pub linked_stop_id: Option<String>,
}

/// One stop with its recorded group label and force levels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StopRecord {
    pub stop_id: String,
    pub timestamp: DateTime<Utc>,
    pub context_id: ContextId,
    pub stop_type: String,
    pub race_label: String,
    /// Ordered force levels observed in the stop; level 0 means no force.
    pub force_levels: Vec<u32>,
    pub call_id: Option<String>,
}

/// Minimum force level that counts as the outcome event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ForceThreshold(pub u32);

impl ForceThreshold {
    pub fn new(level: u32) -> Result<ForceThreshold> {
        if level == 0 {
            return Err(Error::InvalidParams(
                "force threshold must be at least 1".into(),
            ));
        }
        Ok(ForceThreshold(level))
    }
}

/// Outcome assignment: the stop counts as an event when its highest
/// force level reaches the threshold. Monotone non-increasing in the
/// threshold.
pub fn assign_outcome(stop: &StopRecord, threshold: ForceThreshold) -> bool {
    stop.force_levels.iter().copied().max().unwrap_or(0) >= threshold.0
}

/// A quarantined input row.
#[derive(Clone, Debug, Serialize)]
pub struct RejectedRow {
    pub source_name: String,
    /// 1-based data row number (header excluded).
    pub row: u64,
    pub raw: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct ParseOutcome<T> {
    pub records: Vec<T>,
    pub rejects: Vec<RejectedRow>,
}

impl<T> Default for ParseOutcome<T> {
    fn default() -> Self {
        ParseOutcome {
            records: Vec::new(),
            rejects: Vec::new(),
        }
    }
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(naive.and_utc());
        }
    }
    None
}

struct HeaderIndex {
    by_name: HashMap<String, usize>,
}

impl HeaderIndex {
    fn new(headers: &csv::StringRecord) -> HeaderIndex {
        HeaderIndex {
            by_name: headers
                .iter()
                .enumerate()
                .map(|(i, h)| (h.trim().to_string(), i))
                .collect(),
        }
    }

    fn require(&self, name: &str, source_name: &str) -> Result<usize> {
        self.by_name.get(name).copied().ok_or_else(|| Error::Parse {
            source_name: source_name.to_string(),
            row: 0,
            message: format!("missing required column `{name}`"),
        })
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize) -> &'a str {
    record.get(idx).unwrap_or("").trim()
}

/// Parse the calls CSV. Structural CSV errors and bad fields become
/// rejects; a missing header or duplicate call ids fail the whole parse.
pub fn parse_calls_csv(bytes: &[u8], source_name: &str) -> Result<ParseOutcome<CallRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    let idx = HeaderIndex::new(&headers);
    let col_id = idx.require("call_id", source_name)?;
    let col_ts = idx.require("timestamp", source_name)?;
    let col_ctx = idx.require("context_id", source_name)?;
    let col_type = idx.require("call_type", source_name)?;
    let col_link = idx.optional("linked_stop_id");

    let mut out = ParseOutcome::default();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i as u64 + 1;
        let mut reject = |raw: String, reason: String| {
            out.rejects.push(RejectedRow {
                source_name: source_name.to_string(),
                row,
                raw,
                reason,
            });
        };
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                reject(String::new(), format!("unreadable row: {e}"));
                continue;
            }
        };
        let raw = record.iter().collect::<Vec<_>>().join(",");
        let call_id = field(&record, col_id);
        if call_id.is_empty() {
            reject(raw, "empty call_id".into());
            continue;
        }
        let Some(timestamp) = parse_timestamp(field(&record, col_ts)) else {
            reject(raw, format!("bad timestamp `{}`", field(&record, col_ts)));
            continue;
        };
        let context = field(&record, col_ctx);
        if context.is_empty() {
            reject(raw, "empty context_id".into());
            continue;
        }
        if !seen.insert(call_id.to_string()) {
            return Err(Error::Integrity(format!(
                "{source_name}: duplicate call_id `{call_id}` at row {row}"
            )));
        }
        let linked_stop_id = col_link
            .map(|c| field(&record, c))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        out.records.push(CallRecord {
            call_id: call_id.to_string(),
            timestamp,
            context_id: ContextId::new(context),
            call_type: field(&record, col_type).to_string(),
            linked_stop_id,
        });
    }
    Ok(out)
}

/// Parse the stops CSV. Force-level tokens may be numeric or names
/// resolved through `level_labels`.
pub fn parse_stops_csv(
    bytes: &[u8],
    source_name: &str,
    level_labels: Option<&BTreeMap<String, u32>>,
) -> Result<ParseOutcome<StopRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    let idx = HeaderIndex::new(&headers);
    let col_id = idx.require("stop_id", source_name)?;
    let col_ts = idx.require("timestamp", source_name)?;
    let col_ctx = idx.require("context_id", source_name)?;
    let col_type = idx.require("stop_type", source_name)?;
    let col_race = idx.require("race", source_name)?;
    let col_force = idx.require("force_levels", source_name)?;
    let col_call = idx.optional("call_id");

    let mut out = ParseOutcome::default();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i as u64 + 1;
        let mut reject = |raw: String, reason: String| {
            out.rejects.push(RejectedRow {
                source_name: source_name.to_string(),
                row,
                raw,
                reason,
            });
        };
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                reject(String::new(), format!("unreadable row: {e}"));
                continue;
            }
        };
        let raw = record.iter().collect::<Vec<_>>().join(",");
        let stop_id = field(&record, col_id);
        if stop_id.is_empty() {
            reject(raw, "empty stop_id".into());
            continue;
        }
        let Some(timestamp) = parse_timestamp(field(&record, col_ts)) else {
            reject(raw, format!("bad timestamp `{}`", field(&record, col_ts)));
            continue;
        };
        let context = field(&record, col_ctx);
        if context.is_empty() {
            reject(raw, "empty context_id".into());
            continue;
        }
        let force_raw = field(&record, col_force);
        let mut force_levels = Vec::new();
        let mut force_ok = true;
        for token in force_raw.split(';') {
            let token = token.trim();
            if token.is_empty() {
                continue;
            }
            match token.parse::<u32>() {
                Ok(level) => force_levels.push(level),
                Err(_) => match level_labels.and_then(|m| m.get(token)) {
                    Some(level) => force_levels.push(*level),
                    None => {
                        force_ok = false;
                        reject(raw.clone(), format!("unknown force level `{token}`"));
                        break;
                    }
                },
            }
        }
        if !force_ok {
            continue;
        }
        if force_levels.is_empty() {
            reject(raw, "empty force_levels".into());
            continue;
        }
        if !seen.insert(stop_id.to_string()) {
            return Err(Error::Integrity(format!(
                "{source_name}: duplicate stop_id `{stop_id}` at row {row}"
            )));
        }
        out.records.push(StopRecord {
            stop_id: stop_id.to_string(),
            timestamp,
            context_id: ContextId::new(context),
            stop_type: field(&record, col_type).to_string(),
            race_label: field(&record, col_race).to_string(),
            force_levels,
            call_id: col_call
                .map(|c| field(&record, c))
                .filter(|s| !s.is_empty())
                .map(str::to_string),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Stitching
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinStrategy {
    IdOnly,
    WindowOnly,
    IdThenWindow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JoinSpec {
    pub strategy: JoinStrategy,
    /// Fallback window: a stop may be linked to a call in the same
    /// context that precedes it by at most this many minutes.
    pub window_minutes: i64,
}

impl Default for JoinSpec {
    fn default() -> JoinSpec {
        JoinSpec {
            strategy: JoinStrategy::IdThenWindow,
            window_minutes: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkProvenance {
    ById,
    ByWindow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Link {
    pub call_idx: usize,
    pub stop_idx: usize,
    pub provenance: LinkProvenance,
}

/// Per-year and overall call/stop volumes with the two linkage rates:
/// the share of calls that led to a stop and the share of stops induced
/// by a call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearStats {
    pub year: i32,
    pub n_calls: u64,
    pub n_stops: u64,
    pub n_call_induced: u64,
    pub p_stop_given_call: f64,
    pub p_call_given_stop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_calls: u64,
    pub n_stops: u64,
    pub n_call_induced: u64,
    pub p_stop_given_call: f64,
    pub p_call_given_stop: f64,
    pub per_year: Vec<YearStats>,
}

/// Calls and stops with every stop linked to at most one call.
#[derive(Clone, Debug)]
pub struct LinkedDataset {
    pub calls: Vec<CallRecord>,
    pub stops: Vec<StopRecord>,
    pub links: Vec<Link>,
    pub summary: DatasetSummary,
}

impl LinkedDataset {
    pub fn linked_pairs(&self) -> impl Iterator<Item = (&CallRecord, &StopRecord, LinkProvenance)> {
        self.links
            .iter()
            .map(|l| (&self.calls[l.call_idx], &self.stops[l.stop_idx], l.provenance))
    }

    fn linked_call_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.calls.len()];
        for l in &self.links {
            flags[l.call_idx] = true;
        }
        flags
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn summarize(calls: &[CallRecord], stops: &[StopRecord], links: &[Link]) -> DatasetSummary {
    let mut years: BTreeMap<i32, (u64, u64, u64)> = BTreeMap::new();
    for c in calls {
        years.entry(c.timestamp.year()).or_default().0 += 1;
    }
    for s in stops {
        years.entry(s.timestamp.year()).or_default().1 += 1;
    }
    for l in links {
        years.entry(stops[l.stop_idx].timestamp.year()).or_default().2 += 1;
    }
    let per_year = years
        .into_iter()
        .map(|(year, (n_calls, n_stops, n_call_induced))| YearStats {
            year,
            n_calls,
            n_stops,
            n_call_induced,
            p_stop_given_call: ratio(n_call_induced, n_calls),
            p_call_given_stop: ratio(n_call_induced, n_stops),
        })
        .collect();
    let n_call_induced = links.len() as u64;
    DatasetSummary {
        n_calls: calls.len() as u64,
        n_stops: stops.len() as u64,
        n_call_induced,
        p_stop_given_call: ratio(n_call_induced, calls.len() as u64),
        p_call_given_stop: ratio(n_call_induced, stops.len() as u64),
        per_year,
    }
}

/// Link stops to calls. Explicit ids first (call-side, then stop-side),
/// then the context/time-window fallback for whatever strategy allows.
///
/// The window pass walks stops in (timestamp, stop_id) order and links
/// each to the closest preceding unlinked call in the same context
/// within the window, requiring type compatibility when a mapping is
/// available (the one provided, or else the one derived from the id
/// links of this very dataset).
pub fn stitch(
    calls: Vec<CallRecord>,
    stops: Vec<StopRecord>,
    join: &JoinSpec,
    type_hint: Option<&TypeMapping>,
) -> LinkedDataset {
    let call_index: HashMap<&str, usize> = calls
        .iter()
        .enumerate()
        .map(|(i, c)| (c.call_id.as_str(), i))
        .collect();
    let stop_index: HashMap<&str, usize> = stops
        .iter()
        .enumerate()
        .map(|(i, s)| (s.stop_id.as_str(), i))
        .collect();

    let mut call_taken = vec![false; calls.len()];
    let mut stop_taken = vec![false; stops.len()];
    let mut links = Vec::new();

    if join.strategy != JoinStrategy::WindowOnly {
        // Call-side explicit ids, in file order.
        for (ci, call) in calls.iter().enumerate() {
            if let Some(sid) = &call.linked_stop_id {
                if let Some(&si) = stop_index.get(sid.as_str()) {
                    if !call_taken[ci] && !stop_taken[si] {
                        call_taken[ci] = true;
                        stop_taken[si] = true;
                        links.push(Link {
                            call_idx: ci,
                            stop_idx: si,
                            provenance: LinkProvenance::ById,
                        });
                    }
                }
            }
        }
        // Stop-side explicit ids for whatever is still unlinked.
        for (si, stop) in stops.iter().enumerate() {
            if stop_taken[si] {
                continue;
            }
            if let Some(cid) = &stop.call_id {
                if let Some(&ci) = call_index.get(cid.as_str()) {
                    if !call_taken[ci] {
                        call_taken[ci] = true;
                        stop_taken[si] = true;
                        links.push(Link {
                            call_idx: ci,
                            stop_idx: si,
                            provenance: LinkProvenance::ById,
                        });
                    }
                }
            }
        }
    }

    if join.strategy != JoinStrategy::IdOnly {
        // Type compatibility from the caller's mapping, or derived from
        // the id links found above.
        let derived = if type_hint.is_none() && !links.is_empty() {
            TypeMapping::from_linked_pairs(links.iter().map(|l| {
                (
                    calls[l.call_idx].call_type.clone(),
                    stops[l.stop_idx].stop_type.clone(),
                )
            }))
            .ok()
        } else {
            None
        };
        let mapping = type_hint.or(derived.as_ref());
        let compatible = |call: &CallRecord, stop: &StopRecord| match mapping {
            Some(m) => match m.stop_types(&call.call_type) {
                Some(types) => types.contains_key(&stop.stop_type),
                None => true,
            },
            None => true,
        };

        // Unlinked calls per context, sorted by time for window search.
        let mut calls_by_ctx: BTreeMap<&ContextId, Vec<usize>> = BTreeMap::new();
        for (ci, call) in calls.iter().enumerate() {
            if !call_taken[ci] {
                calls_by_ctx.entry(&call.context_id).or_default().push(ci);
            }
        }
        for list in calls_by_ctx.values_mut() {
            list.sort_by(|&a, &b| {
                (calls[a].timestamp, &calls[a].call_id)
                    .cmp(&(calls[b].timestamp, &calls[b].call_id))
            });
        }

        let mut stop_order: Vec<usize> = (0..stops.len()).filter(|&i| !stop_taken[i]).collect();
        stop_order.sort_by(|&a, &b| {
            (stops[a].timestamp, &stops[a].stop_id).cmp(&(stops[b].timestamp, &stops[b].stop_id))
        });

        let window = chrono::Duration::minutes(join.window_minutes);
        for si in stop_order {
            let stop = &stops[si];
            let Some(candidates) = calls_by_ctx.get(&stop.context_id) else {
                continue;
            };
            // Closest preceding call wins; ties broken by call_id.
            let mut best: Option<(chrono::Duration, &str, usize)> = None;
            for &ci in candidates {
                if call_taken[ci] {
                    continue;
                }
                let call = &calls[ci];
                let gap = stop.timestamp - call.timestamp;
                if gap < chrono::Duration::zero() || gap > window {
                    continue;
                }
                if !compatible(call, stop) {
                    continue;
                }
                let key = (gap, call.call_id.as_str(), ci);
                if best.map_or(true, |(g, id, _)| (gap, call.call_id.as_str()) < (g, id)) {
                    best = Some(key);
                }
            }
            if let Some((_, _, ci)) = best {
                call_taken[ci] = true;
                links.push(Link {
                    call_idx: ci,
                    stop_idx: si,
                    provenance: LinkProvenance::ByWindow,
                });
            }
        }
    }

    let summary = summarize(&calls, &stops, &links);
    LinkedDataset {
        calls,
        stops,
        links,
        summary,
    }
}

/// Parse both files and stitch them. Returns the linked dataset plus the
/// quarantined rows from both parses.
pub fn load_and_stitch(
    calls_path: impl AsRef<Path>,
    stops_path: impl AsRef<Path>,
    join: &JoinSpec,
    level_labels: Option<&BTreeMap<String, u32>>,
    type_hint: Option<&TypeMapping>,
) -> Result<(LinkedDataset, Vec<RejectedRow>)> {
    let calls_path = calls_path.as_ref();
    let stops_path = stops_path.as_ref();
    let calls_bytes = std::fs::read(calls_path)?;
    let stops_bytes = std::fs::read(stops_path)?;
    let calls = parse_calls_csv(&calls_bytes, &calls_path.display().to_string())?;
    let stops = parse_stops_csv(&stops_bytes, &stops_path.display().to_string(), level_labels)?;
    let mut rejects = calls.rejects;
    rejects.extend(stops.rejects);
    let linked = stitch(calls.records, stops.records, join, type_hint);
    Ok((linked, rejects))
}

// ---------------------------------------------------------------------------
// Analysis cells
// ---------------------------------------------------------------------------

/// Group labels making up one pairwise analysis; rows with any other
/// label are dropped for the run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RacePairConfig {
    pub majority: Vec<String>,
    pub minority: Vec<String>,
}

impl RacePairConfig {
    pub fn classify(&self, label: &str) -> Option<Race> {
        if self.majority.iter().any(|l| l == label) {
            Some(Race::Majority)
        } else if self.minority.iter().any(|l| l == label) {
            Some(Race::Minority)
        } else {
            None
        }
    }

    fn validate(&self) -> Result<()> {
        if self.majority.is_empty() || self.minority.is_empty() {
            return Err(Error::InvalidParams(
                "race_pair needs at least one label per side".into(),
            ));
        }
        if self
            .majority
            .iter()
            .any(|l| self.minority.iter().any(|m| m == l))
        {
            return Err(Error::InvalidParams(
                "race_pair labels overlap between sides".into(),
            ));
        }
        Ok(())
    }
}

/// Reported-count denominators per (context, group): known groups from
/// linked stops plus imputed groups for unlinked calls.
#[derive(Clone, Debug, Default)]
pub struct DenominatorBuild {
    pub reported: BTreeMap<(ContextId, Race), f64>,
    pub compositions: Vec<CompositionEstimate>,
    pub excluded: Vec<ExcludedType>,
    /// Linked pairs dropped because the stop's group label is outside
    /// the configured pair.
    pub n_dropped_out_of_pair: u64,
}

/// Build denominators once; they do not depend on the force threshold.
pub fn build_denominators(
    ds: &LinkedDataset,
    pair: &RacePairConfig,
    mapping: &TypeMapping,
) -> DenominatorBuild {
    let mut build = DenominatorBuild::default();
    let linked_call = ds.linked_call_flags();

    // Known groups: one reported subject per linked pair, keyed by the
    // call's context. Also collect the per-context linked stops that
    // anchor the imputation.
    let mut stops_by_ctx: BTreeMap<ContextId, Vec<LinkedStopRace>> = BTreeMap::new();
    for (call, stop, _) in ds.linked_pairs() {
        match pair.classify(&stop.race_label) {
            Some(race) => {
                *build
                    .reported
                    .entry((call.context_id.clone(), race))
                    .or_insert(0.0) += 1.0;
                stops_by_ctx
                    .entry(call.context_id.clone())
                    .or_default()
                    .push(LinkedStopRace {
                        stop_type: stop.stop_type.clone(),
                        race,
                    });
            }
            None => build.n_dropped_out_of_pair += 1,
        }
    }

    // Unlinked call volume per (context, call type).
    let mut unlinked: BTreeMap<ContextId, BTreeMap<String, u64>> = BTreeMap::new();
    for (ci, call) in ds.calls.iter().enumerate() {
        if !linked_call[ci] {
            *unlinked
                .entry(call.context_id.clone())
                .or_default()
                .entry(call.call_type.clone())
                .or_default() += 1;
        }
    }

    let empty = Vec::new();
    for (ctx, type_counts) in unlinked {
        let calls: Vec<CallTypeCount> = type_counts
            .into_iter()
            .map(|(call_type, n_calls)| CallTypeCount { call_type, n_calls })
            .collect();
        let stops = stops_by_ctx.get(&ctx).unwrap_or(&empty);
        let outcome = infer_composition(&calls, stops, mapping, &ctx);
        for est in &outcome.estimates {
            for (race, n) in &est.n_by_race {
                *build.reported.entry((ctx.clone(), *race)).or_insert(0.0) += n;
            }
        }
        build.compositions.extend(outcome.estimates);
        build.excluded.extend(outcome.excluded);
    }
    build
}

/// Event numerators at one threshold: linked stops of pair groups whose
/// outcome clears it, keyed by the call's context. Unlinked stops never
/// contribute — only call-induced stops are conditioned on a report.
pub fn count_events(
    ds: &LinkedDataset,
    pair: &RacePairConfig,
    threshold: ForceThreshold,
) -> BTreeMap<(ContextId, Race), u64> {
    let mut events = BTreeMap::new();
    for (call, stop, _) in ds.linked_pairs() {
        if let Some(race) = pair.classify(&stop.race_label) {
            if assign_outcome(stop, threshold) {
                *events.entry((call.context_id.clone(), race)).or_default() += 1;
            }
        }
    }
    events
}

/// Estimation inputs for one threshold.
#[derive(Clone, Debug)]
pub struct AnalysisCells {
    pub threshold: ForceThreshold,
    pub reported: BTreeMap<(ContextId, Race), f64>,
    pub events: BTreeMap<(ContextId, Race), u64>,
    pub excluded: Vec<ExcludedType>,
    pub n_dropped_out_of_pair: u64,
}

/// One-shot combination of [`build_denominators`] and [`count_events`].
pub fn build_analysis_records(
    ds: &LinkedDataset,
    pair: &RacePairConfig,
    mapping: &TypeMapping,
    threshold: ForceThreshold,
) -> AnalysisCells {
    let denominators = build_denominators(ds, pair, mapping);
    let events = count_events(ds, pair, threshold);
    AnalysisCells {
        threshold,
        reported: denominators.reported,
        events,
        excluded: denominators.excluded,
        n_dropped_out_of_pair: denominators.n_dropped_out_of_pair,
    }
}

/// Write quarantined rows with their reasons.
pub fn write_rejects_csv<W: Write>(rejects: &[RejectedRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "row", "raw", "reason"])?;
    for r in rejects {
        w.write_record([
            r.source_name.as_str(),
            &r.row.to_string(),
            r.raw.as_str(),
            r.reason.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Analysis configuration
// ---------------------------------------------------------------------------

fn default_min_reported() -> f64 {
    crate::estimate::DEFAULT_MIN_REPORTED
}

fn default_confidence() -> f64 {
    crate::estimate::DEFAULT_CONFIDENCE
}

fn default_assumptions() -> Vec<ScenarioAssumption> {
    vec![
        ScenarioAssumption::UnbiasedReportingAndCriminalPolicing,
        ScenarioAssumption::UnbiasedReportingAndInnocentPolicing,
        ScenarioAssumption::UnbiasedPolicingBothClasses,
    ]
}

/// Analysis run configuration (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub race_pair: RacePairConfig,
    /// Force thresholds to analyze, each producing its own result set.
    pub thresholds: Vec<u32>,
    /// Optional names for force levels appearing in the stops file.
    #[serde(default)]
    pub force_level_labels: BTreeMap<String, u32>,
    #[serde(default)]
    pub join: JoinSpec,
    #[serde(default = "default_min_reported")]
    pub min_reported: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Regimes to attribute significant results under, side by side.
    #[serde(default = "default_assumptions")]
    pub assumptions: Vec<ScenarioAssumption>,
    /// Path to a hand-authored type mapping that replaces the derived one.
    #[serde(default)]
    pub type_mapping_override: Option<String>,
}

impl AnalysisConfig {
    pub fn from_json_str(s: &str) -> Result<AnalysisConfig> {
        let config: AnalysisConfig = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<AnalysisConfig> {
        let s = std::fs::read_to_string(path)?;
        AnalysisConfig::from_json_str(&s)
    }

    pub fn validate(&self) -> Result<()> {
        self.race_pair.validate()?;
        if self.thresholds.is_empty() {
            return Err(Error::InvalidParams("thresholds must be non-empty".into()));
        }
        for &t in &self.thresholds {
            ForceThreshold::new(t)?;
        }
        if !(0.0 < self.confidence && self.confidence < 1.0) {
            return Err(Error::InvalidParams(format!(
                "confidence {} not in (0, 1)",
                self.confidence
            )));
        }
        if self.min_reported < 0.0 {
            return Err(Error::InvalidParams("min_reported must be >= 0".into()));
        }
        if self.join.window_minutes < 0 {
            return Err(Error::InvalidParams(
                "join.window_minutes must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CALLS: &str = "\
call_id,timestamp,context_id,call_type,linked_stop_id
C1,2019-03-01 10:00:00,P1,noise,S1
C2,2019-03-01 11:00:00,P1,theft,
C3,2019-03-01 12:00:00,P2,noise,
";

    const STOPS: &str = "\
stop_id,timestamp,context_id,stop_type,race,force_levels,call_id
S1,2019-03-01 10:05:00,P1,pedestrian,white,1;3,
S2,2019-03-01 11:20:00,P1,vehicle,black,0,C2
S3,2019-03-02 09:00:00,P2,pedestrian,asian,2,
";

    #[test]
    fn parses_and_links_by_id() {
        let calls = parse_calls_csv(CALLS.as_bytes(), "calls").unwrap();
        let stops = parse_stops_csv(STOPS.as_bytes(), "stops", None).unwrap();
        assert!(calls.rejects.is_empty());
        assert_eq!(calls.records.len(), 3);
        assert_eq!(stops.records.len(), 3);
        let ds = stitch(
            calls.records,
            stops.records,
            &JoinSpec {
                strategy: JoinStrategy::IdOnly,
                window_minutes: 0,
            },
            None,
        );
        assert_eq!(ds.links.len(), 2);
        let pairs: Vec<_> = ds
            .linked_pairs()
            .map(|(c, s, _)| (c.call_id.clone(), s.stop_id.clone()))
            .collect();
        assert!(pairs.contains(&("C1".into(), "S1".into())));
        assert!(pairs.contains(&("C2".into(), "S2".into())));
    }

    #[test]
    fn malformed_rows_are_quarantined() {
        let calls = "call_id,timestamp,context_id,call_type\n\
                     C1,not-a-time,P1,noise\n\
                     C2,2019-01-01 00:00:00,,noise\n\
                     C3,2019-01-01 00:00:00,P1,noise\n";
        let out = parse_calls_csv(calls.as_bytes(), "calls").unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejects.len(), 2);
        assert!(out.rejects[0].reason.contains("bad timestamp"));
        assert!(out.rejects[1].reason.contains("empty context_id"));
    }

    #[test]
    fn duplicate_ids_are_integrity_errors() {
        let calls = "call_id,timestamp,context_id,call_type\n\
                     C1,2019-01-01 00:00:00,P1,noise\n\
                     C1,2019-01-01 01:00:00,P1,noise\n";
        assert!(matches!(
            parse_calls_csv(calls.as_bytes(), "calls"),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn missing_header_is_parse_error() {
        let calls = "id,timestamp,context_id,call_type\nC1,2019-01-01 00:00:00,P1,noise\n";
        assert!(matches!(
            parse_calls_csv(calls.as_bytes(), "calls"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn force_labels_resolve_through_dictionary() {
        let stops = "stop_id,timestamp,context_id,stop_type,race,force_levels\n\
                     S1,2019-01-01 00:00:00,P1,ped,white,handcuff;verbal\n\
                     S2,2019-01-01 00:00:00,P1,ped,white,mystery\n";
        let labels: BTreeMap<String, u32> =
            [("verbal".to_string(), 1), ("handcuff".to_string(), 2)]
                .into_iter()
                .collect();
        let out = parse_stops_csv(stops.as_bytes(), "stops", Some(&labels)).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].force_levels, vec![2, 1]);
        assert_eq!(out.rejects.len(), 1);
    }

    #[test]
    fn outcome_thresholding() {
        let stop = StopRecord {
            stop_id: "S".into(),
            timestamp: Utc::now(),
            context_id: ContextId::new("P"),
            stop_type: "ped".into(),
            race_label: "white".into(),
            force_levels: vec![1, 3],
            call_id: None,
        };
        assert!(assign_outcome(&stop, ForceThreshold(2)));
        let no_force = StopRecord {
            force_levels: vec![0],
            ..stop.clone()
        };
        assert!(!assign_outcome(&no_force, ForceThreshold(1)));
        // Monotone in the threshold.
        let mut prev = true;
        for level in 1..6 {
            let y = assign_outcome(&stop, ForceThreshold(level));
            assert!(prev || !y);
            prev = y;
        }
        assert!(ForceThreshold::new(0).is_err());
    }

    #[test]
    fn rfc3339_timestamps_normalize_to_utc() {
        let a = parse_timestamp("2019-06-01T12:00:00+02:00").unwrap();
        let b = parse_timestamp("2019-06-01 10:00:00").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn window_join_links_nearest_preceding_call() {
        let calls = "call_id,timestamp,context_id,call_type\n\
                     C1,2019-01-01 10:00:00,P1,noise\n\
                     C2,2019-01-01 10:10:00,P1,noise\n\
                     C3,2019-01-01 10:10:00,P2,noise\n";
        let stops = "stop_id,timestamp,context_id,stop_type,race,force_levels\n\
                     S1,2019-01-01 10:15:00,P1,ped,white,1\n";
        let calls = parse_calls_csv(calls.as_bytes(), "calls").unwrap().records;
        let stops = parse_stops_csv(stops.as_bytes(), "stops", None).unwrap().records;
        let ds = stitch(calls, stops, &JoinSpec::default(), None);
        assert_eq!(ds.links.len(), 1);
        let (call, _, prov) = ds.linked_pairs().next().unwrap();
        assert_eq!(call.call_id, "C2");
        assert_eq!(prov, LinkProvenance::ByWindow);
    }

    #[test]
    fn summary_counts_by_year() {
        let calls = "call_id,timestamp,context_id,call_type,linked_stop_id\n\
                     C1,2018-01-01 00:00:00,P1,noise,S1\n\
                     C2,2019-01-01 00:00:00,P1,noise,\n";
        let stops = "stop_id,timestamp,context_id,stop_type,race,force_levels\n\
                     S1,2018-01-01 00:30:00,P1,ped,white,1\n\
                     S2,2019-05-01 00:00:00,P1,ped,white,0\n";
        let calls = parse_calls_csv(calls.as_bytes(), "calls").unwrap().records;
        let stops = parse_stops_csv(stops.as_bytes(), "stops", None).unwrap().records;
        let ds = stitch(
            calls,
            stops,
            &JoinSpec {
                strategy: JoinStrategy::IdOnly,
                window_minutes: 0,
            },
            None,
        );
        assert_eq!(ds.summary.n_calls, 2);
        assert_eq!(ds.summary.n_stops, 2);
        assert_eq!(ds.summary.n_call_induced, 1);
        assert_eq!(ds.summary.p_stop_given_call, 0.5);
        assert_eq!(ds.summary.p_call_given_stop, 0.5);
        assert_eq!(ds.summary.per_year.len(), 2);
        assert_eq!(ds.summary.per_year[0].year, 2018);
        assert_eq!(ds.summary.per_year[0].n_call_induced, 1);
        assert_eq!(ds.summary.per_year[1].n_call_induced, 0);
    }

    fn pair() -> RacePairConfig {
        RacePairConfig {
            majority: vec!["white".into()],
            minority: vec!["black".into()],
        }
    }

    #[test]
    fn analysis_cells_hand_case() {
        // One context: 2 linked stops (one white actioned, one black not),
        // 8 unlinked noise calls imputed from the linked stops' races.
        let calls = "call_id,timestamp,context_id,call_type,linked_stop_id\n\
                     C1,2019-01-01 00:00:00,P1,noise,S1\n\
                     C2,2019-01-01 01:00:00,P1,noise,S2\n\
                     C3,2019-01-01 02:00:00,P1,noise,\n\
                     C4,2019-01-01 03:00:00,P1,noise,\n\
                     C5,2019-01-01 04:00:00,P1,noise,\n\
                     C6,2019-01-01 05:00:00,P1,noise,\n\
                     C7,2019-01-01 06:00:00,P1,noise,\n\
                     C8,2019-01-01 07:00:00,P1,noise,\n\
                     C9,2019-01-01 08:00:00,P1,noise,\n\
                     C10,2019-01-01 09:00:00,P1,noise,\n";
        let stops = "stop_id,timestamp,context_id,stop_type,race,force_levels\n\
                     S1,2019-01-01 00:10:00,P1,ped,white,2\n\
                     S2,2019-01-01 01:10:00,P1,ped,black,0\n\
                     S3,2019-01-01 23:00:00,P1,ped,white,3\n";
        let calls = parse_calls_csv(calls.as_bytes(), "calls").unwrap().records;
        let stops = parse_stops_csv(stops.as_bytes(), "stops", None).unwrap().records;
        let ds = stitch(
            calls,
            stops,
            &JoinSpec {
                strategy: JoinStrategy::IdOnly,
                window_minutes: 0,
            },
            None,
        );
        let mapping = TypeMapping::from_linked_pairs([("noise", "ped")]).unwrap();
        let cells = build_analysis_records(&ds, &pair(), &mapping, ForceThreshold(1));
        let p1 = ContextId::new("P1");
        // Denominators: 1 known + 4 imputed per group (8 unlinked calls
        // split 50/50 by the linked stops' composition).
        assert_eq!(cells.reported[&(p1.clone(), Race::Majority)], 5.0);
        assert_eq!(cells.reported[&(p1.clone(), Race::Minority)], 5.0);
        // Numerators: S1 cleared the threshold; S2 used no force. The
        // unlinked S3 contributes nothing.
        assert_eq!(cells.events[&(p1.clone(), Race::Majority)], 1);
        assert_eq!(cells.events.get(&(p1, Race::Minority)), None);
    }

    #[test]
    fn out_of_pair_links_are_dropped_and_counted() {
        let calls = "call_id,timestamp,context_id,call_type,linked_stop_id\n\
                     C1,2019-01-01 00:00:00,P1,noise,S1\n";
        let stops = "stop_id,timestamp,context_id,stop_type,race,force_levels\n\
                     S1,2019-01-01 00:10:00,P1,ped,asian,2\n";
        let calls = parse_calls_csv(calls.as_bytes(), "calls").unwrap().records;
        let stops = parse_stops_csv(stops.as_bytes(), "stops", None).unwrap().records;
        let ds = stitch(calls, stops, &JoinSpec::default(), None);
        let mapping = TypeMapping::from_linked_pairs([("noise", "ped")]).unwrap();
        let build = build_denominators(&ds, &pair(), &mapping);
        assert!(build.reported.is_empty());
        assert_eq!(build.n_dropped_out_of_pair, 1);
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg = AnalysisConfig::from_json_str(
            r#"{"race_pair": {"majority": ["white"], "minority": ["black"]},
                "thresholds": [1, 2]}"#,
        )
        .unwrap();
        assert_eq!(cfg.min_reported, 30.0);
        assert_eq!(cfg.confidence, 0.95);
        assert_eq!(cfg.join.strategy, JoinStrategy::IdThenWindow);
        assert_eq!(cfg.join.window_minutes, 30);
        assert_eq!(cfg.assumptions.len(), 3);

        assert!(AnalysisConfig::from_json_str(
            r#"{"race_pair": {"majority": ["white"], "minority": ["black"]},
                "thresholds": []}"#,
        )
        .is_err());
        assert!(AnalysisConfig::from_json_str(
            r#"{"race_pair": {"majority": ["white"], "minority": ["white"]},
                "thresholds": [1]}"#,
        )
        .is_err());
    }
}
