//! Date-keyed record dataset.
//!
//! Each entry holds the standard operations of one calendar day. Every
//! operation carries three per-pack matrices: `V` (max spread, mean spread,
//! flagged cell count), `T` (max spread, mean spread, TCC) and `H` (SOH).
//!
//! On disk a store is a directory with `manifest.json` and one
//! `YYYY-MM-DD.json` file per entry, all in canonical pretty JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::health::HealthResult;
use crate::ingest::OpType;
use crate::thermal::ThermalEvaluation;
use crate::voltage::VoltageEvaluation;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Largest SOH accepted; leaves headroom for estimation error above 1.
pub const MAX_SOH: f64 = 1.5;

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed record file: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("expected {expected} packs, got {found}")]
    PackCount { expected: usize, found: usize },
    #[error("record {date}: {message}")]
    Invariant { date: NaiveDate, message: String },
    #[error("file {path} holds the entry for {found}")]
    FileNameMismatch { path: PathBuf, found: NaiveDate },
    #[error("inverted range: {from} > {to}")]
    InvertedRange { from: NaiveDate, to: NaiveDate },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationRecord {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub op_type: OpType,
    #[serde(rename = "V")]
    pub v: [Vec<f64>; 3],
    #[serde(rename = "T")]
    pub t: [Vec<f64>; 3],
    #[serde(rename = "H")]
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub date: NaiveDate,
    pub operations: Vec<OperationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperationMeta {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub op_type: OpType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    packs: usize,
}

/// Packs per-pack results (in pack order) into one operation's matrices.
pub fn build_operation(
    per_pack: &[(VoltageEvaluation, ThermalEvaluation, HealthResult)],
    meta: OperationMeta,
    packs: usize,
) -> Result<OperationRecord, RecordError> {
    if per_pack.len() != packs {
        return Err(RecordError::PackCount {
            expected: packs,
            found: per_pack.len(),
        });
    }
    let col = |f: &dyn Fn(&(VoltageEvaluation, ThermalEvaluation, HealthResult)) -> f64| -> Vec<f64> {
        per_pack.iter().map(f).collect()
    };
    Ok(OperationRecord {
        start: meta.start,
        end: meta.end,
        op_type: meta.op_type,
        v: [
            col(&|r| r.0.dv_max),
            col(&|r| r.0.dv_mean),
            col(&|r| r.0.inconsistent_count as f64),
        ],
        t: [col(&|r| r.1.dt_max), col(&|r| r.1.dt_mean), col(&|r| r.1.tcc)],
        h: col(&|r| r.2.soh),
    })
}

/// One-operation entry, validated.
pub fn build_entry(
    date: NaiveDate,
    per_pack: &[(VoltageEvaluation, ThermalEvaluation, HealthResult)],
    meta: OperationMeta,
    packs: usize,
) -> Result<RecordEntry, RecordError> {
    let entry = RecordEntry {
        date,
        operations: vec![build_operation(per_pack, meta, packs)?],
    };
    entry.validate(packs)?;
    Ok(entry)
}

impl RecordEntry {
    pub fn validate(&self, packs: usize) -> Result<(), RecordError> {
        let fail = |message: String| {
            Err(RecordError::Invariant {
                date: self.date,
                message,
            })
        };
        if self.operations.is_empty() {
            return fail("entry has no operations".into());
        }
        for (k, op) in self.operations.iter().enumerate() {
            let rows = op.v.iter().chain(op.t.iter()).chain(std::iter::once(&op.h));
            for row in rows {
                if row.len() != packs {
                    return Err(RecordError::PackCount {
                        expected: packs,
                        found: row.len(),
                    });
                }
                if let Some(x) = row.iter().find(|x| !x.is_finite()) {
                    return fail(format!("operation {k}: non-finite value {x}"));
                }
            }
            if op.end < op.start {
                return fail(format!("operation {k}: end before start"));
            }
            for j in 0..packs {
                let (v, t) = (&op.v, &op.t);
                if !(v[1][j] >= 0.0 && v[0][j] >= v[1][j]) {
                    return fail(format!("operation {k}, pack {}: V row 1 < V row 2 or negative", j + 1));
                }
                if !(v[2][j] >= 0.0 && v[2][j].fract() == 0.0) {
                    return fail(format!(
                        "operation {k}, pack {}: V row 3 must be a non-negative integer, got {}",
                        j + 1,
                        v[2][j]
                    ));
                }
                if !(t[1][j] >= 0.0 && t[0][j] >= t[1][j]) {
                    return fail(format!("operation {k}, pack {}: T row 1 < T row 2 or negative", j + 1));
                }
                let h = op.h[j];
                if !(h > 0.0 && h <= MAX_SOH) {
                    return fail(format!("operation {k}, pack {}: SOH {h} outside (0, {MAX_SOH}]", j + 1));
                }
            }
        }
        Ok(())
    }
}

/// Canonical serialization: pretty JSON, newline terminated.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("record types always serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordStore {
    packs: usize,
    entries: BTreeMap<NaiveDate, RecordEntry>,
}

impl RecordStore {
    pub fn new(packs: usize) -> Self {
        Self {
            packs,
            entries: BTreeMap::new(),
        }
    }

    pub fn packs(&self) -> usize {
        self.packs
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &RecordEntry> {
        self.entries.values()
    }

    pub fn get(&self, date: NaiveDate) -> Option<&RecordEntry> {
        self.entries.get(&date)
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.entries.keys().next().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.entries.keys().next_back().copied()
    }

    /// Validates and stores `entry`, replacing any entry with the same date.
    pub fn insert(&mut self, entry: RecordEntry) -> Result<Option<RecordEntry>, RecordError> {
        entry.validate(self.packs)?;
        let replaced = self.entries.insert(entry.date, entry);
        if let Some(old) = &replaced {
            tracing::warn!(date = %old.date, "replacing existing record entry");
        }
        Ok(replaced)
    }

    /// Entries with `from <= date <= to`, ascending.
    pub fn query_range(&self, from: NaiveDate, to: NaiveDate) -> Result<Vec<&RecordEntry>, RecordError> {
        if from > to {
            return Err(RecordError::InvertedRange { from, to });
        }
        Ok(self.entries.range(from..=to).map(|(_, e)| e).collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), RecordError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| io_err(dir, source))?;
        for path in date_files(dir)? {
            let keep = file_date(&path).is_some_and(|d| self.entries.contains_key(&d));
            if !keep {
                fs::remove_file(&path).map_err(|source| io_err(&path, source))?;
            }
        }
        for entry in self.entries.values() {
            write_atomic(&dir.join(format!("{}.json", entry.date)), &to_canonical_json(entry))?;
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            packs: self.packs,
        };
        write_atomic(&dir.join(MANIFEST_FILE), &to_canonical_json(&manifest))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, RecordError> {
        let dir = dir.as_ref();
        let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(RecordError::SchemaVersion {
                found: manifest.schema_version,
            });
        }
        let mut store = Self::new(manifest.packs);
        for path in date_files(dir)? {
            let entry: RecordEntry = read_json(&path)?;
            if file_date(&path) != Some(entry.date) {
                return Err(RecordError::FileNameMismatch { path, found: entry.date });
            }
            entry.validate(store.packs)?;
            store.entries.insert(entry.date, entry);
        }
        Ok(store)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> RecordError {
    RecordError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, RecordError> {
    let text = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
    serde_json::from_str(&text).map_err(|source| RecordError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), RecordError> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, contents).map_err(|source| io_err(&tmp, source))?;
    fs::rename(&tmp, path).map_err(|source| io_err(path, source))
}

fn file_date(path: &Path) -> Option<NaiveDate> {
    let stem = path.file_stem()?.to_str()?;
    NaiveDate::parse_from_str(stem, "%Y-%m-%d").ok()
}

fn date_files(dir: &Path) -> Result<Vec<PathBuf>, RecordError> {
    let mut out = Vec::new();
    for item in fs::read_dir(dir).map_err(|source| io_err(dir, source))? {
        let path = item.map_err(|source| io_err(dir, source))?.path();
        if path.extension().is_some_and(|e| e == "json") && file_date(&path).is_some() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Four significant digits, shortest form.
pub fn format_sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let rounded: f64 = format!("{x:.3e}").parse().expect("valid float text");
    rounded.to_string()
}

const V_LABELS: [&str; 3] = [
    "V_row1 (worst-case spread)",
    "V_row2 (average spread)",
    "V_row3 (bad cells)",
];
const T_LABELS: [&str; 3] = [
    "T_row1 (worst-case temperature spread)",
    "T_row2 (average temperature spread)",
    "T_row3 (thermal consistency coefficient)",
];
const H_LABEL: &str = "H (state of health)";
const TCC_MARK: &str = "†";

/// Deterministic Markdown for a list of entries, one section per date.
pub fn render_markdown<'a>(entries: impl IntoIterator<Item = &'a RecordEntry>) -> String {
    let mut out = String::new();
    let mut flagged_tcc = false;
    let mut any = false;
    for entry in entries {
        any = true;
        let _ = writeln!(out, "## {}\n", entry.date);
        for (k, op) in entry.operations.iter().enumerate() {
            let _ = writeln!(
                out,
                "### Operation {} ({}, {} to {})\n",
                k + 1,
                op.op_type,
                op.start.format("%Y-%m-%dT%H:%M:%SZ"),
                op.end.format("%Y-%m-%dT%H:%M:%SZ")
            );
            let packs = op.h.len();
            let header: Vec<String> = (1..=packs).map(|p| format!("Pack {p}")).collect();
            let _ = writeln!(out, "| Metric | {} |", header.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(packs));
            let mut row = |label: &str, values: &[f64], mark_tcc: bool| {
                let cells: Vec<String> = values
                    .iter()
                    .map(|&x| {
                        let mut s = format_sig4(x);
                        if mark_tcc && !(0.0..=1.0).contains(&x) {
                            s.push_str(TCC_MARK);
                            flagged_tcc = true;
                        }
                        s
                    })
                    .collect();
                let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
            };
            for (label, values) in V_LABELS.iter().zip(&op.v) {
                row(label, values, false);
            }
            for (i, (label, values)) in T_LABELS.iter().zip(&op.t).enumerate() {
                row(label, values, i == 2);
            }
            row(H_LABEL, &op.h, false);
            out.push('\n');
        }
    }
    if !any {
        out.push_str("No records in the requested range.\n");
    }
    if flagged_tcc {
        let _ = writeln!(
            out,
            "{TCC_MARK} Thermal consistency coefficient outside [0, 1]; the value is reported unclamped."
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn op(packs: usize, tcc: f64) -> OperationRecord {
        let start = Utc.with_ymd_and_hms(2025, 1, 1, 8, 0, 0).unwrap();
        OperationRecord {
            start,
            end: start + chrono::Duration::hours(2),
            op_type: OpType::Discharge,
            v: [vec![0.05; packs], vec![0.02; packs], vec![1.0; packs]],
            t: [vec![3.0; packs], vec![1.5; packs], vec![tcc; packs]],
            h: vec![0.97; packs],
        }
    }

    fn entry(date: &str, packs: usize) -> RecordEntry {
        RecordEntry {
            date: date.parse().unwrap(),
            operations: vec![op(packs, 0.4)],
        }
    }

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn eval(dv: (f64, f64, usize), dt: (f64, f64, f64), soh: f64) -> (VoltageEvaluation, ThermalEvaluation, HealthResult) {
        (
            VoltageEvaluation {
                dv_max: dv.0,
                dv_mean: dv.1,
                inconsistent_count: dv.2,
                scores: vec![],
                flagged_cells: vec![],
                rpca_iterations: 0,
                rpca_converged: true,
            },
            ThermalEvaluation {
                dt_max: dt.0,
                dt_mean: dt.1,
                tcc: dt.2,
                skipped_terms: 0,
            },
            HealthResult {
                q_hat: soh * 300.0,
                soh,
                pairs_used: 1,
                cost_at_min: 0.0,
                at_boundary: false,
            },
        )
    }

    fn meta() -> OperationMeta {
        let start = Utc.with_ymd_and_hms(2025, 1, 1, 8, 0, 0).unwrap();
        OperationMeta {
            start,
            end: start + chrono::Duration::hours(2),
            op_type: OpType::Charge,
        }
    }

    #[test]
    fn build_entry_maps_columns() {
        let results = vec![eval((0.1, 0.05, 2), (4.0, 2.0, 0.3), 0.95), eval((0.2, 0.08, 0), (5.0, 2.5, 0.6), 0.9)];
        let e = build_entry(d("2025-01-01"), &results, meta(), 2).unwrap();
        let op = &e.operations[0];
        assert_eq!(op.v, [vec![0.1, 0.2], vec![0.05, 0.08], vec![2.0, 0.0]]);
        assert_eq!(op.t, [vec![4.0, 5.0], vec![2.0, 2.5], vec![0.3, 0.6]]);
        assert_eq!(op.h, vec![0.95, 0.9]);
        assert_eq!(op.op_type, OpType::Charge);
    }

    #[test]
    fn build_entry_checks_pack_count() {
        let results = vec![eval((0.1, 0.05, 2), (4.0, 2.0, 0.3), 0.95); 8];
        assert!(matches!(
            build_entry(d("2025-01-01"), &results, meta(), 9),
            Err(RecordError::PackCount { expected: 9, found: 8 })
        ));
        let uniform = vec![eval((0.0, 0.0, 0), (0.0, 0.0, 0.0), 1.0); 3];
        let e = build_entry(d("2025-01-01"), &uniform, meta(), 3).unwrap();
        assert!(e.operations[0].v.iter().all(|r| r.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut e = entry("2025-01-01", 2);
        e.operations[0].v[2][1] = 2.5;
        assert!(matches!(e.validate(2), Err(RecordError::Invariant { .. })));
        let mut e = entry("2025-01-01", 2);
        e.operations[0].v[1][0] = 0.5;
        assert!(e.validate(2).is_err());
        let mut e = entry("2025-01-01", 2);
        e.operations[0].h[0] = 1.6;
        assert!(e.validate(2).is_err());
        assert!(matches!(entry("2025-01-01", 2).validate(3), Err(RecordError::PackCount { .. })));
    }

    #[test]
    fn round_trip_and_replace() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = RecordStore::new(2);
        for date in ["2025-01-03", "2025-01-01", "2025-01-02"] {
            store.insert(entry(date, 2)).unwrap();
        }
        store.save(dir.path()).unwrap();
        let loaded = RecordStore::load(dir.path()).unwrap();
        assert_eq!(loaded, store);

        let first = fs::read_to_string(dir.path().join("2025-01-01.json")).unwrap();
        assert!(first.ends_with("}\n"));
        assert_eq!(first, to_canonical_json(loaded.get(d("2025-01-01")).unwrap()));

        let replaced = store.insert(entry("2025-01-02", 2)).unwrap();
        assert!(replaced.is_some());
        assert_eq!(store.len(), 3);
    }

    #[test]
    fn load_rejects_non_integer_count_and_bad_version() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = RecordStore::new(2);
        store.insert(entry("2025-01-01", 2)).unwrap();
        store.save(dir.path()).unwrap();

        let path = dir.path().join("2025-01-01.json");
        let mut bad = entry("2025-01-01", 2);
        bad.operations[0].v[2][0] = 2.5;
        fs::write(&path, to_canonical_json(&bad)).unwrap();
        assert!(matches!(RecordStore::load(dir.path()), Err(RecordError::Invariant { .. })));

        fs::write(&path, to_canonical_json(&entry("2025-01-01", 2))).unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{\"schema_version\": 7, \"packs\": 2}\n").unwrap();
        assert!(matches!(RecordStore::load(dir.path()), Err(RecordError::SchemaVersion { found: 7 })));

        fs::write(dir.path().join(MANIFEST_FILE), "not json").unwrap();
        assert!(matches!(RecordStore::load(dir.path()), Err(RecordError::Json { .. })));
    }

    #[test]
    fn query_range_semantics() {
        let mut store = RecordStore::new(1);
        for day in 1..=5 {
            store.insert(entry(&format!("2025-03-{day:02}"), 1)).unwrap();
        }
        let hits = store.query_range(d("2025-03-02"), d("2025-03-03")).unwrap();
        assert_eq!(hits.iter().map(|e| e.date).collect::<Vec<_>>(), vec![d("2025-03-02"), d("2025-03-03")]);
        assert!(store.query_range(d("2025-04-01"), d("2025-04-30")).unwrap().is_empty());
        assert_eq!(store.query_range(d("2025-03-05"), d("2025-03-05")).unwrap().len(), 1);
        assert!(matches!(
            store.query_range(d("2025-03-05"), d("2025-03-01")),
            Err(RecordError::InvertedRange { .. })
        ));
    }

    #[test]
    fn sig4_formatting() {
        assert_eq!(format_sig4(0.0123456), "0.01235");
        assert_eq!(format_sig4(3.0), "3");
        assert_eq!(format_sig4(12346.0), "12350");
        assert_eq!(format_sig4(-2.25), "-2.25");
        assert_eq!(format_sig4(0.0), "0");
    }

    #[test]
    fn markdown_labels_and_determinism() {
        let e = entry("2025-01-01", 2);
        let md = render_markdown([&e]);
        for label in V_LABELS.iter().chain(T_LABELS.iter()) {
            assert!(md.contains(label), "missing {label}");
        }
        assert!(md.contains("## 2025-01-01"));
        assert_eq!(md, render_markdown([&e]));
        assert!(!md.contains(TCC_MARK));

        let hot = RecordEntry {
            date: d("2025-01-02"),
            operations: vec![op(2, 2.25)],
        };
        let md = render_markdown([&hot]);
        assert!(md.contains("2.25†"));
        assert!(md.contains("outside [0, 1]"));
        assert!(render_markdown(std::iter::empty()).contains("No records"));
    }
}
