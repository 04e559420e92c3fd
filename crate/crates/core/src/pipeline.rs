//! End-to-end evaluation: CSV directory in, record store out.
//!
//! Operations of the lowest-numbered pack act as the reference timeline.
//! Every other pack contributes the operation overlapping the reference one
//! the most. An operation enters the store only when every pack's matching
//! operation is standard and all three evaluations succeed; anything else is
//! skipped with a diagnostic line in the report.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::health::{estimate_operation_health, HealthError, HealthParams, HealthResult};
use crate::ingest::{self, CleanParams, CleanReport, IngestError, OperationSegment, RawChannelTable, SegmentParams};
use crate::par::{self, ExecMode};
use crate::records::{build_operation, OperationMeta, RecordEntry, RecordError, RecordStore};
use crate::select::{decide, Decision, SelectionParams};
use crate::thermal::{evaluate_pack_thermal, ThermalError, ThermalEvaluation};
use crate::voltage::{evaluate_pack_voltage, VoltageError, VoltageEvaluation, VoltageParams};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Voltage(#[from] VoltageError),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Health(#[from] HealthError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("no packs found in input")]
    NoPacks,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub clean: CleanParams,
    pub segment: SegmentParams,
    pub selection: SelectionParams,
    pub voltage: VoltageParams,
    pub health: HealthParams,
    pub exec: ExecMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperationEvaluation {
    pub voltage: VoltageEvaluation,
    pub thermal: ThermalEvaluation,
    pub health: HealthResult,
}

pub fn evaluate_operation(op: &OperationSegment, params: &PipelineParams) -> Result<OperationEvaluation, PipelineError> {
    Ok(OperationEvaluation {
        voltage: evaluate_pack_voltage(op.voltages(), &params.voltage)?,
        thermal: evaluate_pack_thermal(op.temps())?,
        health: estimate_operation_health(op, &params.health)?,
    })
}

/// Selection decision for one operation plus, when accepted, its evaluation.
#[derive(Debug, Serialize)]
pub struct OperationReport {
    pub pack_id: u32,
    pub start: String,
    pub end: String,
    pub op_type: ingest::OpType,
    pub decision: Decision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<OperationEvaluation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn evaluate_operations(ops: &[OperationSegment], params: &PipelineParams) -> Vec<OperationReport> {
    par::map(params.exec, ops, |op| {
        let decision = decide(op, &params.selection);
        let (evaluation, error) = if decision.accepted() {
            match evaluate_operation(op, params) {
                Ok(e) => (Some(e), None),
                Err(e) => (None, Some(e.to_string())),
            }
        } else {
            (None, None)
        };
        OperationReport {
            pack_id: op.pack_id(),
            start: op.start().to_rfc3339(),
            end: op.end().to_rfc3339(),
            op_type: op.op_type(),
            decision,
            evaluation,
            error,
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildReport {
    pub packs: Vec<u32>,
    pub clean: CleanReport,
    pub operations_found: usize,
    pub operations_recorded: usize,
    pub dates: usize,
    pub skipped: Vec<String>,
    pub ingest_diagnostics: usize,
}

/// Cleans, segments, aligns and evaluates a loaded table.
pub fn build_records(raw: &RawChannelTable, params: &PipelineParams) -> Result<(RecordStore, BuildReport), PipelineError> {
    let (table, clean_report) = ingest::clean(raw, &params.clean)?;
    let pack_ids: Vec<u32> = table.packs.keys().copied().collect();
    let Some(&reference) = pack_ids.first() else {
        return Err(PipelineError::NoPacks);
    };
    let mut by_pack: BTreeMap<u32, Vec<OperationSegment>> = pack_ids.iter().map(|&p| (p, Vec::new())).collect();
    for op in ingest::segment_operations(&table, &params.segment) {
        by_pack.get_mut(&op.pack_id()).expect("pack listed").push(op);
    }

    let mut report = BuildReport {
        packs: pack_ids.clone(),
        clean: clean_report,
        operations_found: by_pack[&reference].len(),
        ingest_diagnostics: table.diagnostics.len(),
        ..Default::default()
    };

    // Match every reference operation across packs.
    let mut groups: Vec<Vec<&OperationSegment>> = Vec::new();
    for ref_op in &by_pack[&reference] {
        let mut group = vec![ref_op];
        let mut missing = Vec::new();
        for &p in &pack_ids[1..] {
            match best_overlap(ref_op, &by_pack[&p]) {
                Some(op) if op.op_type() == ref_op.op_type() => group.push(op),
                _ => missing.push(p),
            }
        }
        if missing.is_empty() {
            groups.push(group);
        } else {
            report
                .skipped
                .push(format!("{}: no matching operation in pack(s) {missing:?}", label(ref_op)));
        }
    }

    let units: Vec<&OperationSegment> = groups.iter().flatten().copied().collect();
    let outcomes = par::map(params.exec, &units, |op| {
        let decision = decide(op, &params.selection);
        if !decision.accepted() {
            return Err(format!("pack {} not standard ({:?})", op.pack_id(), decision.rejected.expect("rejected")));
        }
        evaluate_operation(op, params).map_err(|e| format!("pack {}: {e}", op.pack_id()))
    });

    let mut per_date: BTreeMap<NaiveDate, RecordEntry> = BTreeMap::new();
    let mut offset = 0;
    for group in &groups {
        let results = &outcomes[offset..offset + group.len()];
        offset += group.len();
        let ref_op = group[0];
        let failures: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
        if !failures.is_empty() {
            let reasons: Vec<&str> = failures.iter().map(|s| s.as_str()).collect();
            report.skipped.push(format!("{}: {}", label(ref_op), reasons.join("; ")));
            continue;
        }
        let per_pack: Vec<_> = results
            .iter()
            .map(|r| {
                let e = r.as_ref().expect("checked");
                (e.voltage.clone(), e.thermal.clone(), e.health.clone())
            })
            .collect();
        let meta = OperationMeta {
            start: ref_op.start(),
            end: ref_op.end(),
            op_type: ref_op.op_type(),
        };
        let record = build_operation(&per_pack, meta, pack_ids.len())?;
        let date = ref_op.start().date_naive();
        per_date
            .entry(date)
            .or_insert_with(|| RecordEntry {
                date,
                operations: Vec::new(),
            })
            .operations
            .push(record);
        report.operations_recorded += 1;
    }

    let mut store = RecordStore::new(pack_ids.len());
    for (_, entry) in per_date {
        if let Err(e) = store.insert(entry) {
            report.skipped.push(e.to_string());
        }
    }
    report.dates = store.len();
    for line in &report.skipped {
        tracing::info!("skipped: {line}");
    }
    Ok((store, report))
}

pub fn build_records_from_dir(dir: impl AsRef<Path>, params: &PipelineParams) -> Result<(RecordStore, BuildReport), PipelineError> {
    let raw = ingest::load_dir(dir)?;
    build_records(&raw, params)
}

fn label(op: &OperationSegment) -> String {
    format!("{} {}", op.op_type(), op.start().format("%Y-%m-%dT%H:%M:%SZ"))
}

fn best_overlap<'a>(target: &OperationSegment, candidates: &'a [OperationSegment]) -> Option<&'a OperationSegment> {
    let (t0, t1) = bounds(target);
    candidates
        .iter()
        .map(|c| {
            let (c0, c1) = bounds(c);
            (c, t1.min(c1) - t0.max(c0))
        })
        .filter(|(_, overlap)| *overlap > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(c, _)| c)
}

fn bounds(op: &OperationSegment) -> (f64, f64) {
    let t = op.timestamps();
    (t[0], t[t.len() - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{dataset_series, DatasetSpec};

    fn table(spec: &DatasetSpec) -> RawChannelTable {
        let mut t = RawChannelTable::default();
        for p in 1..=spec.packs {
            t.packs.insert(p, dataset_series(spec, p));
        }
        t
    }

    #[test]
    fn synthetic_dataset_builds_full_store() {
        let spec = DatasetSpec {
            packs: 3,
            days: 2,
            ..Default::default()
        };
        let (store, report) = build_records(&table(&spec), &PipelineParams::default()).unwrap();
        assert_eq!(report.operations_found, 4);
        assert_eq!(report.operations_recorded, 4, "{:?}", report.skipped);
        assert_eq!(store.len(), 2);
        for entry in store.entries() {
            assert_eq!(entry.operations.len(), 2);
            for op in &entry.operations {
                assert!(op.h.iter().all(|h| (0.8..1.05).contains(h)), "{:?}", op.h);
            }
        }
    }

    #[test]
    fn missing_pack_operation_is_skipped() {
        let spec = DatasetSpec {
            packs: 2,
            days: 1,
            ..Default::default()
        };
        let mut t = table(&spec);
        // Drop pack 2's afternoon charge.
        let cutoff = t.packs[&2].rows.iter().find(|r| r.current.unwrap() < -5.0).unwrap().timestamp;
        t.packs.get_mut(&2).unwrap().rows.retain(|r| r.timestamp < cutoff - 600.0);
        let (store, report) = build_records(&t, &PipelineParams::default()).unwrap();
        assert_eq!(report.operations_recorded, 1);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].contains("no matching operation"));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn exec_modes_agree() {
        let spec = DatasetSpec {
            packs: 2,
            days: 1,
            ..Default::default()
        };
        let seq = PipelineParams {
            exec: ExecMode::Sequential,
            ..Default::default()
        };
        let (a, _) = build_records(&table(&spec), &seq).unwrap();
        let (b, _) = build_records(&table(&spec), &PipelineParams::default()).unwrap();
        assert_eq!(a, b);
    }
}
