//! Seeded synthetic data: low-rank test matrices, pack operations with known
//! deviant cells and capacity, and whole multi-pack CSV datasets.
//!
//! Used by the test suites, the benches and the `demo-data` command. Every
//! generator is deterministic in its seed.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveTime};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::health::CapacityPair;
use crate::ingest::{write_csv, IngestError, OpType, OperationSegment, PackSeries, Sample};
use crate::records::{OperationRecord, RecordEntry, RecordStore};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `rank`-r Gaussian factor product and a sparse corruption matrix with
/// `round(frac·n·m)` entries of `±magnitude` at distinct random positions.
pub fn low_rank_plus_sparse(
    n: usize,
    m: usize,
    rank: usize,
    frac: f64,
    magnitude: f64,
    seed: u64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut r = rng(seed);
    let u = DMatrix::from_fn(n, rank, |_, _| normal(&mut r));
    let v = DMatrix::from_fn(rank, m, |_, _| normal(&mut r));
    let low = u * v;
    let mut sparse = DMatrix::zeros(n, m);
    let count = (frac * (n * m) as f64).round() as usize;
    let mut cells: Vec<usize> = (0..n * m).collect();
    for k in 0..count {
        let pick = r.random_range(k..cells.len());
        cells.swap(k, pick);
        let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
        sparse[(cells[k] % n, cells[k] / n)] = sign * magnitude;
    }
    (low, sparse)
}

/// Open-circuit voltage of an LFP-like cell as a function of SOC.
pub fn ocv(soc: f64) -> f64 {
    3.0 + 0.25 * soc + 0.1 * soc * soc
}

/// Description of one synthetic constant-current operation.
#[derive(Debug, Clone, PartialEq)]
pub struct OpSpec {
    pub pack_id: u32,
    pub start_s: f64,
    pub dt_s: f64,
    /// Length of the flat part, seconds.
    pub flat_s: f64,
    /// Linear ramp at each end, seconds.
    pub ramp_s: f64,
    /// Flat current, discharge positive.
    pub current_a: f64,
    pub current_noise_a: f64,
    pub capacity_ah: f64,
    pub soc0: f64,
    pub cells: usize,
    pub sensors: usize,
    /// Spread of the per-cell static voltage offsets, volts.
    pub cell_offset_std_v: f64,
    pub voltage_noise_v: f64,
    /// `(cell index, extra offset in volts)`.
    pub deviants: Vec<(usize, f64)>,
    /// Temperature rise per hour per 100 A, °C.
    pub heating_c_per_h: f64,
    pub seed: u64,
}

impl Default for OpSpec {
    fn default() -> Self {
        Self {
            pack_id: 1,
            start_s: 1_735_718_400.0, // 2025-01-01T08:00:00Z
            dt_s: 10.0,
            flat_s: 6000.0,
            ramp_s: 300.0,
            current_a: 120.0,
            current_noise_a: 1.0,
            capacity_ah: 300.0,
            soc0: 0.9,
            cells: 16,
            sensors: 4,
            cell_offset_std_v: 0.003,
            voltage_noise_v: 0.001,
            deviants: Vec::new(),
            heating_c_per_h: 4.0,
            seed: 1,
        }
    }
}

/// Raw samples for one operation, current below 1 A at both ends.
pub fn operation_samples(spec: &OpSpec) -> Vec<Sample> {
    let mut r = rng(spec.seed);
    let offsets: Vec<f64> = (0..spec.cells)
        .map(|j| {
            let extra: f64 = spec.deviants.iter().filter(|(c, _)| *c == j).map(|(_, o)| o).sum();
            spec.cell_offset_std_v * normal(&mut r) + extra
        })
        .collect();
    let resistance: Vec<f64> = (0..spec.cells).map(|_| 0.0005 * (1.0 + 0.05 * normal(&mut r))).collect();
    let sensor_gain: Vec<f64> = (0..spec.sensors).map(|k| 1.0 + 0.15 * k as f64 / spec.sensors.max(1) as f64).collect();

    let total = spec.flat_s + 2.0 * spec.ramp_s;
    let steps = (total / spec.dt_s).round() as usize;
    let mut soc = spec.soc0;
    let mut heat = 0.0;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * spec.dt_s;
        let envelope = if t < spec.ramp_s {
            t / spec.ramp_s
        } else if t > total - spec.ramp_s {
            (total - t) / spec.ramp_s
        } else {
            1.0
        };
        let noise = if envelope == 1.0 { spec.current_noise_a * normal(&mut r) } else { 0.0 };
        let current = spec.current_a * envelope.max(0.0) + noise;
        let voltages = (0..spec.cells)
            .map(|j| Some(ocv(soc) - current * resistance[j] + offsets[j] + spec.voltage_noise_v * normal(&mut r)))
            .collect();
        let temps = sensor_gain
            .iter()
            .map(|g| Some(25.0 + heat * g + 0.05 * normal(&mut r)))
            .collect();
        out.push(Sample {
            timestamp: spec.start_s + t,
            current: Some(current),
            soc: Some(soc),
            voltages,
            temps,
        });
        soc -= current * spec.dt_s / 3600.0 / spec.capacity_ah;
        heat += spec.heating_c_per_h * current.abs() / 100.0 * spec.dt_s / 3600.0;
    }
    out
}

/// The active part (|I| ≥ 5 A) of [`operation_samples`] as a segment.
pub fn operation(spec: &OpSpec) -> OperationSegment {
    let rows: Vec<Sample> = operation_samples(spec)
        .into_iter()
        .filter(|s| s.current.is_some_and(|i| i.abs() >= 5.0))
        .collect();
    segment_from_samples(spec.pack_id, &rows)
}

pub fn segment_from_samples(pack_id: u32, rows: &[Sample]) -> OperationSegment {
    let n = rows.len();
    let cells = rows[0].voltages.len();
    let sensors = rows[0].temps.len();
    OperationSegment::new(
        pack_id,
        rows.iter().map(|s| s.timestamp).collect(),
        DMatrix::from_fn(n, cells, |i, j| rows[i].voltages[j].expect("complete")),
        DMatrix::from_fn(n, sensors, |i, j| rows[i].temps[j].expect("complete")),
        rows.iter().map(|s| s.current.expect("complete")).collect(),
        rows.iter().map(|s| s.soc.expect("complete")).collect(),
    )
    .expect("synthetic segment is well formed")
}

/// Pack voltage matrix (n × cells) with a shared discharge profile, small
/// cell offsets and the given deviant offsets.
pub fn pack_voltage_matrix(n: usize, cells: usize, deviants: &[(usize, f64)], seed: u64) -> DMatrix<f64> {
    let spec = OpSpec {
        cells,
        deviants: deviants.to_vec(),
        dt_s: 6000.0 / n.saturating_sub(1).max(1) as f64,
        ramp_s: 0.0,
        current_noise_a: 0.0,
        seed,
        ..Default::default()
    };
    let rows = operation_samples(&spec);
    DMatrix::from_fn(n, cells, |i, j| rows[i].voltages[j].expect("complete"))
}

/// `count` capacity pairs for a pack of capacity `q_true`: SOC changes
/// spread over [0.1, 0.6], Gaussian noise of `noise_rel·|y|` on `y`.
pub fn capacity_pairs(q_true: f64, count: usize, noise_rel: f64, seed: u64) -> Vec<CapacityPair> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let x = r.random_range(0.1..0.6) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
            let y_true = q_true * x;
            let y = y_true + noise_rel * y_true.abs() * normal(&mut r);
            CapacityPair {
                x,
                y,
                sigma_x: 0.01,
                sigma_y: 0.005 * y.abs() + 0.1,
            }
        })
        .collect()
}

/// Layout of a synthetic multi-pack dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub packs: u32,
    pub days: u32,
    pub first_date: NaiveDate,
    pub cells: usize,
    pub sensors: usize,
    pub dt_s: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            packs: 9,
            days: 10,
            first_date: NaiveDate::from_ymd_opt(2025, 1, 1).expect("valid date"),
            cells: 16,
            sensors: 4,
            dt_s: 10.0,
            seed: 7,
        }
    }
}

/// One pack's full series: each day one discharge at 08:00 and one charge
/// at 14:00 UTC, with short idle stretches around both. Capacity fades and
/// one cell of pack 3 drifts over the days.
pub fn dataset_series(spec: &DatasetSpec, pack_id: u32) -> PackSeries {
    let mut rows = Vec::new();
    let base_capacity = 300.0 * (0.97 - 0.01 * (pack_id as f64 - 1.0) / spec.packs.max(1) as f64 * 5.0);
    for day in 0..spec.days {
        let date = spec.first_date + Duration::days(day as i64);
        let capacity = base_capacity * (1.0 - 0.0005 * day as f64);
        let mut deviants = Vec::new();
        if pack_id == 3 {
            deviants.push((spec.cells / 2, 0.03 + 0.005 * day as f64));
        }
        for (hour, current, soc0) in [(8, 120.0, 0.9), (14, -120.0, 0.15)] {
            let start = date
                .and_time(NaiveTime::from_hms_opt(hour, 0, 0).expect("valid time"))
                .and_utc()
                .timestamp() as f64;
            let op = OpSpec {
                pack_id,
                start_s: start,
                dt_s: spec.dt_s,
                current_a: current,
                capacity_ah: capacity,
                soc0,
                cells: spec.cells,
                sensors: spec.sensors,
                deviants: deviants.clone(),
                seed: spec.seed ^ (pack_id as u64) << 32 ^ (day as u64) << 8 ^ hour as u64,
                ..Default::default()
            };
            let samples = operation_samples(&op);
            let first = samples[0].clone();
            let last = samples[samples.len() - 1].clone();
            for k in (1..=5).rev() {
                rows.push(Sample {
                    timestamp: first.timestamp - 60.0 * k as f64,
                    current: Some(0.0),
                    ..first.clone()
                });
            }
            rows.extend(samples);
            for k in 1..=5 {
                rows.push(Sample {
                    timestamp: last.timestamp + 60.0 * k as f64,
                    current: Some(0.0),
                    ..last.clone()
                });
            }
        }
    }
    PackSeries {
        pack_id,
        cells: spec.cells,
        sensors: spec.sensors,
        rows,
    }
}

/// Writes `pack_<id>.csv` for every pack; returns the paths.
pub fn write_dataset(dir: impl AsRef<Path>, spec: &DatasetSpec) -> Result<Vec<PathBuf>, IngestError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    (1..=spec.packs)
        .map(|p| {
            let path = dir.join(format!("pack_{p:02}.csv"));
            write_csv(&path, &dataset_series(spec, p))?;
            Ok(path)
        })
        .collect()
}

/// Plausible daily records without running the pipeline: one discharge per
/// day, slow drift in spread and SOH, pack 3 with a growing voltage outlier
/// and pack 7 running warm. For agent tests and demos.
pub fn record_store(packs: usize, first_date: NaiveDate, days: u32, seed: u64) -> RecordStore {
    let mut r = rng(seed);
    let mut store = RecordStore::new(packs);
    for day in 0..days {
        let date = first_date + Duration::days(day as i64);
        let age = day as f64 / 365.0;
        let mut v = [vec![0.0; packs], vec![0.0; packs], vec![0.0; packs]];
        let mut t = [vec![0.0; packs], vec![0.0; packs], vec![0.0; packs]];
        let mut h = vec![0.0; packs];
        for j in 0..packs {
            let pack = j + 1;
            let mut mean = 0.015 + 0.002 * j as f64 + 0.01 * age + 0.001 * normal(&mut r).abs();
            let mut worst = mean * (2.0 + 0.3 * normal(&mut r).abs());
            let mut bad = 0.0;
            if pack == 3 {
                worst += 0.05 + 0.1 * age;
                mean += 0.004;
                bad = 1.0 + (day / 60) as f64;
            }
            v[0][j] = round4(worst);
            v[1][j] = round4(mean);
            v[2][j] = bad;
            let warm = if pack == 7 { 2.5 } else { 0.0 };
            let t_mean = 1.2 + warm + 0.2 * normal(&mut r).abs();
            t[0][j] = round4(t_mean * (1.6 + 0.2 * normal(&mut r).abs()));
            t[1][j] = round4(t_mean);
            t[2][j] = round4(1.0 + warm * 0.2 + 0.05 * normal(&mut r));
            h[j] = round4((0.97 - 0.004 * j as f64 - 0.03 * age + 0.002 * normal(&mut r)).clamp(0.5, 1.0));
        }
        let start = date
            .and_time(NaiveTime::from_hms_opt(8, 0, 0).expect("valid time"))
            .and_utc();
        let entry = RecordEntry {
            date,
            operations: vec![OperationRecord {
                start,
                end: start + Duration::hours(2),
                op_type: OpType::Discharge,
                v,
                t,
                h,
            }],
        };
        store.insert(entry).expect("generated entry is valid");
    }
    store
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}
