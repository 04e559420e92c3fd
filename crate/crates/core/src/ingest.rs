//! Loading, cleaning and segmenting raw pack measurements.
//!
//! Input is one CSV file per pack per day with the header
//! `timestamp,current_A,soc,V_cell_001..V_cell_m,T_sens_001..T_sens_p`.
//! The pack id comes from the file name (`pack3_2025-01-02.csv`,
//! `2025-01-02_pack-03.csv`, ...). Timestamps are epoch seconds or ISO-8601;
//! naive ISO timestamps are read as UTC. Empty fields are missing values.
//!
//! Sign convention used everywhere downstream: discharge current is
//! positive, charge current is negative.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use nalgebra::DMatrix;
use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: header mismatch: {detail}", path.display())]
    HeaderMismatch { path: PathBuf, detail: String },
    #[error("pack {pack_id}: inconsistent vector length for {what}: expected {expected}, found {found} ({location})")]
    InconsistentLength {
        pack_id: u32,
        what: &'static str,
        expected: usize,
        found: usize,
        location: String,
    },
    #[error("{}: cannot infer pack id from the file name (expected something like `pack3_2025-01-02.csv`)", path.display())]
    UnknownPack { path: PathBuf },
    #[error("pack {pack_id}: channel {channel} has {valid} valid samples, at least 2 are required")]
    SparseChannel {
        pack_id: u32,
        channel: String,
        valid: usize,
    },
    #[error("invalid operation segment: {0}")]
    InvalidSegment(String),
}

/// One measurement row. `None` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub timestamp: f64,
    pub current: Option<f64>,
    pub soc: Option<f64>,
    pub voltages: Vec<Option<f64>>,
    pub temps: Vec<Option<f64>>,
}

impl Sample {
    pub fn missing_count(&self) -> usize {
        let scalars = [self.current, self.soc];
        scalars
            .iter()
            .chain(&self.voltages)
            .chain(&self.temps)
            .filter(|v| v.is_none())
            .count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    fn get(&self, ch: Channel) -> Option<f64> {
        match ch {
            Channel::Current => self.current,
            Channel::Soc => self.soc,
            Channel::Voltage(i) => self.voltages[i],
            Channel::Temp(i) => self.temps[i],
        }
    }

    fn set(&mut self, ch: Channel, value: f64) {
        let slot = match ch {
            Channel::Current => &mut self.current,
            Channel::Soc => &mut self.soc,
            Channel::Voltage(i) => &mut self.voltages[i],
            Channel::Temp(i) => &mut self.temps[i],
        };
        *slot = Some(value);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    Current,
    Soc,
    Voltage(usize),
    Temp(usize),
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Current => f.write_str("current_A"),
            Channel::Soc => f.write_str("soc"),
            Channel::Voltage(i) => write!(f, "V_cell_{:03}", i + 1),
            Channel::Temp(i) => write!(f, "T_sens_{:03}", i + 1),
        }
    }
}

/// All rows of one pack.
#[derive(Debug, Clone, PartialEq)]
pub struct PackSeries {
    pub pack_id: u32,
    pub cells: usize,
    pub sensors: usize,
    pub rows: Vec<Sample>,
}

impl PackSeries {
    fn channels(&self) -> impl Iterator<Item = Channel> {
        [Channel::Current, Channel::Soc]
            .into_iter()
            .chain((0..self.cells).map(Channel::Voltage))
            .chain((0..self.sensors).map(Channel::Temp))
    }
}

/// A parse problem that did not abort loading.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub pack_id: u32,
    pub file: String,
    pub line: u64,
    pub message: String,
}

/// Raw rows grouped by pack, plus everything the loader had to report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawChannelTable {
    pub packs: BTreeMap<u32, PackSeries>,
    pub diagnostics: Vec<Diagnostic>,
}

impl RawChannelTable {
    pub fn row_count(&self) -> usize {
        self.packs.values().map(|p| p.rows.len()).sum()
    }

    /// Appends the rows of `other`. Packs present in both must agree on
    /// their cell and sensor counts.
    pub fn merge(&mut self, other: RawChannelTable) -> Result<(), IngestError> {
        for (id, series) in other.packs {
            match self.packs.get_mut(&id) {
                None => {
                    self.packs.insert(id, series);
                }
                Some(existing) => {
                    check_len(id, "cell voltages", existing.cells, series.cells, "merged file")?;
                    check_len(id, "temperature sensors", existing.sensors, series.sensors, "merged file")?;
                    existing.rows.extend(series.rows);
                }
            }
        }
        self.diagnostics.extend(other.diagnostics);
        Ok(())
    }
}

fn check_len(
    pack_id: u32,
    what: &'static str,
    expected: usize,
    found: usize,
    location: &str,
) -> Result<(), IngestError> {
    if expected == found {
        Ok(())
    } else {
        Err(IngestError::InconsistentLength {
            pack_id,
            what,
            expected,
            found,
            location: location.to_string(),
        })
    }
}

/// Extracts the pack id from names like `pack3_...`, `..._pack-03.csv`.
pub fn pack_id_from_path(path: &Path) -> Option<u32> {
    let name = path.file_name()?.to_str()?;
    let re = Regex::new(r"(?i)pack[_-]?(\d+)").expect("static regex");
    re.captures(name)?.get(1)?.as_str().parse().ok()
}

/// Parses epoch seconds or an ISO-8601 timestamp into epoch seconds.
pub fn parse_timestamp(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if let Ok(x) = s.parse::<f64>() {
        return x.is_finite().then_some(x);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9);
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|dt| {
            let dt = dt.and_utc();
            dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9
        })
}

/// Epoch seconds to a UTC date-time (sub-second part kept to the nanosecond).
pub fn to_datetime(epoch_s: f64) -> DateTime<Utc> {
    let secs = epoch_s.floor();
    let nanos = ((epoch_s - secs) * 1e9).round().min(999_999_999.0) as u32;
    DateTime::from_timestamp(secs as i64, nanos).unwrap_or_default()
}

fn parse_header(headers: &csv::StringRecord) -> Result<(usize, usize), String> {
    let fields: Vec<&str> = headers.iter().map(str::trim).collect();
    let fixed = ["timestamp", "current_A", "soc"];
    for (i, want) in fixed.iter().enumerate() {
        match fields.get(i) {
            Some(got) if got == want => {}
            Some(got) => return Err(format!("column {} is `{got}`, expected `{want}`", i + 1)),
            None => return Err(format!("missing column `{want}`")),
        }
    }
    let mut cells = 0;
    let mut sensors = 0;
    for (i, name) in fields.iter().enumerate().skip(3) {
        if sensors == 0 && *name == format!("V_cell_{:03}", cells + 1) {
            cells += 1;
        } else if *name == format!("T_sens_{:03}", sensors + 1) {
            sensors += 1;
        } else {
            let want = if sensors == 0 {
                format!("V_cell_{:03} or T_sens_001", cells + 1)
            } else {
                format!("T_sens_{:03}", sensors + 1)
            };
            return Err(format!("column {} is `{name}`, expected {want}", i + 1));
        }
    }
    if cells == 0 {
        return Err("no V_cell_### columns".into());
    }
    if sensors == 0 {
        return Err("no T_sens_### columns".into());
    }
    Ok((cells, sensors))
}

/// Loads one CSV file; the pack id is taken from the file name.
pub fn load_csv(path: impl AsRef<Path>) -> Result<RawChannelTable, IngestError> {
    let path = path.as_ref();
    let pack_id = pack_id_from_path(path).ok_or_else(|| IngestError::UnknownPack {
        path: path.to_path_buf(),
    })?;
    load_csv_for_pack(path, pack_id)
}

pub fn load_csv_for_pack(path: impl AsRef<Path>, pack_id: u32) -> Result<RawChannelTable, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let (cells, sensors) = parse_header(&headers).map_err(|detail| IngestError::HeaderMismatch {
        path: path.to_path_buf(),
        detail,
    })?;
    let width = 3 + cells + sensors;
    let file_name = path.display().to_string();

    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(IngestError::InconsistentLength {
                pack_id,
                what: "row fields",
                expected: width,
                found: record.len(),
                location: format!("{file_name}:{line}"),
            });
        }
        let Some(timestamp) = parse_timestamp(&record[0]) else {
            diagnostics.push(Diagnostic {
                pack_id,
                file: file_name.clone(),
                line,
                message: format!("unparseable timestamp `{}`; row skipped", &record[0]),
            });
            continue;
        };
        let mut field = |idx: usize| -> Option<f64> {
            let raw = record[idx].trim();
            if raw.is_empty() {
                return None;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    diagnostics.push(Diagnostic {
                        pack_id,
                        file: file_name.clone(),
                        line,
                        message: format!("column {}: unparseable value `{raw}` treated as missing", idx + 1),
                    });
                    None
                }
            }
        };
        let current = field(1);
        let soc = field(2);
        let voltages = (3..3 + cells).map(&mut field).collect();
        let temps = (3 + cells..width).map(&mut field).collect();
        rows.push(Sample {
            timestamp,
            current,
            soc,
            voltages,
            temps,
        });
    }

    let mut packs = BTreeMap::new();
    packs.insert(
        pack_id,
        PackSeries {
            pack_id,
            cells,
            sensors,
            rows,
        },
    );
    Ok(RawChannelTable { packs, diagnostics })
}

/// Loads every `*.csv` in `dir` (sorted by file name) and merges by pack.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<RawChannelTable, IngestError> {
    let dir = dir.as_ref();
    let io_err = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    let mut table = RawChannelTable::default();
    for file in files {
        table.merge(load_csv(&file)?)?;
    }
    Ok(table)
}

/// Writes one pack in the input CSV format (ISO-8601 UTC timestamps).
pub fn write_csv(path: impl AsRef<Path>, series: &PackSeries) -> Result<(), IngestError> {
    let path = path.as_ref();
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["timestamp".to_string(), "current_A".into(), "soc".into()];
    header.extend((0..series.cells).map(|i| Channel::Voltage(i).to_string()));
    header.extend((0..series.sensors).map(|i| Channel::Temp(i).to_string()));
    w.write_record(&header).map_err(csv_err)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for row in &series.rows {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(to_datetime(row.timestamp).to_rfc3339_opts(SecondsFormat::AutoSi, true));
        rec.push(fmt(row.current));
        rec.push(fmt(row.soc));
        rec.extend(row.voltages.iter().map(|v| fmt(*v)));
        rec.extend(row.temps.iter().map(|v| fmt(*v)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Screening bounds and synchronization tolerance for [`clean`].
///
/// The defaults are an LFP plausibility envelope and a typical BMS
/// reporting cadence. Sampling period and missing-data rates of real
/// deployments vary; adjust per site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanParams {
    pub v_min: f64,
    pub v_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub sync_tolerance_s: f64,
}

impl Default for CleanParams {
    fn default() -> Self {
        Self {
            v_min: 1.5,
            v_max: 4.5,
            t_min: -40.0,
            t_max: 100.0,
            sync_tolerance_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PackCleanStats {
    pub input_rows: usize,
    pub duplicates: usize,
    pub screened: usize,
    pub interpolated: usize,
    pub synchronized: usize,
    pub incomplete_dropped: usize,
    pub output_rows: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CleanReport {
    pub packs: BTreeMap<u32, PackCleanStats>,
}

/// Cleans every pack: dedup, physical screening, interpolation of isolated
/// gaps, nearest-neighbour synchronization, and removal of rows that are
/// still incomplete. The result has strictly increasing timestamps and no
/// missing values, so cleaning twice changes nothing.
pub fn clean(
    table: &RawChannelTable,
    params: &CleanParams,
) -> Result<(RawChannelTable, CleanReport), IngestError> {
    let mut out = RawChannelTable {
        packs: BTreeMap::new(),
        diagnostics: table.diagnostics.clone(),
    };
    let mut report = CleanReport::default();
    for (id, series) in &table.packs {
        let (cleaned, stats) = clean_pack(series, params)?;
        out.packs.insert(*id, cleaned);
        report.packs.insert(*id, stats);
    }
    Ok((out, report))
}

fn clean_pack(series: &PackSeries, params: &CleanParams) -> Result<(PackSeries, PackCleanStats), IngestError> {
    let mut stats = PackCleanStats {
        input_rows: series.rows.len(),
        ..Default::default()
    };
    let mut rows = series.rows.clone();
    rows.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let before = rows.len();
    rows.dedup_by(|later, first| later.timestamp == first.timestamp);
    stats.duplicates = before - rows.len();

    let in_range = |v: &Option<f64>, lo: f64, hi: f64| v.is_none_or(|x| (lo..=hi).contains(&x));
    let before = rows.len();
    rows.retain(|r| {
        r.voltages.iter().all(|v| in_range(v, params.v_min, params.v_max))
            && r.temps.iter().all(|t| in_range(t, params.t_min, params.t_max))
    });
    stats.screened = before - rows.len();

    for ch in series.channels() {
        let valid = rows.iter().filter(|r| r.get(ch).is_some()).count();
        if valid < 2 {
            return Err(IngestError::SparseChannel {
                pack_id: series.pack_id,
                channel: ch.to_string(),
                valid,
            });
        }
    }

    // Isolated gaps: one missing sample with valid neighbours on both sides.
    let snapshot = rows.clone();
    for ch in series.channels() {
        for i in 1..snapshot.len().saturating_sub(1) {
            if snapshot[i].get(ch).is_some() {
                continue;
            }
            let (Some(v0), Some(v1)) = (snapshot[i - 1].get(ch), snapshot[i + 1].get(ch)) else {
                continue;
            };
            let (t0, t, t1) = (snapshot[i - 1].timestamp, snapshot[i].timestamp, snapshot[i + 1].timestamp);
            rows[i].set(ch, v0 + (v1 - v0) * (t - t0) / (t1 - t0));
            stats.interpolated += 1;
        }
    }

    // Synchronization onto the row grid: nearest valid sample within tolerance,
    // earlier sample on ties.
    let snapshot = rows.clone();
    for ch in series.channels() {
        for i in 0..snapshot.len() {
            if snapshot[i].get(ch).is_some() {
                continue;
            }
            let t = snapshot[i].timestamp;
            let before = (0..i)
                .rev()
                .take_while(|&j| t - snapshot[j].timestamp <= params.sync_tolerance_s)
                .find_map(|j| snapshot[j].get(ch).map(|v| (t - snapshot[j].timestamp, v)));
            let after = (i + 1..snapshot.len())
                .take_while(|&j| snapshot[j].timestamp - t <= params.sync_tolerance_s)
                .find_map(|j| snapshot[j].get(ch).map(|v| (snapshot[j].timestamp - t, v)));
            let pick = match (before, after) {
                (Some(b), Some(a)) => Some(if a.0 < b.0 { a.1 } else { b.1 }),
                (b, a) => b.or(a).map(|x| x.1),
            };
            if let Some(v) = pick {
                rows[i].set(ch, v);
                stats.synchronized += 1;
            }
        }
    }

    let before = rows.len();
    rows.retain(Sample::is_complete);
    stats.incomplete_dropped = before - rows.len();
    stats.output_rows = rows.len();
    if rows.len() < 2 {
        return Err(IngestError::SparseChannel {
            pack_id: series.pack_id,
            channel: "all channels (complete rows)".into(),
            valid: rows.len(),
        });
    }
    Ok((
        PackSeries {
            rows,
            ..series.clone()
        },
        stats,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpType {
    Charge,
    Discharge,
}

impl fmt::Display for OpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpType::Charge => "charge",
            OpType::Discharge => "discharge",
        })
    }
}

/// One contiguous charge or discharge operation of one pack.
///
/// Rows of `voltages` (n × cells) and `temps` (n × sensors) are aligned with
/// `timestamps`; `op_type` is derived from the sign of the mean current.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationSegment {
    pack_id: u32,
    op_type: OpType,
    timestamps: Vec<f64>,
    voltages: DMatrix<f64>,
    temps: DMatrix<f64>,
    current: Vec<f64>,
    soc: Vec<f64>,
}

impl OperationSegment {
    pub fn new(
        pack_id: u32,
        timestamps: Vec<f64>,
        voltages: DMatrix<f64>,
        temps: DMatrix<f64>,
        current: Vec<f64>,
        soc: Vec<f64>,
    ) -> Result<Self, IngestError> {
        let n = timestamps.len();
        let bad = |msg: String| Err(IngestError::InvalidSegment(msg));
        if n < 2 {
            return bad(format!("need at least 2 samples, got {n}"));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("timestamps must be strictly increasing".into());
        }
        if voltages.nrows() != n || temps.nrows() != n || current.len() != n || soc.len() != n {
            return bad(format!(
                "row counts disagree: timestamps {n}, voltages {}, temps {}, current {}, soc {}",
                voltages.nrows(),
                temps.nrows(),
                current.len(),
                soc.len()
            ));
        }
        let mean = current.iter().sum::<f64>() / n as f64;
        let op_type = if mean < 0.0 { OpType::Charge } else { OpType::Discharge };
        Ok(Self {
            pack_id,
            op_type,
            timestamps,
            voltages,
            temps,
            current,
            soc,
        })
    }

    pub fn pack_id(&self) -> u32 {
        self.pack_id
    }
    pub fn op_type(&self) -> OpType {
        self.op_type
    }
    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }
    pub fn voltages(&self) -> &DMatrix<f64> {
        &self.voltages
    }
    pub fn temps(&self) -> &DMatrix<f64> {
        &self.temps
    }
    pub fn current(&self) -> &[f64] {
        &self.current
    }
    pub fn soc(&self) -> &[f64] {
        &self.soc
    }
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
    pub fn duration_s(&self) -> f64 {
        self.timestamps[self.len() - 1] - self.timestamps[0]
    }
    pub fn start(&self) -> DateTime<Utc> {
        to_datetime(self.timestamps[0])
    }
    pub fn end(&self) -> DateTime<Utc> {
        to_datetime(self.timestamps[self.len() - 1])
    }

    /// Median sampling interval in seconds.
    pub fn sample_period_s(&self) -> f64 {
        let mut dts: Vec<f64> = self.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
        dts.sort_by(f64::total_cmp);
        dts[dts.len() / 2]
    }

    /// Same segment with every timestamp moved by `offset_s`.
    pub fn shifted(&self, offset_s: f64) -> Self {
        Self {
            timestamps: self.timestamps.iter().map(|t| t + offset_s).collect(),
            ..self.clone()
        }
    }
}

/// Operation boundary rule for [`segment_operations`].
///
/// Operation delimiting is a site choice; defaults suit a cluster cycling a
/// few hundred amperes with multi-minute rests between operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    pub idle_current_a: f64,
    pub idle_gap_s: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            idle_current_a: 5.0,
            idle_gap_s: 300.0,
        }
    }
}

/// Cuts every pack of a cleaned table into operations: runs with
/// `|current| >= idle_current_a`, where idle stretches (or data gaps)
/// shorter than `idle_gap_s` do not split a run.
pub fn segment_operations(table: &RawChannelTable, params: &SegmentParams) -> Vec<OperationSegment> {
    table
        .packs
        .values()
        .flat_map(|series| segment_pack(series, params))
        .collect()
}

fn segment_pack(series: &PackSeries, params: &SegmentParams) -> Vec<OperationSegment> {
    let rows: Vec<&Sample> = series.rows.iter().filter(|r| r.is_complete()).collect();
    let active: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.current.is_some_and(|c| c.abs() >= params.idle_current_a))
        .map(|(i, _)| i)
        .collect();

    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &i in &active {
        match runs.last_mut() {
            Some((_, end)) if rows[i].timestamp - rows[*end].timestamp < params.idle_gap_s => *end = i,
            _ => runs.push((i, i)),
        }
    }

    runs.into_iter()
        .filter_map(|(s, e)| {
            let span = &rows[s..=e];
            let n = span.len();
            let timestamps = span.iter().map(|r| r.timestamp).collect();
            let voltages = DMatrix::from_fn(n, series.cells, |i, j| span[i].voltages[j].unwrap_or(f64::NAN));
            let temps = DMatrix::from_fn(n, series.sensors, |i, j| span[i].temps[j].unwrap_or(f64::NAN));
            let current = span.iter().map(|r| r.current.unwrap_or(0.0)).collect();
            let soc = span.iter().map(|r| r.soc.unwrap_or(f64::NAN)).collect();
            OperationSegment::new(series.pack_id, timestamps, voltages, temps, current, soc).ok()
        })
        .collect()
}
