//! Hydrologic dataset handling: CSV loading with strict validation, the
//! magnitude-paired train/test/select split, water-year bookkeeping, spin-up
//! construction, and a seeded synthetic-weather generator.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{simulate_q, ForwardOptions, NetworkParams, NetworkSpec};

/// Daily forcing series driving a simulation.
#[derive(Clone, Debug)]
pub struct Forcing {
    pub precip: Vec<f64>,
    pub pet: Vec<f64>,
}

/// Contiguous daily record of forcing and observed streamflow.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dates: Vec<NaiveDate>,
    pub precip: Vec<f64>,
    pub pet: Vec<f64>,
    pub flow: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn forcing(&self) -> Forcing {
        Forcing {
            precip: self.precip.clone(),
            pet: self.pet.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("expected header 'date,pp,pet,qq', found '{0}'")]
    Header(String),
    #[error("line {line}: bad date '{value}' (expected YYYY-MM-DD)")]
    BadDate { line: u64, value: String },
    #[error("line {line}: bad number in column {column}: '{value}'")]
    BadNumber {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("line {line}: negative value in column {column}")]
    Negative { line: u64, column: &'static str },
    #[error("line {line}: dates must be contiguous daily; expected {expected}, found {found}")]
    NonContiguous {
        line: u64,
        expected: NaiveDate,
        found: NaiveDate,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("dataset must start on October 1 to define a complete first water-year")]
    FirstYearIncomplete,
    #[error("dataset shorter than one water-year")]
    TooShort,
    #[error("line {line}: unknown split label '{value}'")]
    UnknownLabel { line: u64, value: String },
    #[error("split has {mask} rows but dataset has {data}")]
    SplitLength { mask: usize, data: usize },
    #[error("line {line}: split date {found} does not match dataset date {expected}")]
    SplitDate {
        line: u64,
        expected: NaiveDate,
        found: NaiveDate,
    },
    #[error("synthetic generator failed: {0}")]
    Generator(String),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads a `date,pp,pet,qq` CSV. Leading `#` comment lines are skipped.
/// Dates must be ISO and contiguous daily; all values must be nonnegative.
pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                io_err(path, std::io::Error::other(e.to_string()))
            }
            _ => DataError::Csv(e),
        })?;
    {
        let headers = reader.headers()?;
        let expected = ["date", "pp", "pet", "qq"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(DataError::Header(headers.iter().collect::<Vec<_>>().join(",")));
        }
    }
    let mut ds = Dataset {
        dates: Vec::new(),
        precip: Vec::new(),
        pet: Vec::new(),
        flow: Vec::new(),
    };
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let date_str = record.get(0).unwrap_or_default();
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d").map_err(|_| {
            DataError::BadDate {
                line,
                value: date_str.to_string(),
            }
        })?;
        if let Some(&prev) = ds.dates.last() {
            let expected = prev + Days::new(1);
            if date != expected {
                return Err(DataError::NonContiguous {
                    line,
                    expected,
                    found: date,
                });
            }
        }
        let parse = |idx: usize, column: &'static str| -> Result<f64, DataError> {
            let raw = record.get(idx).unwrap_or_default();
            let v: f64 = raw
                .parse()
                .map_err(|_| DataError::BadNumber {
                    line,
                    column,
                    value: raw.to_string(),
                })?;
            if !v.is_finite() {
                return Err(DataError::BadNumber {
                    line,
                    column,
                    value: raw.to_string(),
                });
            }
            if v < 0.0 {
                return Err(DataError::Negative { line, column });
            }
            Ok(v)
        };
        ds.precip.push(parse(1, "pp")?);
        ds.pet.push(parse(2, "pet")?);
        ds.flow.push(parse(3, "qq")?);
        ds.dates.push(date);
    }
    if ds.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(ds)
}

/// Writes a dataset as `date,pp,pet,qq` under an optional `#` metadata line.
/// Floats print in shortest round-trip form, so a reload is value-exact.
pub fn write_dataset_csv(path: &Path, ds: &Dataset, meta: Option<&str>) -> Result<(), DataError> {
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    if let Some(meta) = meta {
        writeln!(file, "# {meta}").map_err(|e| io_err(path, e))?;
    }
    writeln!(file, "date,pp,pet,qq").map_err(|e| io_err(path, e))?;
    for i in 0..ds.len() {
        writeln!(
            file,
            "{},{},{},{}",
            ds.dates[i], ds.precip[i], ds.pet[i], ds.flow[i]
        )
        .map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

// ── split protocol ──

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitLabel {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "test")]
    Test,
    #[serde(rename = "select")]
    Select,
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitLabel::Train => "train",
            SplitLabel::Test => "test",
            SplitLabel::Select => "select",
        })
    }
}

/// Per-timestep split assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMask {
    pub labels: Vec<SplitLabel>,
}

impl SplitMask {
    pub fn indices(&self, label: SplitLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Counts as (train, test, select).
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for l in &self.labels {
            match l {
                SplitLabel::Train => c.0 += 1,
                SplitLabel::Test => c.1 += 1,
                SplitLabel::Select => c.2 += 1,
            }
        }
        c
    }
}

const SPLIT_CYCLE: [SplitLabel; 4] = [
    SplitLabel::Train,
    SplitLabel::Test,
    SplitLabel::Select,
    SplitLabel::Train,
];

/// Magnitude-paired cyclic split. Timesteps are ranked by observed flow
/// (descending, ties by original position), the largest is paired with the
/// smallest and so on inward, and whole pairs are dealt cyclically to
/// train, test, select, train. The pairing gives every subset nearly the
/// same flow distribution; the 2:1:1 cycle gives the 50/25/25 shares. For an
/// odd record the unpaired median timestep becomes a final singleton dealt to
/// the next label in the cycle.
pub fn split(flows: &[f64]) -> SplitMask {
    let n = flows.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| flows[b].total_cmp(&flows[a]).then(a.cmp(&b)));
    let mut labels = vec![SplitLabel::Train; n];
    let pairs = n / 2;
    for p in 0..pairs {
        let label = SPLIT_CYCLE[p % 4];
        labels[order[p]] = label;
        labels[order[n - 1 - p]] = label;
    }
    if n % 2 == 1 {
        labels[order[pairs]] = SPLIT_CYCLE[pairs % 4];
    }
    SplitMask { labels }
}

/// Writes `date,label` rows under an optional `#` metadata line.
pub fn write_split_csv(
    path: &Path,
    dates: &[NaiveDate],
    mask: &SplitMask,
    meta: Option<&str>,
) -> Result<(), DataError> {
    assert_eq!(dates.len(), mask.labels.len());
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    if let Some(meta) = meta {
        writeln!(file, "# {meta}").map_err(|e| io_err(path, e))?;
    }
    writeln!(file, "date,label").map_err(|e| io_err(path, e))?;
    for (date, label) in dates.iter().zip(&mask.labels) {
        writeln!(file, "{date},{label}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Reads a split written by [`write_split_csv`] and checks it row-for-row
/// against the dataset's dates.
pub fn read_split_csv(path: &Path, ds: &Dataset) -> Result<SplitMask, DataError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(std::io::BufReader::new(file));
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let date_str = record.get(0).unwrap_or_default();
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d").map_err(|_| {
            DataError::BadDate {
                line,
                value: date_str.to_string(),
            }
        })?;
        if i >= ds.len() {
            return Err(DataError::SplitLength {
                mask: i + 1,
                data: ds.len(),
            });
        }
        if date != ds.dates[i] {
            return Err(DataError::SplitDate {
                line,
                expected: ds.dates[i],
                found: date,
            });
        }
        let label = match record.get(1).unwrap_or_default() {
            "train" => SplitLabel::Train,
            "test" => SplitLabel::Test,
            "select" => SplitLabel::Select,
            other => {
                return Err(DataError::UnknownLabel {
                    line,
                    value: other.to_string(),
                })
            }
        };
        labels.push(label);
    }
    if labels.len() != ds.len() {
        return Err(DataError::SplitLength {
            mask: labels.len(),
            data: ds.len(),
        });
    }
    Ok(SplitMask { labels })
}

// ── water years and spin-up ──

/// Water-year label of a date: years run October 1 through September 30 and
/// are named for the calendar year in which they end.
pub fn water_year(date: NaiveDate) -> i32 {
    if date.month() >= 10 {
        date.year() + 1
    } else {
        date.year()
    }
}

/// A complete water-year inside a contiguous record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WaterYearSpan {
    pub wy: i32,
    pub start: usize,
    pub len: usize,
}

/// Complete water-years (October 1 through September 30, inclusive) found in
/// a contiguous date range.
pub fn complete_water_years(dates: &[NaiveDate]) -> Vec<WaterYearSpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < dates.len() {
        let d = dates[i];
        if d.month() == 10 && d.day() == 1 {
            let wy = water_year(d);
            let end = NaiveDate::from_ymd_opt(wy, 9, 30).unwrap();
            let len = (end - d).num_days() as usize + 1;
            if i + len <= dates.len() {
                spans.push(WaterYearSpan { wy, start: i, len });
                i += len;
                continue;
            }
            break;
        }
        i += 1;
    }
    spans
}

/// Forcing extended by a spin-up block: the first water-year of forcing
/// repeated three times ahead of the record. Simulated values on the block
/// are discarded by every metric; `offset` maps original indices into the
/// extended series.
#[derive(Clone, Debug)]
pub struct SpinupForcing {
    pub forcing: Forcing,
    pub offset: usize,
}

pub fn build_spinup(ds: &Dataset) -> Result<SpinupForcing, DataError> {
    if ds.is_empty() {
        return Err(DataError::Empty);
    }
    let first = ds.dates[0];
    if first.month() != 10 || first.day() != 1 {
        return Err(DataError::FirstYearIncomplete);
    }
    let end = NaiveDate::from_ymd_opt(water_year(first), 9, 30).unwrap();
    let year_len = (end - first).num_days() as usize + 1;
    if ds.len() < year_len {
        return Err(DataError::TooShort);
    }
    let mut precip = Vec::with_capacity(ds.len() + 3 * year_len);
    let mut pet = Vec::with_capacity(ds.len() + 3 * year_len);
    for _ in 0..3 {
        precip.extend_from_slice(&ds.precip[..year_len]);
        pet.extend_from_slice(&ds.pet[..year_len]);
    }
    precip.extend_from_slice(&ds.precip);
    pet.extend_from_slice(&ds.pet);
    Ok(SpinupForcing {
        forcing: Forcing { precip, pet },
        offset: 3 * year_len,
    })
}

// ── synthetic weather and streamflow ──

/// Configuration of the synthetic weather process. Precipitation is a
/// wet-day Bernoulli process with exponentially distributed wet-day depth;
/// evaporative demand is a smooth seasonal sinusoid peaking at midsummer
/// (July 1), clamped at 0.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of complete water-years to generate.
    pub years: usize,
    /// Label of the first generated water-year (starts October 1 of the
    /// preceding calendar year).
    pub start_wy: i32,
    pub wet_day_prob: f64,
    pub mean_wet_depth: f64,
    pub pet_mean: f64,
    pub pet_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            years: 10,
            start_wy: 2000,
            wet_day_prob: 0.3,
            mean_wet_depth: 8.0,
            pet_mean: 3.5,
            pet_amplitude: 2.5,
        }
    }
}

/// Generates a synthetic dataset. Weather comes from the seeded substream
/// `synth`; streamflow is the generator network simulated under the same
/// spin-up protocol used in training, so the generator itself scores a
/// perfect fit on its own data.
pub fn synth_generate(
    cfg: &SynthConfig,
    gen_spec: &NetworkSpec,
    gen_params: &NetworkParams<f64>,
    seed: u64,
) -> Result<Dataset, DataError> {
    assert!(cfg.years > 0, "need at least one water-year");
    assert!(
        cfg.wet_day_prob > 0.0 && cfg.wet_day_prob < 1.0,
        "wet-day probability must lie in (0, 1)"
    );
    assert!(cfg.mean_wet_depth > 0.0);

    let start = NaiveDate::from_ymd_opt(cfg.start_wy - 1, 10, 1).unwrap();
    let end_wy = cfg.start_wy + cfg.years as i32 - 1;
    let mut dates = Vec::new();
    let mut d = start;
    while water_year(d) <= end_wy {
        dates.push(d);
        d = d + Days::new(1);
    }

    let mut rng = crate::seeding::substream(seed, "synth", 0);
    let depth = Exp::new(1.0 / cfg.mean_wet_depth).expect("positive rate");
    let mut precip = Vec::with_capacity(dates.len());
    let mut pet = Vec::with_capacity(dates.len());
    for date in &dates {
        let wet = rng.random_bool(cfg.wet_day_prob);
        precip.push(if wet { depth.sample(&mut rng) } else { 0.0 });
        let doy = date.ordinal() as f64;
        let seasonal =
            cfg.pet_mean + cfg.pet_amplitude * ((doy - 182.0) / 365.25 * std::f64::consts::TAU).cos();
        pet.push(seasonal.max(0.0));
    }

    let mut ds = Dataset {
        dates,
        precip,
        pet,
        flow: Vec::new(),
    };
    ds.flow = vec![0.0; ds.dates.len()];
    let spinup = build_spinup(&ds)?;
    let q = simulate_q::<f64>(
        gen_spec,
        gen_params,
        &spinup.forcing,
        &ForwardOptions::default(),
    )
    .map_err(|e| DataError::Generator(e.to_string()))?;
    ds.flow = q[spinup.offset..].to_vec();
    Ok(ds)
}

/// A small single-node generator with hydrologically plausible behavior,
/// used as the default source of synthetic streamflow.
pub fn default_generator() -> (NetworkSpec, NetworkParams<f64>) {
    let spec = NetworkSpec::new(
        crate::network::NetworkType::Ds,
        crate::node::Sharing::None,
        vec![1],
    );
    let mut params = NetworkParams::zeros(&spec);
    {
        let p = &mut params.layers[0][0];
        p.out_bias = -2.0;
        p.out_state_coef[0] = 0.04;
        p.loss_bias = -1.0;
        p.loss_pet_coef = 0.4;
        p.loss_state_coef[0] = 0.01;
        p.logit_out = 0.8;
        p.logit_loss = -0.4;
        p.logit_rem = 1.2;
    }
    (spec, params)
}

// ── helpers for reading our own CSV exports ──

/// Reads the first `#` metadata line of a file, if present.
pub fn read_meta_line(path: &Path) -> Result<Option<String>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut line = String::new();
    std::io::BufReader::new(file)
        .read_line(&mut line)
        .map_err(|e| io_err(path, e))?;
    Ok(line
        .strip_prefix("# ")
        .map(|rest| rest.trim_end().to_string()))
}
