//! Datasets, chronological splits, normalization and sliding windows.
//!
//! The on-disk format is a CSV with a leading `date` column followed by
//! numeric channels; [`gen_synthetic`] writes the same format it reads.
//! Splits are chronological and disjoint; windows never cross a split
//! boundary, so leakage between train/val/test is structurally impossible.

use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::{rng_from, DOMAIN_DATA};

/// Channel selection mode: `M` forecasts all channels from all channels,
/// `S` is target-only univariate, `MS` forecasts the target from all.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeaturesMode {
    M,
    S,
    MS,
}

impl FeaturesMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeaturesMode::M => "M",
            FeaturesMode::S => "S",
            FeaturesMode::MS => "MS",
        }
    }
}

impl FromStr for FeaturesMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(FeaturesMode::M),
            "S" => Ok(FeaturesMode::S),
            "MS" => Ok(FeaturesMode::MS),
            other => Err(Error::InvalidConfig(format!(
                "features mode must be M, S or MS, got `{other}`"
            ))),
        }
    }
}

/// Train/val/test ratios; chronological order, applied by floor arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.7, val: 0.1, test: 0.2 }
    }
}

/// Task-level settings shared by every trial of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub seq_len: usize,
    /// Accepted and reported for interface parity; the forecaster heads
    /// here do not consume a decoder start token.
    pub label_len: usize,
    pub pred_len: usize,
    pub features: FeaturesMode,
    pub target: String,
    pub patience: usize,
    pub lradj: String,
    pub split: SplitSpec,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams {
            seq_len: 96,
            label_len: 48,
            pred_len: 96,
            features: FeaturesMode::M,
            target: "OT".into(),
            patience: 3,
            lradj: "type1".into(),
            split: SplitSpec::default(),
        }
    }
}

/// Input/output dimensions a model is built for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskDims {
    pub seq_len: usize,
    pub pred_len: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// For each output channel, the input-column position holding the same
    /// series (used by per-channel models).
    pub out_in: Vec<usize>,
}

/// An in-memory multichannel series with resolved input/output channels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub times: Vec<String>,
    pub channel_names: Vec<String>,
    /// T × C, all channels in file order.
    pub values: Array2<f64>,
    pub in_cols: Vec<usize>,
    pub out_cols: Vec<usize>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }
}

/// Lowercase hex SHA-256 of raw bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn bind_channels(
    channel_names: &[String],
    mode: FeaturesMode,
    target: &str,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let all: Vec<usize> = (0..channel_names.len()).collect();
    match mode {
        FeaturesMode::M => Ok((all.clone(), all)),
        FeaturesMode::S | FeaturesMode::MS => {
            let t = channel_names
                .iter()
                .position(|n| n == target)
                .ok_or_else(|| {
                    Error::Dataset(format!(
                        "target column `{target}` not found; available: {}",
                        channel_names.join(", ")
                    ))
                })?;
            match mode {
                FeaturesMode::S => Ok((vec![t], vec![t])),
                _ => Ok((all, vec![t])),
            }
        }
    }
}

/// Parse a dataset CSV. Returns the dataset and the SHA-256 digest of the
/// file bytes (recorded in experiment manifests).
pub fn load_csv_dataset(
    path: &Path,
    mode: FeaturesMode,
    target: &str,
) -> Result<(Dataset, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = digest_bytes(&bytes);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let ds = parse_csv_dataset(&bytes, &name, mode, target)?;
    Ok((ds, digest))
}

fn parse_csv_dataset(
    bytes: &[u8],
    name: &str,
    mode: FeaturesMode,
    target: &str,
) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.get(0) != Some("date") {
        return Err(Error::Dataset(format!(
            "column 0 must be named `date`, got `{}`",
            headers.get(0).unwrap_or("")
        )));
    }
    if headers.len() < 2 {
        return Err(Error::Dataset("no data columns after `date`".into()));
    }
    let channel_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let c = channel_names.len();
    let mut times = Vec::new();
    let mut flat = Vec::new();
    for (li, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != c + 1 {
            return Err(Error::Dataset(format!(
                "row {} has {} fields, expected {}",
                li + 2,
                rec.len(),
                c + 1
            )));
        }
        times.push(rec[0].to_string());
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Dataset(format!(
                    "row {} column `{}`: unreadable number `{}`",
                    li + 2,
                    channel_names[j],
                    field
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Dataset(format!(
                    "row {} column `{}`: non-finite value",
                    li + 2,
                    channel_names[j]
                )));
            }
            flat.push(v);
        }
    }
    if times.is_empty() {
        return Err(Error::Dataset("no data rows".into()));
    }
    let values = Array2::from_shape_vec((times.len(), c), flat).expect("row-major by build");
    let (in_cols, out_cols) = bind_channels(&channel_names, mode, target)?;
    Ok(Dataset {
        name: name.to_string(),
        times,
        channel_names,
        values,
        in_cols,
        out_cols,
    })
}

/// Render a dataset back to the CSV format [`load_csv_dataset`] reads.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    out.push_str("date");
    for n in &ds.channel_names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (t, time) in ds.times.iter().enumerate() {
        out.push_str(time);
        for j in 0..ds.channel_names.len() {
            out.push(',');
            out.push_str(&format!("{}", ds.values[[t, j]]));
        }
        out.push('\n');
    }
    out
}

/// Deterministic multichannel stand-in series: two sinusoids with
/// channel-specific amplitude and phase, a mild linear trend, and seeded
/// Gaussian noise. The last channel is named `OT` so target-based modes
/// work out of the box.
pub fn gen_synthetic(
    name: &str,
    channels: usize,
    timesteps: usize,
    seasonal_period: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    if channels < 1 {
        return Err(Error::Dataset("channels must be at least 1".into()));
    }
    if timesteps < 1 {
        return Err(Error::Dataset("timesteps must be at least 1".into()));
    }
    if !(seasonal_period.is_finite() && seasonal_period > 0.0) {
        return Err(Error::Dataset("seasonal period must be positive".into()));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::Dataset("noise std must be non-negative".into()));
    }
    let mut rng = rng_from(seed, DOMAIN_DATA, 0);
    struct Ch {
        amp1: f64,
        amp2: f64,
        ph1: f64,
        ph2: f64,
        trend: f64,
    }
    let chs: Vec<Ch> = (0..channels)
        .map(|_| Ch {
            amp1: rng.gen_range(0.5..1.5),
            amp2: rng.gen_range(0.1..0.6),
            ph1: rng.gen_range(0.0..std::f64::consts::TAU),
            ph2: rng.gen_range(0.0..std::f64::consts::TAU),
            trend: rng.gen_range(-0.5..0.5),
        })
        .collect();
    let mut values = Array2::zeros((timesteps, channels));
    let w = std::f64::consts::TAU / seasonal_period;
    for t in 0..timesteps {
        for (j, ch) in chs.iter().enumerate() {
            let tt = t as f64;
            let mut v = ch.amp1 * (w * tt + ch.ph1).sin()
                + ch.amp2 * (2.0 * w * tt + ch.ph2).sin()
                + ch.trend * tt * 0.001;
            if noise_std > 0.0 {
                // Box-Muller from two uniform draws.
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                v += noise_std * z;
            }
            values[[t, j]] = v;
        }
    }
    let channel_names: Vec<String> = (0..channels)
        .map(|j| if j + 1 == channels { "OT".into() } else { format!("c{j}") })
        .collect();
    let base = chrono::NaiveDate::from_ymd_opt(2020, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let times: Vec<String> = (0..timesteps)
        .map(|t| {
            (base + chrono::Duration::hours(t as i64))
                .format("%Y-%m-%d %H:%M:%S")
                .to_string()
        })
        .collect();
    let (in_cols, out_cols) = bind_channels(&channel_names, FeaturesMode::M, "OT")?;
    Ok(Dataset {
        name: name.to_string(),
        times,
        channel_names,
        values,
        in_cols,
        out_cols,
    })
}

/// Chronological train/val/test row ranges by floor arithmetic:
/// `n_train = floor(t·train)`, `n_test = floor(t·test)`, val takes the rest.
/// Every segment must hold at least `min_rows` rows (one full window).
pub fn chrono_split(t: usize, spec: &SplitSpec, min_rows: usize) -> Result<[Range<usize>; 3]> {
    for (name, r) in [("train", spec.train), ("val", spec.val), ("test", spec.test)] {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Split(format!("{name} ratio must be positive, got {r}")));
        }
    }
    let sum = spec.train + spec.val + spec.test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios must sum to 1, got {sum}")));
    }
    let n_train = (t as f64 * spec.train).floor() as usize;
    let n_test = (t as f64 * spec.test).floor() as usize;
    let n_val = t - n_train - n_test;
    let ranges = [0..n_train, n_train..n_train + n_val, n_train + n_val..t];
    let short: Vec<String> = [("train", n_train), ("val", n_val), ("test", n_test)]
        .iter()
        .filter(|(_, n)| *n < min_rows)
        .map(|(name, n)| format!("{name} segment holds {n} rows, needs {min_rows}"))
        .collect();
    if !short.is_empty() {
        return Err(Error::Split(short.join("; ")));
    }
    Ok(ranges)
}

/// Sliding windows over `len` rows: each window needs `seq + pred` rows.
pub fn window_count(len: usize, seq_len: usize, pred_len: usize) -> usize {
    (len + 1).saturating_sub(seq_len + pred_len)
}

/// Sliding windows over one contiguous segment of a normalized series.
/// Window `i` reads inputs from rows `[i, i+seq)` of the segment and
/// targets from rows `[i+seq, i+seq+pred)`.
#[derive(Clone, Debug)]
pub struct WindowSet {
    values: Arc<Array2<f64>>,
    in_cols: Arc<Vec<usize>>,
    out_cols: Arc<Vec<usize>>,
    seg_start: usize,
    seq_len: usize,
    pred_len: usize,
    n_windows: usize,
    /// Set when the segment was too short for a single window.
    pub short_segment: bool,
}

impl WindowSet {
    pub fn new(
        values: Arc<Array2<f64>>,
        segment: Range<usize>,
        in_cols: Arc<Vec<usize>>,
        out_cols: Arc<Vec<usize>>,
        seq_len: usize,
        pred_len: usize,
    ) -> Self {
        let n_windows = window_count(segment.len(), seq_len, pred_len);
        WindowSet {
            values,
            in_cols,
            out_cols,
            seg_start: segment.start,
            seq_len,
            pred_len,
            n_windows,
            short_segment: n_windows == 0,
        }
    }

    pub fn len(&self) -> usize {
        self.n_windows
    }

    pub fn is_empty(&self) -> bool {
        self.n_windows == 0
    }

    pub fn c_in(&self) -> usize {
        self.in_cols.len()
    }

    pub fn c_out(&self) -> usize {
        self.out_cols.len()
    }

    /// Input matrix of window `w`: seq_len × C_in.
    pub fn input(&self, w: usize) -> Array2<f64> {
        let s = self.seg_start + w;
        Array2::from_shape_fn((self.seq_len, self.in_cols.len()), |(i, j)| {
            self.values[[s + i, self.in_cols[j]]]
        })
    }

    /// Target matrix of window `w`: pred_len × C_out.
    pub fn target(&self, w: usize) -> Array2<f64> {
        let s = self.seg_start + w + self.seq_len;
        Array2::from_shape_fn((self.pred_len, self.out_cols.len()), |(i, j)| {
            self.values[[s + i, self.out_cols[j]]]
        })
    }
}

/// Per-channel z-score normalizer fitted on a row range (the train split).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean/std per channel over `rows`. Channels with zero or
    /// non-finite spread get std 1, so they normalize to a constant and
    /// invert unchanged.
    pub fn fit(values: &Array2<f64>, rows: Range<usize>) -> Normalizer {
        let c = values.ncols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for j in 0..c {
            let mut s = 0.0;
            for i in rows.clone() {
                s += values[[i, j]];
            }
            mean[j] = s / n;
            let mut q = 0.0;
            for i in rows.clone() {
                let d = values[[i, j]] - mean[j];
                q += d * d;
            }
            let sd = (q / n).sqrt();
            std[j] = if sd.is_finite() && sd > 0.0 { sd } else { 1.0 };
        }
        Normalizer { mean, std }
    }

    pub fn transform(&self, values: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(values.dim(), |(i, j)| {
            (values[[i, j]] - self.mean[j]) / self.std[j]
        })
    }

    pub fn inverse(&self, values: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(values.dim(), |(i, j)| {
            values[[i, j]] * self.std[j] + self.mean[j]
        })
    }
}

/// Everything a trial needs: normalized windows for all three splits.
#[derive(Clone, Debug)]
pub struct TrialContext {
    pub dims: TaskDims,
    pub task: TaskParams,
    pub normalizer: Normalizer,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

/// Split, normalize (statistics from the train rows only) and window a
/// dataset for a task.
pub fn prepare(ds: &Dataset, task: &TaskParams) -> Result<TrialContext> {
    let min_rows = task.seq_len + task.pred_len;
    let ranges = chrono_split(ds.rows(), &task.split, min_rows)?;
    let normalizer = Normalizer::fit(&ds.values, ranges[0].clone());
    let normalized = Arc::new(normalizer.transform(&ds.values));
    let in_cols = Arc::new(ds.in_cols.clone());
    let out_cols = Arc::new(ds.out_cols.clone());
    let mk = |r: Range<usize>| {
        WindowSet::new(
            normalized.clone(),
            r,
            in_cols.clone(),
            out_cols.clone(),
            task.seq_len,
            task.pred_len,
        )
    };
    let out_in = ds
        .out_cols
        .iter()
        .map(|oc| {
            ds.in_cols
                .iter()
                .position(|ic| ic == oc)
                .ok_or_else(|| {
                    Error::Dataset(format!(
                        "output column `{}` is not among the inputs",
                        ds.channel_names[*oc]
                    ))
                })
        })
        .collect::<Result<Vec<usize>>>()?;
    let dims = TaskDims {
        seq_len: task.seq_len,
        pred_len: task.pred_len,
        c_in: ds.in_cols.len(),
        c_out: ds.out_cols.len(),
        out_in,
    };
    Ok(TrialContext {
        dims,
        task: task.clone(),
        normalizer,
        train: mk(ranges[0].clone()),
        val: mk(ranges[1].clone()),
        test: mk(ranges[2].clone()),
    })
}
