//! Series ingestion, normalization, chronological splitting, sliding windows
//! and the synthetic traffic generator.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::seeded;
use crate::tensor::Tensor;

/// Ticks per simulated day at 5-minute sampling.
pub const TICKS_PER_DAY: usize = 288;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("no timestamps")]
    Empty,
    #[error("sensor `{0}` has no numeric values")]
    AllMissing(String),
    #[error("invalid data configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Dense `[N, T, F]` series with sensor labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStore {
    values: Vec<f64>,
    n: usize,
    t: usize,
    f: usize,
    pub sensor_ids: Vec<String>,
    pub interval_minutes: u32,
    /// Index of this store's first timestamp in the series it was cut from.
    pub offset: usize,
}

impl SeriesStore {
    /// `values` is laid out `[N, T, F]`.
    pub fn new(values: Vec<f64>, n: usize, t: usize, f: usize, sensor_ids: Vec<String>) -> Result<Self> {
        if values.len() != n * t * f || sensor_ids.len() != n {
            return Err(DataError::Config(format!(
                "{} values and {} ids for shape [{n}, {t}, {f}]",
                values.len(),
                sensor_ids.len()
            )));
        }
        if t == 0 {
            return Err(DataError::Empty);
        }
        Ok(SeriesStore {
            values,
            n,
            t,
            f,
            sensor_ids,
            interval_minutes: 5,
            offset: 0,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn features(&self) -> usize {
        self.f
    }

    pub fn get(&self, sensor: usize, time: usize, feature: usize) -> f64 {
        self.values[(sensor * self.t + time) * self.f + feature]
    }

    /// One sensor's series for feature `feature`.
    pub fn series(&self, sensor: usize, feature: usize) -> Vec<f64> {
        (0..self.t).map(|t| self.get(sensor, t, feature)).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.n, self.t, self.f], self.values.clone()).expect("store shape is consistent")
    }

    /// Timestamps `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> SeriesStore {
        let mut values = Vec::with_capacity(self.n * len * self.f);
        for s in 0..self.n {
            let from = (s * self.t + start) * self.f;
            values.extend_from_slice(&self.values[from..from + len * self.f]);
        }
        SeriesStore {
            values,
            n: self.n,
            t: len,
            f: self.f,
            sensor_ids: self.sensor_ids.clone(),
            interval_minutes: self.interval_minutes,
            offset: self.offset + start,
        }
    }

    fn map(&self, mut op: impl FnMut(usize, usize, f64) -> f64) -> SeriesStore {
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            let sensor = i / (self.t * self.f);
            *v = op(sensor, i % self.f, *v);
        }
        out
    }
}

fn parse_cell(cell: &str, line: usize) -> Result<f64> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    cell.parse::<f64>().map_err(|_| DataError::Parse {
        line,
        reason: format!("non-numeric cell `{cell}`"),
    })
}

/// Reads a CSV with a header row of sensor ids and one row per timestamp.
/// Missing cells (empty or `NaN`) are forward-filled, then back-filled.
pub fn read_csv(reader: impl Read) -> Result<SeriesStore> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = csv.headers().map_err(|e| DataError::Parse {
        line: 1,
        reason: e.to_string(),
    })?;
    let ids: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    if ids.is_empty() || ids.iter().all(String::is_empty) {
        return Err(DataError::Parse {
            line: 1,
            reason: "missing header row of sensor ids".into(),
        });
    }
    let n = ids.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
    for record in csv.records() {
        let record = record.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != n {
            return Err(DataError::Parse {
                line,
                reason: format!("expected {n} cells, found {}", record.len()),
            });
        }
        for (column, cell) in columns.iter_mut().zip(record.iter()) {
            column.push(parse_cell(cell, line)?);
        }
    }
    let t = columns[0].len();
    if t == 0 {
        return Err(DataError::Empty);
    }
    for (column, id) in columns.iter_mut().zip(&ids) {
        fill_gaps(column).ok_or_else(|| DataError::AllMissing(id.clone()))?;
    }
    SeriesStore::new(columns.concat(), n, t, 1, ids)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesStore> {
    read_csv(std::fs::File::open(path)?)
}

/// Forward-fill then back-fill NaNs. `None` when every value is missing.
fn fill_gaps(values: &mut [f64]) -> Option<()> {
    let first = values.iter().position(|v| !v.is_nan())?;
    let mut last = values[first];
    for v in values.iter_mut() {
        if v.is_nan() {
            *v = last;
        } else {
            last = *v;
        }
    }
    Some(())
}

/// Writes feature 0 of every sensor, one row per timestamp.
pub fn write_csv(store: &SeriesStore, writer: impl Write) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let io = |e: csv::Error| DataError::Io(e.into());
    csv.write_record(&store.sensor_ids).map_err(io)?;
    let mut row = Vec::with_capacity(store.n);
    for t in 0..store.t {
        row.clear();
        row.extend((0..store.n).map(|s| format!("{}", store.get(s, t, 0))));
        csv.write_record(&row).map_err(io)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_csv(store: &SeriesStore, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(store, std::io::BufWriter::new(file))
}

/// The training split. Only this type can fit a [`Normalizer`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSplit(pub SeriesStore);

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: TrainSplit,
    pub val: SeriesStore,
    pub test: SeriesStore,
}

/// Contiguous 60/20/20-style split. Each part must hold at least `min_len`
/// timestamps (`H + U`).
pub fn chronological_split(store: &SeriesStore, ratios: (f64, f64, f64), min_len: usize) -> Result<Splits> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(*r > 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DataError::Config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let t = store.len();
    let n_train = (t as f64 * a).round() as usize;
    let n_val = (t as f64 * b).round() as usize;
    let n_test = t.saturating_sub(n_train + n_val);
    for (name, len) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if len < min_len {
            return Err(DataError::Config(format!(
                "{name} split has {len} timestamps, fewer than H + U = {min_len}"
            )));
        }
    }
    Ok(Splits {
        train: TrainSplit(store.slice(0, n_train)),
        val: store.slice(n_train, n_val),
        test: store.slice(n_train + n_val, n_test),
    })
}

/// Per-sensor, per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    /// `[N * F]`
    pub mean: Vec<f64>,
    /// `[N * F]`, floored at [`Normalizer::STD_FLOOR`]
    pub std: Vec<f64>,
    features: usize,
}

impl Normalizer {
    pub const STD_FLOOR: f64 = 1e-8;

    pub fn fit(train: &TrainSplit) -> Self {
        let s = &train.0;
        let mut mean = Vec::with_capacity(s.n * s.f);
        let mut std = Vec::with_capacity(s.n * s.f);
        for sensor in 0..s.n {
            for feature in 0..s.f {
                let xs = s.series(sensor, feature);
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
                mean.push(m);
                std.push(var.sqrt().max(Self::STD_FLOOR));
            }
        }
        Normalizer {
            mean,
            std,
            features: s.f,
        }
    }

    /// Rebuilds a normalizer from stored statistics.
    pub fn from_stats(mean: Vec<f64>, std: Vec<f64>, features: usize) -> Self {
        Normalizer { mean, std, features }
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn normalize(&self, store: &SeriesStore) -> SeriesStore {
        store.map(|s, f, v| (v - self.mean[s * self.features + f]) / self.std[s * self.features + f])
    }

    pub fn denormalize(&self, store: &SeriesStore) -> SeriesStore {
        store.map(|s, f, v| self.denormalize_value(s, f, v))
    }

    pub fn denormalize_value(&self, sensor: usize, feature: usize, v: f64) -> f64 {
        let i = sensor * self.features + feature;
        v * self.std[i] + self.mean[i]
    }

    /// Denormalizes a `[..., N, T, F]` tensor in place of its values.
    pub fn denormalize_tensor(&self, x: &Tensor) -> Tensor {
        let shape = x.shape();
        let (n, t, f) = (shape[shape.len() - 3], shape[shape.len() - 2], shape[shape.len() - 1]);
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| self.denormalize_value((i / (t * f)) % n, i % f, v))
            .collect();
        Tensor::new(shape, data).expect("same shape")
    }
}

/// Stride-1 `(input, target)` windows over one split.
#[derive(Debug, Clone)]
pub struct Windows {
    store: SeriesStore,
    history: usize,
    horizon: usize,
}

/// `count = len - H - U + 1` stride-1 windows.
pub fn make_windows(store: &SeriesStore, history: usize, horizon: usize) -> Result<Windows> {
    if store.len() < history + horizon {
        return Err(DataError::Config(format!(
            "split of {} timestamps is shorter than H + U = {}",
            store.len(),
            history + horizon
        )));
    }
    Ok(Windows {
        store: store.clone(),
        history,
        horizon,
    })
}

impl Windows {
    pub fn len(&self) -> usize {
        self.store.len() - self.history - self.horizon + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_sensors(&self) -> usize {
        self.store.n
    }

    pub fn features(&self) -> usize {
        self.store.f
    }

    /// `([N, H, F], [N, U, F])` for window `i`.
    pub fn sample(&self, i: usize) -> (Tensor, Tensor) {
        let (x, y) = self.batch(&[i]);
        let s = &self.store;
        (
            x.reshape(&[s.n, self.history, s.f]).expect("sample"),
            y.reshape(&[s.n, self.horizon, s.f]).expect("sample"),
        )
    }

    /// `([B, N, H, F], [B, N, U, F])` for the listed windows.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let s = &self.store;
        let (h, u) = (self.history, self.horizon);
        let mut x = Vec::with_capacity(indices.len() * s.n * h * s.f);
        let mut y = Vec::with_capacity(indices.len() * s.n * u * s.f);
        for &i in indices {
            assert!(i < self.len(), "window {i} out of range");
            for sensor in 0..s.n {
                let base = sensor * s.t * s.f;
                x.extend_from_slice(&s.values[base + i * s.f..base + (i + h) * s.f]);
                y.extend_from_slice(&s.values[base + (i + h) * s.f..base + (i + h + u) * s.f]);
            }
        }
        let b = indices.len();
        (
            Tensor::new(&[b, s.n, h, s.f], x).expect("batch shape"),
            Tensor::new(&[b, s.n, u, s.f], y).expect("batch shape"),
        )
    }

    /// Absolute timestamp (in the unsplit series) where window `i`'s input begins.
    pub fn input_start(&self, i: usize) -> usize {
        self.store.offset + i
    }
}

/// Normalized train/validation/test windows plus the train-fit statistics.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Windows,
    pub val: Windows,
    pub test: Windows,
    pub normalizer: Normalizer,
}

impl Dataset {
    /// Splits 60/20/20, fits the normalizer on train, and windows every split.
    pub fn prepare(store: &SeriesStore, history: usize, horizon: usize) -> Result<Self> {
        let splits = chronological_split(store, (0.6, 0.2, 0.2), history + horizon)?;
        let normalizer = Normalizer::fit(&splits.train);
        Ok(Dataset {
            train: make_windows(&normalizer.normalize(&splits.train.0), history, horizon)?,
            val: make_windows(&normalizer.normalize(&splits.val), history, horizon)?,
            test: make_windows(&normalizer.normalize(&splits.test), history, horizon)?,
            normalizer,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.train.n_sensors()
    }

    pub fn features(&self) -> usize {
        self.train.features()
    }
}

/// Synthetic traffic-like series: per sensor a base level plus a daily
/// sinusoid (sensor-specific amplitude and phase, with a weaker second
/// harmonic), damped on weekends, plus Gaussian noise of std `noise`.
pub fn synth_traffic(n: usize, t: usize, seed: u64, noise: f64) -> Result<SeriesStore> {
    if n == 0 || t == 0 {
        return Err(DataError::Config("N and T must be positive".into()));
    }
    let mut rng = seeded(seed);
    let day = TICKS_PER_DAY as f64;
    let mut values = Vec::with_capacity(n * t);
    for _ in 0..n {
        let base = rng.random_range(40.0..80.0);
        let amplitude = rng.random_range(15.0..35.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let harmonic = amplitude * rng.random_range(0.1..0.3);
        let harmonic_phase = rng.random_range(0.0..2.0 * PI);
        let weekend = rng.random_range(0.4..0.8);
        for tick in 0..t {
            let angle = 2.0 * PI * tick as f64 / day;
            let weekly = if (tick / TICKS_PER_DAY) % 7 < 5 { 1.0 } else { weekend };
            let daily = amplitude * (angle + phase).sin() + harmonic * (2.0 * angle + harmonic_phase).sin();
            let eps: f64 = StandardNormal.sample(&mut rng);
            values.push(base + weekly * daily + noise * eps);
        }
    }
    let ids = (0..n).map(|i| format!("s{i}")).collect();
    SeriesStore::new(values, n, t, 1, ids)
}
