//! CSV ingestion, chronological splits with train-only standardization, and
//! sliding-window batching.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const STATS_FORMAT_VERSION: u32 = 1;

/// Multivariate series stored variable-major as `[N, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub columns: Vec<String>,
    pub timestamps: Vec<String>,
    pub values: Tensor<f64>,
}

impl Dataset {
    pub fn from_rows(name: &str, columns: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = columns.len();
        let t = rows.len();
        let mut re = vec![0.0; n * t];
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::dim(format!("row {j} has {} values, expected {n}", row.len())));
            }
            for (i, &v) in row.iter().enumerate() {
                re[i * t + j] = v;
            }
        }
        Ok(Dataset {
            name: name.to_string(),
            columns,
            timestamps: (0..t).map(|j| j.to_string()).collect(),
            values: Tensor::from_real(&[n, t], re)?,
        })
    }

    pub fn variables(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn series(&self, var: usize) -> &[f64] {
        let t = self.len();
        &self.values.re()[var * t..(var + 1) * t]
    }
}

/// Reads a CSV with a header row; the first column is the timestamp and every
/// other column is a variable. `row` in parse errors is the 1-based file line.
pub fn load_csv(path: &Path, name: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                row: 1,
                column: 0,
                message: format!("{other:?}"),
            },
        })?;
    let header = reader.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: header.len(),
            message: "need a timestamp column and at least one variable".into(),
        });
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = columns.len();
    let mut timestamps = Vec::new();
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(k + 2);
        if record.len() != n + 1 {
            return Err(Error::Parse {
                row: line,
                column: record.len().min(n + 1),
                message: format!("expected {} fields, found {}", n + 1, record.len()),
            });
        }
        let mut row = Vec::with_capacity(n);
        for (i, cell) in record.iter().enumerate().skip(1) {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: i + 1,
                message: if cell.is_empty() {
                    format!("missing value for {}", columns[i - 1])
                } else {
                    format!("non-numeric value {cell:?} for {}", columns[i - 1])
                },
            })?;
            row.push(v);
        }
        timestamps.push(record[0].to_string());
        rows.push(row);
    }
    let mut ds = Dataset::from_rows(name, columns, &rows)?;
    ds.timestamps = timestamps;
    Ok(ds)
}

/// Chronological cut points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// train : val : test fractions; test and train lengths are floored and
    /// validation takes the remainder.
    pub ratios: [f64; 3],
    /// Explicit `[train_end, val_end, test_end]`, overriding `ratios`.
    pub borders: Option<[usize; 3]>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.6, 0.2, 0.2],
            borders: None,
        }
    }
}

impl SplitConfig {
    pub fn ratios(train: f64, val: f64, test: f64) -> Self {
        SplitConfig {
            ratios: [train, val, test],
            borders: None,
        }
    }

    /// `[train_end, val_end, test_end]` for a series of length `t`.
    pub fn borders_for(&self, t: usize) -> Result<[usize; 3]> {
        if let Some(b) = self.borders {
            if !(b[0] <= b[1] && b[1] <= b[2] && b[2] <= t) {
                return Err(Error::Usage(format!("split.borders {b:?} must be ordered and ≤ {t}")));
            }
            return Ok(b);
        }
        let [a, b, c] = self.ratios;
        if a <= 0.0 || b < 0.0 || c <= 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Usage(format!("split.ratios {:?} must be non-negative and sum to 1", self.ratios)));
        }
        let floor = |r: f64| ((t as f64) * r + 1e-9).floor() as usize;
        let train = floor(a);
        let test = floor(c);
        let val = t - train - test;
        Ok([train, train + val, t])
    }
}

/// Per-variable train statistics used for z-scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub format_version: u32,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics of `values[:, ..end]`. Constant variables get
    /// unit scale.
    pub fn fit(values: &Tensor<f64>, end: usize) -> Self {
        let (n, t) = (values.shape()[0], values.shape()[1]);
        let mut mean = Vec::with_capacity(n);
        let mut std = Vec::with_capacity(n);
        for i in 0..n {
            let row = &values.re()[i * t..i * t + end];
            let m = row.iter().sum::<f64>() / end as f64;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / end as f64;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s > 0.0 { s } else { 1.0 });
        }
        Standardizer {
            format_version: STATS_FORMAT_VERSION,
            mean,
            std,
        }
    }

    pub fn apply(&self, values: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.map_rows(values, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, values: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.map_rows(values, |v, m, s| v * s + m)
    }

    fn map_rows(&self, values: &Tensor<f64>, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor<f64>> {
        let n = values.shape()[0];
        if n != self.mean.len() {
            return Err(Error::dim(format!(
                "standardizer holds {} variables, data has {n}",
                self.mean.len()
            )));
        }
        let t = values.len() / n.max(1);
        let mut out = values.re().to_vec();
        for i in 0..n {
            for v in &mut out[i * t..(i + 1) * t] {
                *v = f(*v, self.mean[i], self.std[i]);
            }
        }
        Tensor::from_real(values.shape(), out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Standardizer = serde_json::from_str(&text)?;
        if s.format_version != STATS_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "standardizer",
                found: s.format_version,
                expected: STATS_FORMAT_VERSION,
            });
        }
        Ok(s)
    }
}

/// Half-open range of time steps; windows start at `start` and end by `end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitView {
    pub start: usize,
    pub end: usize,
}

impl SplitView {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Standardized series and the three chronological views.
#[derive(Clone, Debug)]
pub struct Splits {
    pub values: Tensor<f64>,
    pub stats: Standardizer,
    /// `[train_end, val_end, test_end]`.
    pub borders: [usize; 3],
    pub train: SplitView,
    /// Starts `L` steps before the train border so the first target follows it.
    pub val: SplitView,
    pub test: SplitView,
}

impl Splits {
    /// Standardized training portion as `[N, train_len]`.
    pub fn train_series(&self) -> Tensor<f64> {
        slice_time(&self.values, self.train.start, self.train.end)
    }
}

pub fn slice_time(values: &Tensor<f64>, start: usize, end: usize) -> Tensor<f64> {
    let (n, t) = (values.shape()[0], values.shape()[1]);
    let len = end - start;
    let mut re = Vec::with_capacity(n * len);
    for i in 0..n {
        re.extend_from_slice(&values.re()[i * t + start..i * t + end]);
    }
    Tensor::from_real(&[n, len], re).expect("slice shape")
}

/// Cuts chronologically, z-scores with train statistics, and checks every
/// view holds at least one `lookback + horizon` window.
pub fn split_and_standardize(d: &Dataset, split: &SplitConfig, lookback: usize, horizon: usize) -> Result<Splits> {
    let t = d.len();
    let borders = split.borders_for(t)?;
    let [train_end, val_end, test_end] = borders;
    if train_end < 2 {
        return Err(Error::contract(format!("training split of {train_end} steps is too short")));
    }
    let stats = Standardizer::fit(&d.values, train_end);
    let values = stats.apply(&d.values)?;
    let train = SplitView { start: 0, end: train_end };
    let val = SplitView {
        start: train_end.saturating_sub(lookback),
        end: val_end,
    };
    let test = SplitView {
        start: val_end.saturating_sub(lookback),
        end: test_end,
    };
    let need = lookback + horizon;
    for (name, v) in [("train", train), ("val", val), ("test", test)] {
        if v.len() < need {
            return Err(Error::contract(format!(
                "{name} split spans {} steps, one window needs {need}",
                v.len()
            )));
        }
    }
    Ok(Splits {
        values,
        stats,
        borders,
        train,
        val,
        test,
    })
}

pub fn window_count(view_len: usize, lookback: usize, horizon: usize) -> usize {
    (view_len + 1).saturating_sub(lookback + horizon)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    /// `[B, N, L]`.
    pub inputs: Tensor<f64>,
    /// `[B, N, F]`.
    pub targets: Tensor<f64>,
    /// Absolute start step of each window.
    pub origins: Vec<usize>,
}

impl WindowBatch {
    pub fn size(&self) -> usize {
        self.origins.len()
    }
}

/// Batches over every window of a view, each start offset exactly once.
pub struct WindowIter<'a> {
    values: &'a Tensor<f64>,
    lookback: usize,
    horizon: usize,
    batch: usize,
    origins: Vec<usize>,
    next: usize,
}

impl<'a> WindowIter<'a> {
    pub fn new<R: Rng>(
        values: &'a Tensor<f64>,
        view: SplitView,
        lookback: usize,
        horizon: usize,
        batch: usize,
        shuffle: Option<&mut R>,
    ) -> Self {
        let count = window_count(view.len(), lookback, horizon);
        let mut origins: Vec<usize> = (view.start..view.start + count).collect();
        if let Some(rng) = shuffle {
            origins.shuffle(rng);
        }
        WindowIter {
            values,
            lookback,
            horizon,
            batch: batch.max(1),
            origins,
            next: 0,
        }
    }

    pub fn windows(&self) -> usize {
        self.origins.len()
    }
}

impl Iterator for WindowIter<'_> {
    type Item = WindowBatch;

    fn next(&mut self) -> Option<WindowBatch> {
        if self.next >= self.origins.len() {
            return None;
        }
        let end = (self.next + self.batch).min(self.origins.len());
        let origins = self.origins[self.next..end].to_vec();
        self.next = end;
        let (n, t) = (self.values.shape()[0], self.values.shape()[1]);
        let (l, f) = (self.lookback, self.horizon);
        let b = origins.len();
        let mut xs = Vec::with_capacity(b * n * l);
        let mut ys = Vec::with_capacity(b * n * f);
        let data = self.values.re();
        for &o in &origins {
            for i in 0..n {
                let row = &data[i * t..(i + 1) * t];
                xs.extend_from_slice(&row[o..o + l]);
                ys.extend_from_slice(&row[o + l..o + l + f]);
            }
        }
        Some(WindowBatch {
            inputs: Tensor::from_real(&[b, n, l], xs).expect("window shape"),
            targets: Tensor::from_real(&[b, n, f], ys).expect("window shape"),
            origins,
        })
    }
}

/// Window stream over `view`; shuffled when an RNG is given.
pub fn window_iter<'a, R: Rng>(
    values: &'a Tensor<f64>,
    view: SplitView,
    lookback: usize,
    horizon: usize,
    batch: usize,
    shuffle: Option<&mut R>,
) -> WindowIter<'a> {
    WindowIter::new(values, view, lookback, horizon, batch, shuffle)
}

/// Converts a batch tensor to the model's scalar type.
pub fn to_scalar<T: Scalar>(t: &Tensor<f64>) -> Tensor<T> {
    t.cast()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(t: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..t).map(|j| vec![j as f64, (j * j) as f64]).collect();
        Dataset::from_rows("toy", vec!["a".into(), "b".into()], &rows).unwrap()
    }

    #[test]
    fn ratio_borders() {
        assert_eq!(SplitConfig::ratios(0.6, 0.2, 0.2).borders_for(10).unwrap(), [6, 8, 10]);
        assert_eq!(SplitConfig::ratios(0.7, 0.1, 0.2).borders_for(17420).unwrap(), [12194, 13936, 17420]);
        assert!(SplitConfig::ratios(0.6, 0.3, 0.2).borders_for(10).is_err());
    }

    #[test]
    fn train_is_standardized() {
        let s = split_and_standardize(&toy(200), &SplitConfig::default(), 4, 2).unwrap();
        let t = s.values.shape()[1];
        for i in 0..2 {
            let row = &s.values.re()[i * t..i * t + s.borders[0]];
            let m = row.iter().sum::<f64>() / row.len() as f64;
            let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / row.len() as f64;
            assert!(m.abs() < 1e-10 && (v.sqrt() - 1.0).abs() < 1e-10);
            let test = &s.values.re()[i * t + s.borders[1]..(i + 1) * t];
            assert!(test.iter().sum::<f64>() / test.len() as f64 > 1.0);
        }
    }

    #[test]
    fn short_split_is_rejected() {
        let err = split_and_standardize(&toy(10), &SplitConfig::default(), 4, 3).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn window_counts_and_batches() {
        let ds = toy(300);
        let view = SplitView { start: 0, end: 15 };
        let it = window_iter::<ChaCha8Rng>(&ds.values, view, 4, 2, 32, None);
        assert_eq!(it.windows(), 10);
        let view = SplitView { start: 0, end: 105 };
        let sizes: Vec<usize> = window_iter::<ChaCha8Rng>(&ds.values, view, 4, 2, 32, None).map(|b| b.size()).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
    }

    #[test]
    fn windows_are_contiguous() {
        let ds = toy(50);
        let view = SplitView { start: 10, end: 30 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for batch in window_iter(&ds.values, view, 5, 3, 4, Some(&mut rng)) {
            for (k, &o) in batch.origins.iter().enumerate() {
                assert!(o >= 10 && o + 8 <= 30);
                assert_eq!(batch.inputs.at(&[k, 0, 0]).re, o as f64);
                assert_eq!(batch.targets.at(&[k, 0, 0]).re, (o + 5) as f64);
            }
        }
    }
}
