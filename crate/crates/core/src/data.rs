//! Series ingestion, normalization and sliding windows.
//!
//! Columns are always ordered exogenous-first with the target last, matching
//! the model's input layout `[x^1 .. x^N, y]`.
//!
//! Splits are chronological. The first 90% of windows form the training
//! portion, whose last 10% is held back for validation; the remainder is the
//! test split. `K - 1` windows are dropped at each boundary so that no target
//! index of a later split is covered by an earlier split.

use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::attention::csv_err;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TRAIN_FRACTION: f64 = 0.9;
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Equal-length named columns, exogenous series first and the target last.
#[derive(Clone, Debug, PartialEq)]
pub struct MultivariateSeries {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl MultivariateSeries {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::shape("series names", &[names.len()], &[columns.len()]));
        }
        if names.len() < 2 {
            return Err(Error::contract(
                "a series needs at least one exogenous column and a target",
            ));
        }
        let len = columns[0].len();
        if let Some((name, c)) = names.iter().zip(&columns).find(|(_, c)| c.len() != len) {
            return Err(Error::contract(format!(
                "column `{name}` has {} values, expected {len}",
                c.len()
            )));
        }
        for (name, col) in names.iter().zip(&columns) {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("column `{name}` row {i}")));
            }
        }
        Ok(Self { names, columns })
    }

    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `N + 1`.
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn exogenous_names(&self) -> &[String] {
        &self.names[..self.names.len() - 1]
    }

    pub fn target_name(&self) -> &str {
        self.names.last().unwrap()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn target(&self) -> &[f64] {
        self.columns.last().unwrap()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    /// Writes a header row followed by one row per sample.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(&self.names).map_err(|e| csv_err(path, e))?;
        for i in 0..self.len() {
            w.write_record(self.columns.iter().map(|c| c[i].to_string()))
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Column names from the header row of a CSV file.
pub fn csv_header(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    Ok(reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect())
}

/// Reads the selected columns of a headed CSV file, ordered `[exo.., target]`.
pub fn load_csv(path: &Path, target: &str, exogenous: &[String]) -> Result<MultivariateSeries> {
    if exogenous.is_empty() {
        return Err(Error::contract("at least one exogenous column is required"));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();

    let mut names: Vec<String> = exogenous.to_vec();
    names.push(target.to_string());
    let mut indices = Vec::with_capacity(names.len());
    for name in &names {
        let idx = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema {
                missing: name.clone(),
                available: header.clone(),
            })?;
        indices.push(idx);
    }

    let mut columns = vec![Vec::new(); names.len()];
    for (r, record) in reader.records().enumerate() {
        // 1-based file line; the header is line 1
        let row = r + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            msg: e.to_string(),
        })?;
        for ((col, &idx), name) in columns.iter_mut().zip(&indices).zip(&names) {
            let cell = record.get(idx).unwrap_or("");
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                msg: if cell.is_empty() {
                    "blank cell".to_string()
                } else {
                    format!("not a number: `{cell}`")
                },
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    msg: format!("non-finite value `{cell}`"),
                });
            }
            col.push(value);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::contract(format!("{} has no data rows", path.display())));
    }
    MultivariateSeries::new(names, columns)
}

/// Per-column z-score statistics (population standard deviation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Mean and population std of every column over `rows`.
pub fn fit_stats(series: &MultivariateSeries, rows: Range<usize>) -> Result<Vec<ColumnStats>> {
    fit_stats_with(series, rows, true)
}

/// With `strict` unset, a constant column gets `std = 1` (centering only).
fn fit_stats_with(series: &MultivariateSeries, rows: Range<usize>, strict: bool) -> Result<Vec<ColumnStats>> {
    if rows.is_empty() || rows.end > series.len() {
        return Err(Error::contract(format!(
            "normalization rows {rows:?} invalid for a series of length {}",
            series.len()
        )));
    }
    let n = rows.len() as f64;
    series
        .names
        .iter()
        .zip(&series.columns)
        .map(|(name, col)| {
            let slice = &col[rows.clone()];
            let mean = slice.iter().sum::<f64>() / n;
            let var = slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if var <= 0.0 && !strict {
                log::warn!("column `{name}` is constant on the training split; centering only");
                return Ok(ColumnStats { mean, std: 1.0 });
            }
            if var <= 0.0 {
                return Err(Error::contract(format!(
                    "column `{name}` has zero variance on the training split"
                )));
            }
            Ok(ColumnStats {
                mean,
                std: var.sqrt(),
            })
        })
        .collect()
}

/// Normalizes every column of `series` with statistics fitted on `fit_rows` only.
pub fn normalize(
    series: &MultivariateSeries,
    fit_rows: Range<usize>,
) -> Result<(MultivariateSeries, Vec<ColumnStats>)> {
    let stats = fit_stats(series, fit_rows)?;
    Ok((apply_stats(series, &stats), stats))
}

pub fn apply_stats(series: &MultivariateSeries, stats: &[ColumnStats]) -> MultivariateSeries {
    let columns = series
        .columns
        .iter()
        .zip(stats)
        .map(|(c, s)| c.iter().map(|&v| s.normalize(v)).collect())
        .collect();
    MultivariateSeries {
        names: series.names.clone(),
        columns,
    }
}

pub fn denormalize(series: &MultivariateSeries, stats: &[ColumnStats]) -> MultivariateSeries {
    let columns = series
        .columns
        .iter()
        .zip(stats)
        .map(|(c, s)| c.iter().map(|&v| s.denormalize(v)).collect())
        .collect();
    MultivariateSeries {
        names: series.names.clone(),
        columns,
    }
}

/// A series at half its sampling rate plus the samples that were dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct ResampledSeries {
    /// Original indices 0, 2, 4, ...
    pub kept: MultivariateSeries,
    /// Original indices 1, 3, 5, ...
    pub held_out: MultivariateSeries,
}

/// Keeps even-index samples; odd-index samples are retained as ground truth
/// for half-step offsets.
pub fn resample_half(series: &MultivariateSeries) -> Result<ResampledSeries> {
    if series.len() < 2 {
        return Err(Error::contract("resampling needs at least two samples"));
    }
    let pick = |parity: usize| -> MultivariateSeries {
        MultivariateSeries {
            names: series.names.clone(),
            columns: series
                .columns
                .iter()
                .map(|c| c.iter().skip(parity).step_by(2).copied().collect())
                .collect(),
        }
    };
    Ok(ResampledSeries {
        kept: pick(0),
        held_out: pick(1),
    })
}

/// Number of windows for a series of length `len`.
pub fn window_count(len: usize, window: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(window + horizon)
}

/// Normalized sliding windows with chronological splits.
///
/// Window `i` has inputs at rows `i .. i + T` and targets at rows
/// `i + T .. i + T + K`.
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    names: Vec<String>,
    window: usize,
    horizon: usize,
    len: usize,
    /// Normalized values, row-major `[len, P]`.
    values: Vec<f64>,
    /// Normalized held-out targets at odd original indices, when resampled.
    held_out: Option<Vec<f64>>,
    pub stats: Vec<ColumnStats>,
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

/// Chronological split of `n` windows with a purge gap of `gap` windows.
pub fn split_ranges(n: usize, gap: usize) -> (Range<usize>, Range<usize>, Range<usize>) {
    let portion = ((n as f64 * TRAIN_FRACTION).floor() as usize).max(1).min(n);
    let test = (portion + gap).min(n)..n;
    let n_val = (portion as f64 * VALIDATION_FRACTION).floor() as usize;
    if n_val == 0 {
        return (0..portion, portion..portion, test);
    }
    let train_end = portion.saturating_sub(n_val + gap);
    (0..train_end, portion - n_val..portion, test)
}

/// Builds windows over `series` and normalizes with training-portion statistics.
pub fn make_windows(series: &MultivariateSeries, window: usize, horizon: usize) -> Result<WindowedDataset> {
    WindowedDataset::build(series, None, window, horizon, None)
}

/// Like [`make_windows`] over the kept half, keeping the dropped targets for
/// evaluation at half-step offsets.
pub fn make_windows_resampled(
    resampled: &ResampledSeries,
    window: usize,
    horizon: usize,
) -> Result<WindowedDataset> {
    WindowedDataset::build(&resampled.kept, Some(&resampled.held_out), window, horizon, None)
}

impl WindowedDataset {
    /// General constructor. `stats`, when given, replaces the statistics
    /// fitted on the training portion, e.g. those stored with a trained model.
    pub fn build(
        series: &MultivariateSeries,
        held_out: Option<&MultivariateSeries>,
        window: usize,
        horizon: usize,
        stats: Option<&[ColumnStats]>,
    ) -> Result<Self> {
        if window == 0 || horizon == 0 {
            return Err(Error::contract("window and horizon must be positive"));
        }
        let len = series.len();
        let minimum = window + horizon;
        if len < minimum {
            return Err(Error::contract(format!(
                "series of length {len} is too short: windows of T = {window} with K = {horizon} need at least {minimum} rows"
            )));
        }
        let n = window_count(len, window, horizon);
        let (train, validation, test) = split_ranges(n, horizon - 1);
        let portion_end = validation.end.max(train.end);
        if portion_end == 0 {
            return Err(Error::contract(format!(
                "series of length {len} leaves no training windows"
            )));
        }
        // rows touched by any training-portion window, inputs and targets
        let fit_rows = 0..(portion_end - 1 + window + horizon);
        let stats = match stats {
            Some(s) if s.len() != series.width() => {
                return Err(Error::shape("normalization stats", &[s.len()], &[series.width()]))
            }
            Some(s) => s.to_vec(),
            None => fit_stats_with(series, fit_rows, false)?,
        };
        let normalized = apply_stats(series, &stats);

        let p = series.width();
        let mut values = Vec::with_capacity(len * p);
        for i in 0..len {
            values.extend(normalized.columns.iter().map(|c| c[i]));
        }
        let held_out = held_out.map(|h| {
            let s = stats[p - 1];
            h.target().iter().map(|&v| s.normalize(v)).collect()
        });
        Ok(Self {
            names: series.names.clone(),
            window,
            horizon,
            len,
            values,
            held_out,
            stats,
            train,
            validation,
            test,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    /// Length of the (possibly resampled) series.
    pub fn series_len(&self) -> usize {
        self.len
    }

    pub fn num_windows(&self) -> usize {
        window_count(self.len, self.window, self.horizon)
    }

    pub fn is_resampled(&self) -> bool {
        self.held_out.is_some()
    }

    fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width() + col]
    }

    fn target_stats(&self) -> ColumnStats {
        *self.stats.last().unwrap()
    }

    /// Normalized inputs of window `i`, shape `[T, P]`.
    pub fn input(&self, i: usize) -> Tensor {
        let p = self.width();
        let rows = &self.values[i * p..(i + self.window) * p];
        Tensor::from_parts([self.window, p], rows.to_vec())
    }

    /// Index of the last input row of window `i`.
    pub fn window_end(&self, i: usize) -> usize {
        i + self.window - 1
    }

    /// Normalized targets at integer offsets `1..=K`.
    pub fn targets(&self, i: usize) -> Vec<f64> {
        let p = self.width();
        (1..=self.horizon)
            .map(|k| self.value(self.window_end(i) + k, p - 1))
            .collect()
    }

    /// Normalized target at the last input row, the persistence forecast.
    pub fn last_target(&self, i: usize) -> f64 {
        self.value(self.window_end(i), self.width() - 1)
    }

    /// Normalized ground truth at `offset` past the end of window `i`, if any
    /// sample exists there. Half-step offsets resolve to held-out samples of a
    /// resampled series: resampled row `j` is original row `2j`.
    pub fn truth(&self, i: usize, offset: f64) -> Option<f64> {
        truth_index(self.window_end(i), offset, self.len, self.held_out.as_ref().map(Vec::len))
            .map(|idx| match idx {
                TruthIndex::Kept(r) => self.value(r, self.width() - 1),
                TruthIndex::HeldOut(r) => self.held_out.as_ref().unwrap()[r],
            })
    }

    pub fn denormalize_target(&self, v: f64) -> f64 {
        self.target_stats().denormalize(v)
    }
}

/// Where the ground truth for an offset lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruthIndex {
    Kept(usize),
    HeldOut(usize),
}

/// Resolves `offset` past row `end` to a kept or held-out index.
pub fn truth_index(end: usize, offset: f64, kept_len: usize, held_len: Option<usize>) -> Option<TruthIndex> {
    if !(offset > 0.0) {
        return None;
    }
    if offset.fract() == 0.0 {
        let r = end + offset as usize;
        return (r < kept_len).then_some(TruthIndex::Kept(r));
    }
    let held_len = held_len?;
    let doubled = 2.0 * offset;
    if doubled.fract() != 0.0 {
        return None;
    }
    // original index 2 * end + 2 * offset, odd by construction here
    let original = 2 * end + doubled as usize;
    let r = (original - 1) / 2;
    (r < held_len).then_some(TruthIndex::HeldOut(r))
}
