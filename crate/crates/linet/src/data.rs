//! Dataset ingestion and batch construction.
//!
//! CSV layout: header row, first column `date` (ISO timestamps, strictly
//! increasing, uniform stride), remaining columns numeric channels.
//! Splits are chronological; windows never cross a split boundary; the
//! normalizer is fitted on the train slice only.

use std::ops::Range;
use std::path::Path;

use crate::embedding::{calendar_features, CalendarFeatures, PrecomputedEmbeddings};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A loaded multivariate series: `values[c][t]`.
#[derive(Clone, Debug)]
pub struct RawSeries {
    pub timestamps: Vec<String>,
    pub channel_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl RawSeries {
    pub fn channels(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

fn parse_timestamp_ordinal(ts: &str, row: usize) -> Result<i64> {
    use chrono::{NaiveDate, NaiveDateTime};
    let formats = [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
    ];
    for fmt in formats {
        if let Ok(dt) = NaiveDateTime::parse_from_str(ts, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    match NaiveDate::parse_from_str(ts, "%Y-%m-%d") {
        Ok(d) => Ok(d
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
            .and_utc()
            .timestamp()),
        Err(e) => Err(Error::data(format!(
            "row {row}: cannot parse timestamp {ts:?}: {e}"
        ))),
    }
}

/// Loads a wide CSV: `date` column plus one numeric column per channel.
pub fn load_csv(path: &Path) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::io(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("missing header row: {e}")))?
        .clone();
    if headers.is_empty() || headers.get(0).map(str::trim) != Some("date") {
        return Err(Error::data(format!(
            "first column must be named 'date', got {:?}",
            headers.get(0).unwrap_or("")
        )));
    }
    let channel_names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    if channel_names.is_empty() {
        return Err(Error::data("no channel columns after 'date'".to_string()));
    }
    let mut timestamps = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); channel_names.len()];
    let mut prev_ordinal: Option<i64> = None;
    let mut stride: Option<i64> = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // header is row 1
        let record = record.map_err(|e| Error::data(format!("row {row}: {e}")))?;
        if record.len() != channel_names.len() + 1 {
            return Err(Error::data(format!(
                "row {row}: expected {} fields, got {}",
                channel_names.len() + 1,
                record.len()
            )));
        }
        let ts = record.get(0).unwrap().trim().to_string();
        let ordinal = parse_timestamp_ordinal(&ts, row)?;
        if let Some(prev) = prev_ordinal {
            if ordinal <= prev {
                return Err(Error::data(format!(
                    "row {row}: timestamp {ts:?} is not strictly increasing"
                )));
            }
            let delta = ordinal - prev;
            match stride {
                None => stride = Some(delta),
                Some(s) if s != delta => {
                    return Err(Error::data(format!(
                        "row {row}: sampling stride changed from {s}s to {delta}s"
                    )))
                }
                _ => {}
            }
        }
        prev_ordinal = Some(ordinal);
        for (c, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|e| {
                Error::data(format!(
                    "row {row}, column {:?}: bad number {cell:?}: {e}",
                    channel_names[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "row {row}, column {:?}: non-finite value",
                    channel_names[c]
                )));
            }
            values[c].push(v);
        }
        timestamps.push(ts);
    }
    if timestamps.is_empty() {
        return Err(Error::data("dataset holds no rows".to_string()));
    }
    Ok(RawSeries {
        timestamps,
        channel_names,
        values,
    })
}

/// Chronological split fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train <= 0.0 || self.val <= 0.0 || self.test <= 0.0 {
            return Err(Error::config("split fractions must be positive".to_string()));
        }
        if ((self.train + self.val + self.test) - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions must sum to 1, got {}",
                self.train + self.val + self.test
            )));
        }
        Ok(())
    }
}

/// Index ranges of the train/val/test slices, in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Splits `[0, len)` into contiguous, ordered, non-overlapping slices at
/// floor-of-fraction boundaries.
pub fn chronological_split(len: usize, spec: &SplitSpec) -> Result<SplitRanges> {
    spec.validate()?;
    let b1 = (spec.train * len as f64).floor() as usize;
    let b2 = ((spec.train + spec.val) * len as f64).floor() as usize;
    if b1 == 0 || b2 <= b1 || len <= b2 {
        return Err(Error::config(format!(
            "series of length {len} is too short to split {}/{}/{}",
            spec.train, spec.val, spec.test
        )));
    }
    Ok(SplitRanges {
        train: 0..b1,
        val: b1..b2,
        test: b2..len,
    })
}

/// Smallest series length whose split gives every slice at least one
/// `lookback + horizon` window.
pub fn min_series_len(spec: &SplitSpec, lookback: usize, horizon: usize) -> usize {
    let need = lookback + horizon;
    let mut len = need;
    loop {
        if let Ok(r) = chronological_split(len, spec) {
            if r.train.len() >= need && r.val.len() >= need && r.test.len() >= need {
                return len;
            }
        }
        len += 1;
    }
}

/// Validates that every split can hold at least one window.
pub fn check_split_capacity(
    ranges: &SplitRanges,
    spec: &SplitSpec,
    lookback: usize,
    horizon: usize,
) -> Result<()> {
    let need = lookback + horizon;
    let total = ranges.test.end;
    if ranges.train.len() < need || ranges.val.len() < need || ranges.test.len() < need {
        return Err(Error::config(format!(
            "series of length {total} cannot hold a lookback {lookback} + horizon {horizon} \
             window in every split; minimum length is {}",
            min_series_len(spec, lookback, horizon)
        )));
    }
    Ok(())
}

/// Per-channel z-score normalizer fitted on the train slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population statistics over `range`; constant channels clamp std to 1.
    pub fn fit(series: &RawSeries, range: Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > series.len() {
            return Err(Error::config(format!(
                "normalizer range {range:?} invalid for series of length {}",
                series.len()
            )));
        }
        let n = range.len() as f64;
        let mut mean = Vec::with_capacity(series.channels());
        let mut std = Vec::with_capacity(series.channels());
        for channel in &series.values {
            let slice = &channel[range.clone()];
            let m: f64 = slice.iter().sum::<f64>() / n;
            let var: f64 = slice.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s > 0.0 { s } else { 1.0 });
        }
        Ok(Normalizer { mean, std })
    }

    pub fn apply(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn invert(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }
}

/// Ordered history-window start indices inside `range` at the given stride.
///
/// Windows cover `[s, s+lookback)` history and `[s+lookback, s+lookback+horizon)`
/// target, entirely inside `range`. Too-short ranges give zero windows.
pub fn make_windows(range: &Range<usize>, lookback: usize, horizon: usize, stride: usize) -> Vec<usize> {
    let need = lookback + horizon;
    if range.len() < need || stride == 0 {
        return Vec::new();
    }
    (range.start..=range.end - need).step_by(stride).collect()
}

/// Precast per-step/per-entity vectors from a precomputed-embedding file.
#[derive(Clone, Debug)]
pub struct PreparedFileEmbeddings<T: Scalar> {
    pub date_per_step: Vec<Vec<T>>,
    pub store: Vec<T>,
    pub item: Vec<Vec<T>>,
    pub dim: usize,
}

impl<T: Scalar> PreparedFileEmbeddings<T> {
    /// Resolves one vector per timestamp (keyed by the raw timestamp string),
    /// the store vector (`store_<id>`), and one vector per channel name.
    pub fn build(
        series: &RawSeries,
        store_id: usize,
        provider: &PrecomputedEmbeddings,
        expected_dim: usize,
    ) -> Result<Self> {
        if provider.dim() != expected_dim {
            return Err(Error::config(format!(
                "embedding file dimension {} does not match configured d_embed {expected_dim}",
                provider.dim()
            )));
        }
        let cast = |v: &[f64]| -> Vec<T> { v.iter().map(|&x| T::from_f64(x)).collect() };
        let mut date_per_step = Vec::with_capacity(series.len());
        for ts in &series.timestamps {
            date_per_step.push(cast(provider.require(ts)?));
        }
        let store = cast(provider.require(&format!("store_{store_id}"))?);
        let mut item = Vec::with_capacity(series.channels());
        for name in &series.channel_names {
            item.push(cast(provider.require(name)?));
        }
        Ok(PreparedFileEmbeddings {
            date_per_step,
            store,
            item,
            dim: expected_dim,
        })
    }
}

/// Constant embedding tensors carried by a batch when a vector file is used.
#[derive(Clone, Debug)]
pub struct FileEmbeddings<T: Scalar> {
    pub hist_date: Tensor<T>,
    pub hist_store: Tensor<T>,
    pub fut_date: Tensor<T>,
    pub fut_store: Tensor<T>,
    pub item: Tensor<T>,
}

/// One training/evaluation batch of adjacent history + target windows.
#[derive(Clone, Debug)]
pub struct WindowBatch<T: Scalar> {
    /// History `[B, C, T]`.
    pub x: Tensor<T>,
    /// Target `[B, C, P]`.
    pub y: Tensor<T>,
    /// Per-step calendar features, row-major `[B, T]`.
    pub hist_calendar: Vec<CalendarFeatures>,
    /// Per-step calendar features, row-major `[B, P]`.
    pub fut_calendar: Vec<CalendarFeatures>,
    /// Store id per window.
    pub store_ids: Vec<usize>,
    /// Item id per channel.
    pub item_ids: Vec<usize>,
    pub file_embeddings: Option<FileEmbeddings<T>>,
}

/// A series prepared for batching: normalized values plus parsed calendars.
#[derive(Clone, Debug)]
pub struct Dataset<T: Scalar> {
    pub values: Vec<Vec<T>>,
    pub calendars: Vec<CalendarFeatures>,
    pub timestamps: Vec<String>,
    pub channel_names: Vec<String>,
    pub store_id: usize,
    pub item_ids: Vec<usize>,
    pub file: Option<PreparedFileEmbeddings<T>>,
}

impl<T: Scalar> Dataset<T> {
    /// Normalizes the whole series with a (train-fitted) normalizer and
    /// parses every timestamp once.
    pub fn prepare(series: &RawSeries, norm: &Normalizer) -> Result<Self> {
        let mut values = Vec::with_capacity(series.channels());
        for (c, channel) in series.values.iter().enumerate() {
            values.push(
                channel
                    .iter()
                    .map(|&v| T::from_f64(norm.apply(c, v)))
                    .collect(),
            );
        }
        let calendars: Result<Vec<CalendarFeatures>> = series
            .timestamps
            .iter()
            .map(|ts| calendar_features(ts))
            .collect();
        Ok(Dataset {
            values,
            calendars: calendars?,
            timestamps: series.timestamps.clone(),
            channel_names: series.channel_names.clone(),
            store_id: 0,
            item_ids: (0..series.channels()).collect(),
            file: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.calendars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calendars.is_empty()
    }

    /// Assembles a batch from window start indices.
    pub fn batch(&self, starts: &[usize], lookback: usize, horizon: usize) -> Result<WindowBatch<T>> {
        if starts.is_empty() {
            return Err(Error::config("cannot assemble an empty batch".to_string()));
        }
        let (b, c) = (starts.len(), self.channels());
        for &s in starts {
            if s + lookback + horizon > self.len() {
                return Err(Error::config(format!(
                    "window at {s} overruns series of length {}",
                    self.len()
                )));
            }
        }
        let mut x = Vec::with_capacity(b * c * lookback);
        let mut y = Vec::with_capacity(b * c * horizon);
        let mut hist_calendar = Vec::with_capacity(b * lookback);
        let mut fut_calendar = Vec::with_capacity(b * horizon);
        for &s in starts {
            for channel in &self.values {
                x.extend_from_slice(&channel[s..s + lookback]);
            }
            for channel in &self.values {
                y.extend_from_slice(&channel[s + lookback..s + lookback + horizon]);
            }
        }
        for &s in starts {
            hist_calendar.extend_from_slice(&self.calendars[s..s + lookback]);
            fut_calendar.extend_from_slice(&self.calendars[s + lookback..s + lookback + horizon]);
        }
        let file_embeddings = match &self.file {
            Some(prep) => Some(self.file_batch(prep, starts, lookback, horizon)?),
            None => None,
        };
        Ok(WindowBatch {
            x: Tensor::new(&[b, c, lookback], x)?,
            y: Tensor::new(&[b, c, horizon], y)?,
            hist_calendar,
            fut_calendar,
            store_ids: vec![self.store_id; b],
            item_ids: self.item_ids.clone(),
            file_embeddings,
        })
    }

    fn file_batch(
        &self,
        prep: &PreparedFileEmbeddings<T>,
        starts: &[usize],
        lookback: usize,
        horizon: usize,
    ) -> Result<FileEmbeddings<T>> {
        let (b, c, d) = (starts.len(), self.channels(), prep.dim);
        let gather = |len: usize, offset: usize| -> Result<Tensor<T>> {
            let mut data = Vec::with_capacity(b * len * d);
            for &s in starts {
                for i in 0..len {
                    data.extend_from_slice(&prep.date_per_step[s + offset + i]);
                }
            }
            Tensor::new(&[b, len, d], data)
        };
        let hist_date = gather(lookback, 0)?;
        let fut_date = gather(horizon, lookback)?;
        let broadcast_store = |len: usize| -> Result<Tensor<T>> {
            let mut data = Vec::with_capacity(b * len * d);
            for _ in 0..b * len {
                data.extend_from_slice(&prep.store);
            }
            Tensor::new(&[b, len, d], data)
        };
        let mut item_data = Vec::with_capacity(b * c * d);
        for _ in 0..b {
            for row in &prep.item {
                item_data.extend_from_slice(row);
            }
        }
        Ok(FileEmbeddings {
            hist_date,
            hist_store: broadcast_store(lookback)?,
            fut_date,
            fut_store: broadcast_store(horizon)?,
            item: Tensor::new(&[b, c, d], item_data)?,
        })
    }
}
