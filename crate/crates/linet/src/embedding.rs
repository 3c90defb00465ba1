//! Date and entity embeddings plus the sentence-vector operations they rank
//! with: mean pooling, cosine similarity, and the CoSENT pairwise loss.
//!
//! Embeddings come from learnable lookup tables keyed on calendar fields and
//! entity ids, or from a precomputed-vector file (`key<TAB>v1,v2,...,vd`).
//! CoSENT fitting is an optional pre-step over labeled pairs; the forecaster
//! trains its tables end-to-end and does not require it.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{cosine_value, NodeId, Tape};
use crate::tensor::Tensor;

/// Calendar fields of one timestamp. Day of week is Monday = 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CalendarFeatures {
    pub day_of_week: u32,
    pub day_of_month: u32,
    pub month: u32,
    pub hour: u32,
}

impl CalendarFeatures {
    /// Table indices in (day_of_week, day_of_month, month, hour) order.
    pub fn indices(&self) -> [usize; 4] {
        [
            self.day_of_week as usize,
            (self.day_of_month - 1) as usize,
            (self.month - 1) as usize,
            self.hour as usize,
        ]
    }
}

/// Vocabulary sizes of the four calendar tables.
pub const CALENDAR_VOCABS: [usize; 4] = [7, 31, 12, 24];

/// Parses an ISO-8601 date or datetime string into calendar fields.
///
/// Accepts `YYYY-MM-DD` optionally followed by ` HH:MM[:SS]` or
/// `THH:MM[:SS]`; the hour of a bare date is 0.
pub fn calendar_features(timestamp: &str) -> Result<CalendarFeatures> {
    let datetime_formats = [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
    ];
    for fmt in datetime_formats {
        if let Ok(dt) = NaiveDateTime::parse_from_str(timestamp, fmt) {
            return Ok(CalendarFeatures {
                day_of_week: dt.weekday().num_days_from_monday(),
                day_of_month: dt.day(),
                month: dt.month(),
                hour: dt.hour(),
            });
        }
    }
    match NaiveDate::parse_from_str(timestamp, "%Y-%m-%d") {
        Ok(d) => Ok(CalendarFeatures {
            day_of_week: d.weekday().num_days_from_monday(),
            day_of_month: d.day(),
            month: d.month(),
            hour: 0,
        }),
        Err(e) => Err(Error::data(format!(
            "cannot parse timestamp {timestamp:?}: {e}"
        ))),
    }
}

/// One learnable lookup table: `rows` is `[vocab_size, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T: Scalar> {
    pub rows: Tensor<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn zeros(vocab: usize, dim: usize) -> Result<Self> {
        Ok(EmbeddingTable {
            rows: Tensor::zeros(&[vocab, dim])?,
        })
    }

    /// Rows drawn from N(0, 0.02^2).
    pub fn seeded(vocab: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let normal = Normal::new(0.0f64, 0.02).expect("valid std");
        let rows = Tensor::from_fn(&[vocab, dim], |_| T::from_f64(normal.sample(rng)))?;
        Ok(EmbeddingTable { rows })
    }

    pub fn vocab(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn row(&self, index: usize) -> Result<&[T]> {
        if index >= self.vocab() {
            return Err(Error::config(format!(
                "lookup index {index} out of range for vocab {}",
                self.vocab()
            )));
        }
        let d = self.dim();
        Ok(&self.rows.data()[index * d..(index + 1) * d])
    }
}

/// The four calendar-field tables.
#[derive(Clone, Debug, PartialEq)]
pub struct CalendarTables<T: Scalar> {
    pub day_of_week: EmbeddingTable<T>,
    pub day_of_month: EmbeddingTable<T>,
    pub month: EmbeddingTable<T>,
    pub hour: EmbeddingTable<T>,
}

impl<T: Scalar> CalendarTables<T> {
    pub fn zeros(dim: usize) -> Result<Self> {
        Ok(CalendarTables {
            day_of_week: EmbeddingTable::zeros(CALENDAR_VOCABS[0], dim)?,
            day_of_month: EmbeddingTable::zeros(CALENDAR_VOCABS[1], dim)?,
            month: EmbeddingTable::zeros(CALENDAR_VOCABS[2], dim)?,
            hour: EmbeddingTable::zeros(CALENDAR_VOCABS[3], dim)?,
        })
    }

    pub fn seeded(dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(CalendarTables {
            day_of_week: EmbeddingTable::seeded(CALENDAR_VOCABS[0], dim, rng)?,
            day_of_month: EmbeddingTable::seeded(CALENDAR_VOCABS[1], dim, rng)?,
            month: EmbeddingTable::seeded(CALENDAR_VOCABS[2], dim, rng)?,
            hour: EmbeddingTable::seeded(CALENDAR_VOCABS[3], dim, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.day_of_week.dim()
    }
}

/// Sum of the four per-field lookups for one timestamp.
pub fn embed_calendar<T: Scalar>(
    features: &CalendarFeatures,
    tables: &CalendarTables<T>,
) -> Result<Tensor<T>> {
    let [dow, dom, month, hour] = features.indices();
    let mut out = tables.day_of_week.row(dow)?.to_vec();
    for (o, v) in out.iter_mut().zip(tables.day_of_month.row(dom)?) {
        *o = *o + *v;
    }
    for (o, v) in out.iter_mut().zip(tables.month.row(month)?) {
        *o = *o + *v;
    }
    for (o, v) in out.iter_mut().zip(tables.hour.row(hour)?) {
        *o = *o + *v;
    }
    Tensor::new(&[tables.dim()], out)
}

/// Arithmetic mean over the rows of an `[L, D]` token matrix.
pub fn mean_pool<T: Scalar>(tokens: &Tensor<T>) -> Result<Tensor<T>> {
    if tokens.rank() != 2 {
        return Err(Error::shape(format!(
            "mean_pool expects an [L, D] matrix, got {:?}",
            tokens.shape()
        )));
    }
    let (l, d) = (tokens.shape()[0], tokens.shape()[1]);
    let inv = T::from_f64(1.0 / l as f64);
    let mut out = vec![T::zero(); d];
    for r in 0..l {
        for (o, v) in out.iter_mut().zip(&tokens.data()[r * d..(r + 1) * d]) {
            *o = *o + *v;
        }
    }
    out.iter_mut().for_each(|o| *o = *o * inv);
    Tensor::new(&[d], out)
}

/// Cosine similarity `u . v / (|u| |v|)`; errors on a zero-norm input.
pub fn cosine<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>) -> Result<T> {
    if u.rank() != 1 || v.rank() != 1 || u.numel() != v.numel() {
        return Err(Error::shape(format!(
            "cosine requires equal-length rank-1 vectors, got {:?} and {:?}",
            u.shape(),
            v.shape()
        )));
    }
    cosine_value(u.data(), v.data())
}

/// A batch of embedding vectors with labeled positive and negative pairs.
#[derive(Clone, Debug)]
pub struct PairBatch<T: Scalar> {
    pub vectors: Vec<Tensor<T>>,
    pub pos_pairs: Vec<(usize, usize)>,
    pub neg_pairs: Vec<(usize, usize)>,
    pub lambda: f64,
}

impl<T: Scalar> PairBatch<T> {
    fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(Error::config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        let n = self.vectors.len();
        for &(i, j) in self.pos_pairs.iter().chain(&self.neg_pairs) {
            if i >= n || j >= n {
                return Err(Error::config(format!(
                    "pair ({i}, {j}) out of range for {n} vectors"
                )));
            }
        }
        for p in &self.pos_pairs {
            if self.neg_pairs.contains(p) {
                return Err(Error::config(format!(
                    "pair {p:?} labeled both positive and negative"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the CoSENT loss on a tape over already-registered vectors:
/// `ln(1 + sum over (pos, neg) cross pairs of exp(lambda (cos_neg - cos_pos)))`.
///
/// Empty pair sets give a constant zero loss.
pub fn cosent_loss_tape<T: Scalar>(
    tape: &mut Tape<T>,
    vectors: &[NodeId],
    pos_pairs: &[(usize, usize)],
    neg_pairs: &[(usize, usize)],
    lambda: f64,
) -> Result<NodeId> {
    if pos_pairs.is_empty() || neg_pairs.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let mut cos_cache: HashMap<(usize, usize), NodeId> = HashMap::new();
    let mut cos_of = |tape: &mut Tape<T>, pair: (usize, usize)| -> Result<NodeId> {
        if let Some(&id) = cos_cache.get(&pair) {
            return Ok(id);
        }
        let id = tape.cosine(vectors[pair.0], vectors[pair.1])?;
        cos_cache.insert(pair, id);
        Ok(id)
    };
    let mut terms = Vec::with_capacity(pos_pairs.len() * neg_pairs.len());
    for &pos in pos_pairs {
        for &neg in neg_pairs {
            let cp = cos_of(tape, pos)?;
            let cn = cos_of(tape, neg)?;
            let diff = tape.sub(cn, cp)?;
            terms.push(tape.scale(diff, T::from_f64(lambda)));
        }
    }
    let stacked = tape.concat_last(&terms)?;
    tape.log1p_sum_exp(stacked)
}

/// CoSENT loss of a pair batch, as a plain value.
pub fn cosent_loss<T: Scalar>(batch: &PairBatch<T>) -> Result<T> {
    batch.validate()?;
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = batch
        .vectors
        .iter()
        .map(|v| tape.constant(v.clone()))
        .collect();
    let loss = cosent_loss_tape(
        &mut tape,
        &ids,
        &batch.pos_pairs,
        &batch.neg_pairs,
        batch.lambda,
    )?;
    tape.value(loss).item()
}

/// Optional pre-step: gradient descent on the CoSENT loss over the batch
/// vectors themselves. Returns the loss history.
pub fn cosent_fit<T: Scalar>(batch: &mut PairBatch<T>, lr: f64, steps: usize) -> Result<Vec<f64>> {
    batch.validate()?;
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = batch
            .vectors
            .iter()
            .map(|v| tape.leaf(v.clone(), true))
            .collect();
        let loss = cosent_loss_tape(
            &mut tape,
            &ids,
            &batch.pos_pairs,
            &batch.neg_pairs,
            batch.lambda,
        )?;
        history.push(tape.value(loss).item()?.as_f64());
        tape.backward(loss)?;
        let rate = T::from_f64(lr);
        for (vec, id) in batch.vectors.iter_mut().zip(&ids) {
            if let Some(g) = tape.grad(*id) {
                for (v, gv) in vec.data_mut().iter_mut().zip(g) {
                    *v = *v - rate * *gv;
                }
            }
        }
    }
    Ok(history)
}

/// Precomputed embedding vectors loaded from a text file, one record per
/// line: `key<TAB>v1,v2,...,vd`. All rows must share the same dimension.
#[derive(Clone, Debug)]
pub struct PrecomputedEmbeddings {
    index: HashMap<String, usize>,
    rows: Vec<Vec<f64>>,
    dim: usize,
}

impl PrecomputedEmbeddings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("cannot read {}: {e}", path.display())))?;
        let mut index = HashMap::new();
        let mut rows = Vec::new();
        let mut dim = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, values) = line.split_once('\t').ok_or_else(|| {
                Error::data(format!("line {}: missing tab separator", lineno + 1))
            })?;
            let parsed: Result<Vec<f64>> = values
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|e| {
                        Error::data(format!("line {}: bad number {v:?}: {e}", lineno + 1))
                    })
                })
                .collect();
            let parsed = parsed?;
            if rows.is_empty() {
                dim = parsed.len();
            } else if parsed.len() != dim {
                return Err(Error::data(format!(
                    "line {}: dimension {} differs from {}",
                    lineno + 1,
                    parsed.len(),
                    dim
                )));
            }
            if index.insert(key.to_string(), rows.len()).is_some() {
                return Err(Error::data(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
            rows.push(parsed);
        }
        if rows.is_empty() {
            return Err(Error::data("embedding file holds no records".to_string()));
        }
        Ok(PrecomputedEmbeddings { index, rows, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&i| self.rows[i].as_slice())
    }

    pub fn require(&self, key: &str) -> Result<&[f64]> {
        self.get(key)
            .ok_or_else(|| Error::data(format!("embedding file has no vector for key {key:?}")))
    }
}
