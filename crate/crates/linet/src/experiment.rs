//! Batch experiment orchestration: config files, ablation variants, the
//! train/evaluate pipeline, and the scaling benchmark.
//!
//! Config files are flat UTF-8 `key = value` text; `#` starts a comment.
//! Every key mirrors a documented field and can also be set from the CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    check_split_capacity, chronological_split, load_csv, make_windows, Dataset, Normalizer,
    PreparedFileEmbeddings, SplitRanges, SplitSpec,
};
use crate::embedding::PrecomputedEmbeddings;
use crate::error::{Error, Result};
use crate::model::{mlp3_default_hidden, BlockKind, Mlp3Params, ModelConfig, ModelParams};
use crate::report::{reference_metrics, ReportFormat, RunReport};
use crate::scalar::Scalar;
use crate::train::{
    mae, mse, persistence_baseline, train, EpochRecord, Forecaster, TrainConfig, TrainOutcome,
};

/// Ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// The gated encoder–decoder as configured.
    Full,
    /// Dense gates: every retention rate forced to 1.0.
    Softmax,
    /// Raw series only: every embedding input replaced by zeros.
    Primitive,
    /// Flattened three-layer MLP in place of the encoder–decoder.
    Mlp3,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Softmax => "softmax",
            Variant::Primitive => "primitive",
            Variant::Mlp3 => "mlp3",
        }
    }

    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Softmax, Variant::Primitive, Variant::Mlp3];
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "softmax" => Ok(Variant::Softmax),
            "primitive" => Ok(Variant::Primitive),
            "mlp3" => Ok(Variant::Mlp3),
            other => Err(Error::config(format!(
                "unknown variant {other:?} (expected full, softmax, primitive or mlp3)"
            ))),
        }
    }
}

/// Element precision of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(Error::config(format!(
                "unknown precision {other:?} (expected f32 or f64)"
            ))),
        }
    }
}

/// Everything one experiment run needs.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub horizon: usize,
    pub lookback: usize,
    pub variant: Variant,
    pub stride: usize,
    /// Cap on train windows; the stride grows beyond `stride` to respect it.
    pub max_train_windows: Option<usize>,
    pub split: SplitSpec,
    pub time_compression: usize,
    pub channel_compression: usize,
    pub r_time: f64,
    pub r_channel: f64,
    pub d_embed: usize,
    pub block: BlockKind,
    pub mlp_hidden: usize,
    pub gate_mlp_depth: usize,
    pub tf_layers: usize,
    pub tf_heads: usize,
    /// Hidden width of the mlp3 variant; defaults to 4 * C * T'.
    pub mlp3_hidden: Option<usize>,
    pub train: TrainConfig,
    pub precision: Precision,
    pub out_dir: PathBuf,
    pub format: ReportFormat,
    pub embedding_file: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::new(),
            horizon: 96,
            lookback: 96,
            variant: Variant::Full,
            stride: 1,
            max_train_windows: None,
            split: SplitSpec::default(),
            time_compression: 2,
            channel_compression: 2,
            r_time: 0.5,
            r_channel: 0.7,
            d_embed: 32,
            block: BlockKind::Mlp,
            mlp_hidden: 32,
            gate_mlp_depth: 2,
            tf_layers: 1,
            tf_heads: 4,
            mlp3_hidden: None,
            train: TrainConfig::default(),
            precision: Precision::F32,
            out_dir: PathBuf::from("runs"),
            format: ReportFormat::JsonLines,
            embedding_file: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses a flat `key = value` config file into defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    /// Applies a config file over the current values.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("cannot read {}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "{}:{}: expected 'key = value', got {raw:?}",
                    path.display(),
                    i + 1
                ))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| {
                Error::config(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
        }
        Ok(())
    }

    /// Sets one configuration key from its string form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V>
        where
            V::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::config(format!("bad value for {key}: {e}")))
        }
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "horizon" => self.horizon = parse(key, value)?,
            "lookback" => self.lookback = parse(key, value)?,
            "variant" => self.variant = value.parse()?,
            "stride" => self.stride = parse(key, value)?,
            "max_train_windows" => self.max_train_windows = Some(parse(key, value)?),
            "train_frac" => self.split.train = parse(key, value)?,
            "val_frac" => self.split.val = parse(key, value)?,
            "test_frac" => self.split.test = parse(key, value)?,
            "time_compression" => self.time_compression = parse(key, value)?,
            "channel_compression" => self.channel_compression = parse(key, value)?,
            "r_time" => self.r_time = parse(key, value)?,
            "r_channel" => self.r_channel = parse(key, value)?,
            "d_embed" => self.d_embed = parse(key, value)?,
            "block" => self.block = value.parse()?,
            "mlp_hidden" => self.mlp_hidden = parse(key, value)?,
            "gate_mlp_depth" => self.gate_mlp_depth = parse(key, value)?,
            "tf_layers" => self.tf_layers = parse(key, value)?,
            "tf_heads" => self.tf_heads = parse(key, value)?,
            "mlp3_hidden" => self.mlp3_hidden = Some(parse(key, value)?),
            "lr" => self.train.lr = parse(key, value)?,
            "beta1" => self.train.beta1 = parse(key, value)?,
            "beta2" => self.train.beta2 = parse(key, value)?,
            "eps" => self.train.eps = parse(key, value)?,
            "weight_decay" => self.train.weight_decay = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "max_epochs" => self.train.max_epochs = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "grad_clip" => self.train.grad_clip = Some(parse(key, value)?),
            "precision" => self.precision = value.parse()?,
            "out" => self.out_dir = PathBuf::from(value),
            "format" => self.format = value.parse()?,
            "embedding_file" => self.embedding_file = Some(PathBuf::from(value)),
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::config("no dataset path configured".to_string()));
        }
        if self.horizon == 0 || self.lookback == 0 || self.stride == 0 {
            return Err(Error::config(
                "horizon, lookback and stride must be positive".to_string(),
            ));
        }
        self.split.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Model config for a dataset with `channels` series; the variant is
    /// already folded in (dense gates for `softmax`).
    pub fn model_config(&self, channels: usize) -> ModelConfig {
        let dense = self.variant == Variant::Softmax;
        ModelConfig {
            channels,
            lookback: self.lookback,
            horizon: self.horizon,
            time_compression: self.time_compression,
            channel_compression: self.channel_compression,
            r_time: if dense { 1.0 } else { self.r_time },
            r_channel: if dense { 1.0 } else { self.r_channel },
            d_embed: self.d_embed,
            block: self.block,
            mlp_hidden: self.mlp_hidden,
            gate_mlp_depth: self.gate_mlp_depth,
            tf_layers: self.tf_layers,
            tf_heads: self.tf_heads,
            store_vocab: 1,
        }
    }

    /// Every configuration key and its value, for the report echo.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("dataset", self.dataset.display().to_string());
        put("horizon", self.horizon.to_string());
        put("lookback", self.lookback.to_string());
        put("variant", self.variant.as_str().to_string());
        put("stride", self.stride.to_string());
        put(
            "max_train_windows",
            self.max_train_windows.map(|v| v.to_string()).unwrap_or_default(),
        );
        put("train_frac", self.split.train.to_string());
        put("val_frac", self.split.val.to_string());
        put("test_frac", self.split.test.to_string());
        put("time_compression", self.time_compression.to_string());
        put("channel_compression", self.channel_compression.to_string());
        put("r_time", self.r_time.to_string());
        put("r_channel", self.r_channel.to_string());
        put("d_embed", self.d_embed.to_string());
        put(
            "block",
            match self.block {
                BlockKind::Mlp => "mlp".to_string(),
                BlockKind::Transformer => "transformer".to_string(),
            },
        );
        put("mlp_hidden", self.mlp_hidden.to_string());
        put("gate_mlp_depth", self.gate_mlp_depth.to_string());
        put("tf_layers", self.tf_layers.to_string());
        put("tf_heads", self.tf_heads.to_string());
        put(
            "mlp3_hidden",
            self.mlp3_hidden.map(|v| v.to_string()).unwrap_or_default(),
        );
        put("lr", self.train.lr.to_string());
        put("beta1", self.train.beta1.to_string());
        put("beta2", self.train.beta2.to_string());
        put("eps", self.train.eps.to_string());
        put("weight_decay", self.train.weight_decay.to_string());
        put("batch_size", self.train.batch_size.to_string());
        put("max_epochs", self.train.max_epochs.to_string());
        put("patience", self.train.patience.to_string());
        put("seed", self.train.seed.to_string());
        put(
            "grad_clip",
            self.train.grad_clip.map(|v| v.to_string()).unwrap_or_default(),
        );
        put("precision", self.precision.as_str().to_string());
        put("out", self.out_dir.display().to_string());
        put("format", self.format.extension().to_string());
        put(
            "embedding_file",
            self.embedding_file
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        m
    }
}

/// Prepared data for one run: normalized series, split ranges, window starts.
pub struct PreparedExperiment<T: Scalar> {
    pub data: Dataset<T>,
    pub ranges: SplitRanges,
    pub train_windows: Vec<usize>,
    pub val_windows: Vec<usize>,
    pub test_windows: Vec<usize>,
    pub normalizer: Normalizer,
    pub channels: usize,
    /// Stride actually used after applying `max_train_windows`.
    pub effective_stride: usize,
}

/// Loads, splits, normalizes (train slice only) and windows the dataset.
pub fn prepare<T: Scalar>(cfg: &ExperimentConfig) -> Result<PreparedExperiment<T>> {
    cfg.validate()?;
    let raw = load_csv(&cfg.dataset)?;
    let ranges = chronological_split(raw.len(), &cfg.split)?;
    check_split_capacity(&ranges, &cfg.split, cfg.lookback, cfg.horizon)?;
    let normalizer = Normalizer::fit(&raw, ranges.train.clone())?;
    let mut data = Dataset::<T>::prepare(&raw, &normalizer)?;
    if let Some(path) = &cfg.embedding_file {
        let provider = PrecomputedEmbeddings::load(path)?;
        data.file = Some(PreparedFileEmbeddings::build(
            &raw,
            data.store_id,
            &provider,
            cfg.d_embed,
        )?);
    }
    let mut stride = cfg.stride;
    if let Some(cap) = cfg.max_train_windows {
        if cap == 0 {
            return Err(Error::config("max_train_windows must be positive".to_string()));
        }
        while make_windows(&ranges.train, cfg.lookback, cfg.horizon, stride).len() > cap {
            stride += 1;
        }
    }
    let train_windows = make_windows(&ranges.train, cfg.lookback, cfg.horizon, stride);
    let val_windows = make_windows(&ranges.val, cfg.lookback, cfg.horizon, stride);
    let test_windows = make_windows(&ranges.test, cfg.lookback, cfg.horizon, stride);
    if train_windows.is_empty() {
        return Err(Error::config(
            "train split yields zero windows at this lookback/horizon".to_string(),
        ));
    }
    let channels = raw.channels();
    Ok(PreparedExperiment {
        data,
        ranges,
        train_windows,
        val_windows,
        test_windows,
        normalizer,
        channels,
        effective_stride: stride,
    })
}

/// Builds the untrained model for a variant with a seeded generator.
pub fn build_model<T: Scalar>(cfg: &ExperimentConfig, channels: usize) -> Result<Forecaster<T>> {
    let model_cfg = cfg.model_config(channels);
    model_cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    match cfg.variant {
        Variant::Full | Variant::Softmax | Variant::Primitive => Ok(Forecaster::LiNet {
            params: ModelParams::seeded(&model_cfg, &mut rng)?,
            zero_embeddings: cfg.variant == Variant::Primitive,
            cfg: model_cfg,
        }),
        Variant::Mlp3 => {
            let hidden = cfg.mlp3_hidden.unwrap_or_else(|| mlp3_default_hidden(&model_cfg));
            Ok(Forecaster::Mlp3 {
                params: Mlp3Params::seeded(&model_cfg, hidden, &mut rng)?,
                cfg: model_cfg,
            })
        }
    }
}

/// Aggregated test metrics plus per-window errors.
pub struct EvalResult {
    pub mae: f64,
    pub mse: f64,
    /// (mae, mse) of each window in order.
    pub per_window: Vec<(f64, f64)>,
    /// Stacked forecasts, one `[C, P]` tensor per window.
    pub forecasts: Vec<crate::tensor::Tensor<f64>>,
}

/// Evaluates a trained model over a window set on the normalized scale.
pub fn evaluate<T: Scalar>(
    model: &Forecaster<T>,
    data: &Dataset<T>,
    windows: &[usize],
    batch_size: usize,
) -> Result<EvalResult> {
    if windows.is_empty() {
        return Err(Error::config("cannot evaluate an empty window set".to_string()));
    }
    let cfg = model.config();
    let mut per_window = Vec::with_capacity(windows.len());
    let mut forecasts = Vec::with_capacity(windows.len());
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk, cfg.lookback, cfg.horizon)?;
        let pred = model.predict(&batch)?;
        let b = chunk.len();
        let per = pred.numel() / b;
        for w in 0..b {
            let range = w * per..(w + 1) * per;
            let p = &pred.data()[range.clone()];
            let t = &batch.y.data()[range];
            let mut a = 0.0;
            let mut s = 0.0;
            for (pv, tv) in p.iter().zip(t) {
                let d = pv.as_f64() - tv.as_f64();
                a += d.abs();
                s += d * d;
            }
            per_window.push((a / per as f64, s / per as f64));
            abs_sum += a;
            sq_sum += s;
            count += per;
            forecasts.push(
                crate::tensor::Tensor::new(
                    &[cfg.channels, cfg.horizon],
                    p.iter().map(|v| v.as_f64()).collect(),
                )?,
            );
        }
    }
    Ok(EvalResult {
        mae: abs_sum / count as f64,
        mse: sq_sum / count as f64,
        per_window,
        forecasts,
    })
}

/// Persistence-baseline metrics over a window set.
pub fn evaluate_persistence<T: Scalar>(
    data: &Dataset<T>,
    windows: &[usize],
    lookback: usize,
    horizon: usize,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Err(Error::config("cannot evaluate an empty window set".to_string()));
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk, lookback, horizon)?;
        let pred = persistence_baseline(&batch)?;
        let n = pred.numel();
        abs_sum += mae(&pred, &batch.y)? * n as f64;
        sq_sum += mse(&pred, &batch.y)? * n as f64;
        count += n;
    }
    Ok((abs_sum / count as f64, sq_sum / count as f64))
}

/// Everything a finished run produces.
pub struct RunOutput<T: Scalar> {
    pub report: RunReport,
    pub model: Forecaster<T>,
    pub history: Vec<EpochRecord>,
    pub normalizer: Normalizer,
    pub eval: EvalResult,
    /// Persistence-baseline (mae, mse) on the same test windows.
    pub persistence: (f64, f64),
}

/// Trains one variant end to end and evaluates it on the test split.
pub fn run_variant<T: Scalar>(cfg: &ExperimentConfig) -> Result<RunOutput<T>> {
    let prep = prepare::<T>(cfg)?;
    let model = build_model::<T>(cfg, prep.channels)?;
    let train_started = Instant::now();
    let TrainOutcome { model, history, .. } = train(
        model,
        &prep.data,
        &prep.train_windows,
        &prep.val_windows,
        &cfg.train,
    )?;
    let train_seconds = train_started.elapsed().as_secs_f64();
    let test_started = Instant::now();
    let eval = evaluate(&model, &prep.data, &prep.test_windows, cfg.train.batch_size)?;
    let test_seconds = test_started.elapsed().as_secs_f64();
    let persistence = evaluate_persistence(
        &prep.data,
        &prep.test_windows,
        cfg.lookback,
        cfg.horizon,
        cfg.train.batch_size,
    )?;
    let dataset_name = cfg
        .dataset
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| cfg.dataset.display().to_string());
    let reference = reference_metrics(&dataset_name, cfg.horizon);
    let mut echo = cfg.echo();
    echo.insert("effective_stride".to_string(), prep.effective_stride.to_string());
    echo.insert("channels".to_string(), prep.channels.to_string());
    let report = RunReport {
        dataset: dataset_name,
        variant: cfg.variant.as_str().to_string(),
        horizon: cfg.horizon,
        lookback: cfg.lookback,
        seed: cfg.train.seed,
        mae: eval.mae,
        mse: eval.mse,
        train_seconds,
        test_seconds,
        param_count: model.param_count(),
        model_bytes: model.model_bytes(),
        reference_mae: reference.map(|(m, _)| m),
        reference_mse: reference.map(|(_, m)| m),
        config: echo,
    };
    Ok(RunOutput {
        report,
        model,
        history,
        normalizer: prep.normalizer,
        eval,
        persistence,
    })
}

/// One row of the scaling benchmark.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BenchRow {
    pub lookback: usize,
    pub forward_seconds: f64,
    pub backward_seconds: f64,
    pub peak_tensor_bytes: usize,
    /// Elements actually allocated by the time gate: B * T * T'.
    pub gate_elements: usize,
    /// Dense attention reference: B * T * T.
    pub dense_elements: usize,
}

/// Times forward+backward at each lookback size and reports the time-gate
/// weight extents against a dense T x T attention map.
pub fn bench(sizes: &[usize], time_compression: usize, seed: u64) -> Result<Vec<BenchRow>> {
    use crate::model::GateMode;
    use crate::tape::Tape;
    use crate::train::mse_node;

    if sizes.is_empty() {
        return Err(Error::config("bench needs at least one size".to_string()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &t in sizes {
        let horizon = t.min(96);
        let mut model_cfg = ModelConfig::new(7, t, horizon);
        model_cfg.time_compression = time_compression;
        model_cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::<f64>::seeded(&model_cfg, &mut rng)?;
        // synthetic batch long enough for one window
        let series = crate::synthetic::ettm2_like(t + horizon, seed);
        let norm = Normalizer::fit(&series, 0..series.len())?;
        let data = Dataset::<f64>::prepare(&series, &norm)?;
        let batch = data.batch(&[0], t, horizon)?;

        let mut tape = Tape::new();
        let ids = params.register(&mut tape);
        let fwd_started = Instant::now();
        let trace = crate::model::forward_ids(&mut tape, &ids, &batch, &model_cfg, GateMode::TopK, false)?;
        let forward_seconds = fwd_started.elapsed().as_secs_f64();
        let truth = tape.constant(batch.y.clone());
        let loss = mse_node(&mut tape, trace.t_out, truth)?;
        let bwd_started = Instant::now();
        tape.backward(loss)?;
        let backward_seconds = bwd_started.elapsed().as_secs_f64();

        let gate_shape = tape.value(trace.t_te).shape().to_vec();
        let gate_elements: usize = gate_shape.iter().product();
        let b = gate_shape[0];
        rows.push(BenchRow {
            lookback: t,
            forward_seconds,
            backward_seconds,
            peak_tensor_bytes: tape.peak_bytes(),
            gate_elements,
            dense_elements: b * t * t,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(
            &path,
            "# comment\ndataset = data.csv\nhorizon = 192\nvariant = softmax\nseed = 9\nr_time = 0.3\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(cfg.dataset, PathBuf::from("data.csv"));
        assert_eq!(cfg.horizon, 192);
        assert_eq!(cfg.variant, Variant::Softmax);
        assert_eq!(cfg.train.seed, 9);
        assert!((cfg.r_time - 0.3).abs() < 1e-12);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(&path, "no_such_key = 1\n").unwrap();
        let err = ExperimentConfig::from_file(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("no_such_key"));
    }

    #[test]
    fn echo_carries_protocol_defaults() {
        let echo = ExperimentConfig::default().echo();
        assert_eq!(echo.get("batch_size").map(String::as_str), Some("16"));
        assert_eq!(echo.get("max_epochs").map(String::as_str), Some("10"));
        assert_eq!(echo.get("patience").map(String::as_str), Some("3"));
        assert_eq!(echo.get("train_frac").map(String::as_str), Some("0.6"));
    }

    #[test]
    fn bench_reports_gate_versus_dense_elements() {
        let rows = bench(&[128, 256], 2, 1).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert_eq!(row.gate_elements, row.lookback * row.lookback / 2);
            assert_eq!(row.dense_elements, row.lookback * row.lookback);
            assert_eq!(row.dense_elements / row.gate_elements, 2);
            assert!(row.peak_tensor_bytes > 0);
        }
        assert_eq!(rows[0].gate_elements, 128 * 64);
        assert_eq!(rows[1].gate_elements, 256 * 128);
    }
}
