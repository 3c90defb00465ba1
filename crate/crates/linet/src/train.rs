//! AdamW training with early stopping.
//!
//! The loop shuffles train windows with a seeded generator, descends batch
//! MSE, evaluates validation MSE once per epoch, and returns the parameters
//! of the best validation epoch. Everything is single-threaded and
//! deterministic for a fixed seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, WindowBatch};
use crate::error::{Error, Result};
use crate::model::{
    forward_ids, mlp3_forward, GateMode, Mlp3Ids, Mlp3Params, ModelConfig, ModelParams, ParamIds,
    TraceIds,
};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Optimizer and protocol settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Optional global-norm gradient clip; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            batch_size: 16,
            max_epochs: 10,
            patience: 3,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.eps <= 0.0 {
            return Err(Error::config("lr and eps must be positive".to_string()));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::config("betas must lie in (0, 1)".to_string()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight decay must be >= 0".to_string()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config(
                "batch size and max epochs must be positive".to_string(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be >= 1".to_string()));
        }
        Ok(())
    }
}

// ── Metrics ─────────────────────────────────────────────────────────────

/// Mean squared error node over equal-shape tensors.
pub fn mse_node<T: Scalar>(tape: &mut Tape<T>, pred: NodeId, truth: NodeId) -> Result<NodeId> {
    let d = tape.sub(pred, truth)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean_all(sq))
}

/// Mean absolute error node over equal-shape tensors.
pub fn mae_node<T: Scalar>(tape: &mut Tape<T>, pred: NodeId, truth: NodeId) -> Result<NodeId> {
    let d = tape.sub(pred, truth)?;
    let a = tape.abs(d);
    Ok(tape.mean_all(a))
}

/// MSE of two tensors as a value.
pub fn mse<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "mse shapes differ: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let n = pred.numel() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            d * d
        })
        .sum::<f64>()
        / n)
}

/// MAE of two tensors as a value.
pub fn mae<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "mae shapes differ: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let n = pred.numel() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&p, &t)| (p.as_f64() - t.as_f64()).abs())
        .sum::<f64>()
        / n)
}

// ── AdamW ───────────────────────────────────────────────────────────────

/// First/second moment accumulators, aligned with the canonical parameter
/// order of the model they optimize.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(param_sizes: &[usize]) -> Self {
        OptimizerState {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One decoupled-weight-decay Adam step over named (parameter, gradient)
/// pairs. Moments run at f64 regardless of the element type.
pub fn adamw_step<T: Scalar>(
    params: &mut [(String, &mut Tensor<T>)],
    grads: &[Tensor<T>],
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::config(format!(
            "optimizer wiring mismatch: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(format!(
                "gradient shape {:?} does not match parameter {name} {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::numerical(format!(
                "non-finite gradient for parameter {name}"
            )));
        }
    }
    let clip_scale = match cfg.grad_clip {
        Some(max_norm) if max_norm > 0.0 => {
            let total: f64 = grads
                .iter()
                .flat_map(|g| g.data().iter())
                .map(|v| v.as_f64() * v.as_f64())
                .sum();
            let norm = total.sqrt();
            if norm > max_norm {
                max_norm / norm
            } else {
                1.0
            }
        }
        _ => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (j, val) in p.data_mut().iter_mut().enumerate() {
            let gv = g.data()[j].as_f64() * clip_scale;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gv;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            let theta = val.as_f64();
            let update = cfg.lr * (m_hat / (v_hat + cfg.eps).sqrt() + cfg.weight_decay * theta);
            *val = T::from_f64(theta - update);
        }
    }
    Ok(())
}

// ── Forecaster: the trainable variants ──────────────────────────────────

/// A trainable model: the gated encoder–decoder (optionally with zeroed
/// embedding inputs) or the flattened three-layer MLP ablation.
#[derive(Clone, Debug)]
pub enum Forecaster<T: Scalar> {
    LiNet {
        cfg: ModelConfig,
        params: ModelParams<T>,
        zero_embeddings: bool,
    },
    Mlp3 {
        cfg: ModelConfig,
        params: Mlp3Params<T>,
    },
}

/// Leaf registrations of one forward pass.
#[derive(Debug)]
pub enum BoundIds {
    LiNet { ids: ParamIds, trace: TraceIds },
    Mlp3 { ids: Mlp3Ids, out: NodeId },
}

impl BoundIds {
    pub fn output(&self) -> NodeId {
        match self {
            BoundIds::LiNet { trace, .. } => trace.t_out,
            BoundIds::Mlp3 { out, .. } => *out,
        }
    }

    /// Leaf node ids in canonical parameter order.
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        match self {
            BoundIds::LiNet { ids, .. } => ids.visit(&mut |_, &id| out.push(id)),
            BoundIds::Mlp3 { ids, .. } => ids.visit(&mut |_, &id| out.push(id)),
        }
        out
    }
}

impl<T: Scalar> Forecaster<T> {
    pub fn config(&self) -> &ModelConfig {
        match self {
            Forecaster::LiNet { cfg, .. } => cfg,
            Forecaster::Mlp3 { cfg, .. } => cfg,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Forecaster::LiNet { params, .. } => params.param_count(),
            Forecaster::Mlp3 { params, .. } => params.param_count(),
        }
    }

    pub fn model_bytes(&self) -> usize {
        self.param_count() * T::WIDTH as usize
    }

    /// Named views of every parameter, canonical order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        match self {
            Forecaster::LiNet { params, .. } => params.visit(&mut |n, t| out.push((n, t))),
            Forecaster::Mlp3 { params, .. } => params.visit(&mut |n, t| out.push((n, t))),
        }
        out
    }

    /// Named mutable views of every parameter, canonical order.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        match self {
            Forecaster::LiNet { params, .. } => params.visit_mut(&mut |n, t| out.push((n, t))),
            Forecaster::Mlp3 { params, .. } => params.visit_mut(&mut |n, t| out.push((n, t))),
        }
        out
    }

    /// Registers parameters and runs the forward pass on `tape`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<T>,
        batch: &WindowBatch<T>,
        mode: GateMode<'_>,
    ) -> Result<BoundIds> {
        match self {
            Forecaster::LiNet {
                cfg,
                params,
                zero_embeddings,
            } => {
                let ids = params.register(tape);
                let trace = forward_ids(tape, &ids, batch, cfg, mode, *zero_embeddings)?;
                Ok(BoundIds::LiNet { ids, trace })
            }
            Forecaster::Mlp3 { cfg, params } => {
                let ids = params.register(tape);
                let out = mlp3_forward(tape, &ids, batch, cfg)?;
                Ok(BoundIds::Mlp3 { ids, out })
            }
        }
    }

    /// Forecasts one batch (no gradient bookkeeping kept).
    pub fn predict(&self, batch: &WindowBatch<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.forward_tape(&mut tape, batch, GateMode::TopK)?;
        Ok(tape.tensor(bound.output()))
    }
}

// ── Training loop ───────────────────────────────────────────────────────

/// One epoch record of the training history.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
    pub improved: bool,
}

/// Best-epoch bookkeeping for early stopping.
#[derive(Clone, Debug)]
pub struct EarlyStopState<T: Scalar> {
    pub best_val_mse: f64,
    pub epochs_since_improvement: usize,
    pub best_params: Forecaster<T>,
}

/// Outcome of `train`.
#[derive(Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub model: Forecaster<T>,
    pub history: Vec<EpochRecord>,
    /// Train MSE of the very first optimization step, before any update.
    pub initial_train_mse: f64,
}

/// Mean MSE of the model over a window set, weighted by element counts.
pub fn dataset_mse<T: Scalar>(
    model: &Forecaster<T>,
    data: &Dataset<T>,
    windows: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let cfg = model.config();
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(batch_size) {
        let batch = data.batch(chunk, cfg.lookback, cfg.horizon)?;
        let pred = model.predict(&batch)?;
        let n = pred.numel();
        sq_sum += mse(&pred, &batch.y)? * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::config("no windows to evaluate".to_string()));
    }
    Ok(sq_sum / count as f64)
}

/// Trains with AdamW on batch MSE; returns the parameters of the epoch with
/// the lowest validation MSE.
pub fn train<T: Scalar>(
    model: Forecaster<T>,
    data: &Dataset<T>,
    train_windows: &[usize],
    val_windows: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(Error::config("training split holds no windows".to_string()));
    }
    if val_windows.is_empty() {
        return Err(Error::config("validation split holds no windows".to_string()));
    }
    let mut model = model;
    let sizes: Vec<usize> = model.named_params().iter().map(|(_, t)| t.numel()).collect();
    let mut state = OptimizerState::new(&sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = train_windows.to_vec();
    let mut history = Vec::new();
    let mut stop = EarlyStopState {
        best_val_mse: f64::INFINITY,
        epochs_since_improvement: 0,
        best_params: model.clone(),
    };
    let mut initial_train_mse = None;
    let model_cfg = model.config().clone();

    for epoch in 0..cfg.max_epochs {
        let started = std::time::Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk, model_cfg.lookback, model_cfg.horizon)?;
            let mut tape = Tape::new();
            let bound = model.forward_tape(&mut tape, &batch, GateMode::TopK)?;
            let truth = tape.constant(batch.y.clone());
            let loss = mse_node(&mut tape, bound.output(), truth)?;
            let loss_value = tape.value(loss).item()?.as_f64();
            if !loss_value.is_finite() {
                return Err(Error::numerical(format!(
                    "training loss became non-finite at epoch {epoch}"
                )));
            }
            if initial_train_mse.is_none() {
                initial_train_mse = Some(loss_value);
            }
            let n = batch.y.numel();
            loss_sum += loss_value * n as f64;
            loss_count += n;
            tape.backward(loss)?;
            let grads: Vec<Tensor<T>> = bound
                .leaf_ids()
                .iter()
                .map(|&id| tape.grad_tensor(id))
                .collect();
            drop(tape);
            let mut params = model.named_params_mut();
            adamw_step(&mut params, &grads, &mut state, cfg)?;
        }
        let train_mse = loss_sum / loss_count as f64;
        let val_mse = dataset_mse(&model, data, val_windows, cfg.batch_size)?;
        let improved = val_mse < stop.best_val_mse;
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            seconds: started.elapsed().as_secs_f64(),
            improved,
        });
        if improved {
            stop.best_val_mse = val_mse;
            stop.epochs_since_improvement = 0;
            stop.best_params = model.clone();
        } else {
            stop.epochs_since_improvement += 1;
            if stop.epochs_since_improvement >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: stop.best_params,
        history,
        initial_train_mse: initial_train_mse.unwrap_or(f64::NAN),
    })
}

/// Naive forecaster: every horizon step repeats the last observed value of
/// its channel.
pub fn persistence_baseline<T: Scalar>(batch: &WindowBatch<T>) -> Result<Tensor<T>> {
    let shape = batch.x.shape();
    let (b, c, t) = (shape[0], shape[1], shape[2]);
    let p = batch.y.shape()[2];
    Tensor::from_fn(&[b, c, p], |flat| {
        let bc = flat / p;
        batch.x.data()[bc * t + t - 1]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor<f64> {
        Tensor::from_slice(v).unwrap()
    }

    #[test]
    fn metric_examples() {
        let (a, b) = (t1(&[1.0, 2.0]), t1(&[1.0, 2.0]));
        assert_eq!(mse(&a, &b).unwrap(), 0.0);
        assert_eq!(mae(&a, &b).unwrap(), 0.0);

        let (p, t) = (t1(&[0.0, 2.0]), t1(&[1.0, 1.0]));
        assert_eq!(mse(&p, &t).unwrap(), 1.0);
        assert_eq!(mae(&p, &t).unwrap(), 1.0);

        let (p, t) = (t1(&[0.0, 0.0, 3.0]), t1(&[1.0, 1.0, 1.0]));
        assert_eq!(mse(&p, &t).unwrap(), 2.0);
        assert!((mae(&p, &t).unwrap() - 4.0 / 3.0).abs() < 1e-15);

        assert!(mse(&t1(&[1.0]), &t1(&[1.0, 2.0])).is_err());
    }

    fn one_param(v: &[f64]) -> Vec<(String, Tensor<f64>)> {
        vec![("w".to_string(), t1(v))]
    }

    fn run_step(
        param: &mut Vec<(String, Tensor<f64>)>,
        grad: &[f64],
        state: &mut OptimizerState,
        cfg: &TrainConfig,
    ) {
        let grads = vec![t1(grad)];
        let mut view: Vec<(String, &mut Tensor<f64>)> = param
            .iter_mut()
            .map(|(n, t)| (n.clone(), t))
            .collect();
        adamw_step(&mut view, &grads, state, cfg).unwrap();
    }

    #[test]
    fn adamw_zero_grad_without_decay_is_identity() {
        let mut p = one_param(&[1.5]);
        let mut state = OptimizerState::new(&[1]);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        run_step(&mut p, &[0.0], &mut state, &cfg);
        assert_eq!(p[0].1.data(), &[1.5]);
    }

    #[test]
    fn adamw_zero_grad_pure_decay() {
        let mut p = one_param(&[2.0]);
        let mut state = OptimizerState::new(&[1]);
        let cfg = TrainConfig::default(); // lr 1e-3, wd 1e-2
        run_step(&mut p, &[0.0], &mut state, &cfg);
        let want = 2.0 * (1.0 - 1e-3 * 1e-2);
        assert!((p[0].1.data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn adamw_first_step_golden() {
        let mut p = one_param(&[0.0]);
        let mut state = OptimizerState::new(&[1]);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        run_step(&mut p, &[1.0], &mut state, &cfg);
        let delta = p[0].1.data()[0];
        assert!(
            (delta - (-9.99999995e-4)).abs() <= 1e-12,
            "first-step delta {delta}"
        );
    }

    #[test]
    fn adamw_rejects_nan_gradient_with_name() {
        let mut p = one_param(&[0.0]);
        let mut state = OptimizerState::new(&[1]);
        let cfg = TrainConfig::default();
        let grads = vec![t1(&[f64::NAN])];
        let mut view: Vec<(String, &mut Tensor<f64>)> =
            p.iter_mut().map(|(n, t)| (n.clone(), t)).collect();
        let err = adamw_step(&mut view, &grads, &mut state, &cfg).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn adamw_descends_convex_quadratic() {
        // f(w) = 0.5 (w - 3)^2, gradient w - 3
        let mut p = one_param(&[0.0]);
        let mut state = OptimizerState::new(&[1]);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let loss = |w: f64| 0.5 * (w - 3.0) * (w - 3.0);
        let before = loss(p[0].1.data()[0]);
        let g = p[0].1.data()[0] - 3.0;
        run_step(&mut p, &[g], &mut state, &cfg);
        let after = loss(p[0].1.data()[0]);
        assert!(after < before);
    }

    #[test]
    fn persistence_examples() {
        let batch = WindowBatch {
            x: Tensor::new(&[1, 2, 3], vec![1.0, 3.0, 5.0, 2.0, 4.0, 7.0]).unwrap(),
            y: Tensor::<f64>::zeros(&[1, 2, 4]).unwrap(),
            hist_calendar: Vec::new(),
            fut_calendar: Vec::new(),
            store_ids: vec![0],
            item_ids: vec![0, 1],
            file_embeddings: None,
        };
        let f = persistence_baseline(&batch).unwrap();
        assert_eq!(f.shape(), &[1, 2, 4]);
        assert_eq!(&f.data()[..4], &[5.0; 4]);
        assert_eq!(&f.data()[4..], &[7.0; 4]);
    }

    #[test]
    fn persistence_on_linear_ramp() {
        // slope-1 ramp: history ends at value 9, targets are 10, 11, 12, 13
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = (10..14).map(|i| i as f64).collect();
        let batch = WindowBatch {
            x: Tensor::new(&[1, 1, 10], x).unwrap(),
            y: Tensor::new(&[1, 1, 4], y).unwrap(),
            hist_calendar: Vec::new(),
            fut_calendar: Vec::new(),
            store_ids: vec![0],
            item_ids: vec![0],
            file_embeddings: None,
        };
        let f = persistence_baseline(&batch).unwrap();
        assert!((mae(&f, &batch.y).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn patience_zero_is_rejected() {
        let cfg = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
