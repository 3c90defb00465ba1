//! Gradient verification via central finite differences.
//!
//! `grad_check` compares the tape's analytic gradient of a scalar-valued
//! function against `(f(x+h) - f(x-h)) / 2h` per coordinate. It is the
//! independent oracle for every backward rule in the crate: the numeric side
//! never touches the backward pass.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over coordinates of the relative error.
    pub max_rel_err: f64,
    /// Coordinate attaining `max_rel_err`.
    pub worst_coord: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coords: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Relative error with a small floor so near-zero gradients compare
/// absolutely at the 1e-3 scale.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-3)
}

/// Checks the analytic gradient of `f` at `x` against central differences.
///
/// `f` must be deterministic and build its output from the tape it is given;
/// any top-k selections inside it must be frozen (or the input kept away from
/// ties) so the function stays differentiable at `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    // Analytic side.
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone(), true);
    let loss = f(&mut tape, xid)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::shape(format!(
            "grad_check requires a scalar function, got output shape {:?}",
            tape.value(loss).shape()
        )));
    }
    if !tape.value(loss).all_finite() {
        return Err(Error::numerical("loss is not finite".to_string()));
    }
    tape.backward(loss)?;
    let analytic = tape.grad_tensor(xid);

    // Numeric side: forward evaluations only.
    let eval = |data: &[f64]| -> Result<f64> {
        let mut t = Tape::new();
        let id = t.leaf(Tensor::new(x.shape(), data.to_vec())?, false);
        let out = f(&mut t, id)?;
        t.value(out).item()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_coord: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coords: x.numel(),
        tol,
    };
    let mut data = x.data().to_vec();
    for i in 0..data.len() {
        let orig = data[i];
        data[i] = orig + h;
        let fp = eval(&data)?;
        data[i] = orig - h;
        let fm = eval(&data)?;
        data[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite gradient at coordinate {i}: analytic {a}, numeric {numeric}"
            )));
        }
        let e = rel_err(a, numeric);
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst_coord = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

/// One named check of the battery.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub scope: &'static str,
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
}

fn record(out: &mut Vec<CheckOutcome>, name: &str, scope: &'static str, r: &GradCheckReport) {
    out.push(CheckOutcome {
        name: name.to_string(),
        scope,
        max_rel_err: r.max_rel_err,
        tol: r.tol,
        pass: r.pass(),
    });
}

fn random_tensor(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor<f64> {
    // offset keeps relu/abs inputs away from their kinks
    Tensor::from_fn(shape, |_| {
        let v = rng.random::<f64>() * 2.0 - 1.0;
        if v.abs() < 0.05 {
            v + 0.1
        } else {
            v
        }
    })
    .expect("valid shape")
}

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Finite-difference verification of every backward rule: per-op checks,
/// module-level checks (frozen top-k gate, CoSENT, both nonlinear blocks),
/// and the full forecaster forward + MSE with gate masks frozen.
pub fn battery(seed: u64) -> Result<Vec<CheckOutcome>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // ── per-op ──
    let x = random_tensor(&[2, 3, 4], &mut rng);
    record(&mut out, "sum_all", "op", &grad_check(|t, x| Ok(t.sum_all(x)), &x, H, TOL)?);
    record(&mut out, "mean_all", "op", &grad_check(|t, x| Ok(t.mean_all(x)), &x, H, TOL)?);
    record(
        &mut out,
        "scale_neg_abs_relu",
        "op",
        &grad_check(
            |t, x| {
                let s = t.scale(x, 1.7);
                let n = t.neg(s);
                let a = t.abs(n);
                let r = t.relu(a);
                Ok(t.sum_all(r))
            },
            &x,
            H,
            TOL,
        )?,
    );
    {
        let other = random_tensor(&[2, 3, 4], &mut rng);
        for (name, f) in [
            ("add", 0usize),
            ("sub", 1),
            ("mul", 2),
        ] {
            let o = other.clone();
            let r = grad_check(
                move |t, x| {
                    let c = t.constant(o.clone());
                    let y = match f {
                        0 => t.add(x, c)?,
                        1 => t.sub(c, x)?,
                        _ => t.mul(x, c)?,
                    };
                    let sq = t.mul(y, y)?;
                    Ok(t.sum_all(sq))
                },
                &x,
                H,
                TOL,
            )?;
            record(&mut out, name, "op", &r);
        }
    }
    {
        let xs = random_tensor(&[2, 3, 4], &mut rng);
        let bias = random_tensor(&[4], &mut rng);
        let xs2 = xs.clone();
        record(
            &mut out,
            "add_bias.bias",
            "op",
            &grad_check(
                move |t, b| {
                    let x = t.constant(xs2.clone());
                    let y = t.add_bias(x, b)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum_all(sq))
                },
                &bias,
                H,
                TOL,
            )?,
        );
        let b2 = bias.clone();
        record(
            &mut out,
            "add_bias.input",
            "op",
            &grad_check(
                move |t, x| {
                    let b = t.constant(b2.clone());
                    let y = t.add_bias(x, b)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum_all(sq))
                },
                &xs,
                H,
                TOL,
            )?,
        );
    }
    {
        let a = random_tensor(&[2, 3, 4], &mut rng);
        let b = random_tensor(&[2, 4, 5], &mut rng);
        let b2 = b.clone();
        record(
            &mut out,
            "matmul_batched.lhs",
            "op",
            &grad_check(
                move |t, x| {
                    let c = t.constant(b2.clone());
                    let y = t.matmul(x, c)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum_all(sq))
                },
                &a,
                H,
                TOL,
            )?,
        );
        let a2 = a.clone();
        record(
            &mut out,
            "matmul_batched.rhs",
            "op",
            &grad_check(
                move |t, x| {
                    let c = t.constant(a2.clone());
                    let y = t.matmul(c, x)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum_all(sq))
                },
                &b,
                H,
                TOL,
            )?,
        );
        // rank-2 rhs broadcast across the batch
        let a3 = a.clone();
        let w = random_tensor(&[4, 5], &mut rng);
        record(
            &mut out,
            "matmul_broadcast.rhs",
            "op",
            &grad_check(
                move |t, x| {
                    let c = t.constant(a3.clone());
                    let y = t.matmul(c, x)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum_all(sq))
                },
                &w,
                H,
                TOL,
            )?,
        );
    }
    record(
        &mut out,
        "transpose_last2",
        "op",
        &grad_check(
            |t, x| {
                let y = t.transpose_last2(x)?;
                let sq = t.mul(y, y)?;
                Ok(t.sum_all(sq))
            },
            &random_tensor(&[2, 3, 4], &mut rng),
            H,
            TOL,
        )?,
    );
    record(
        &mut out,
        "concat_slice_reshape",
        "op",
        &grad_check(
            |t, x| {
                let a = t.slice_last(x, 0, 2)?;
                let b = t.slice_last(x, 2, 2)?;
                let c = t.concat_last(&[b, a])?;
                let r = t.reshape(c, &[6, 4])?;
                let sq = t.mul(r, r)?;
                Ok(t.sum_all(sq))
            },
            &random_tensor(&[2, 3, 4], &mut rng),
            H,
            TOL,
        )?,
    );
    for axis in 0..3 {
        record(
            &mut out,
            &format!("softmax_axis.{axis}"),
            "op",
            &grad_check(
                move |t, x| {
                    let p = t.softmax_axis(x, axis)?;
                    let sq = t.mul(p, p)?;
                    Ok(t.sum_all(sq))
                },
                &random_tensor(&[2, 3, 4], &mut rng),
                H,
                TOL,
            )?,
        );
    }
    {
        let table = random_tensor(&[6, 3], &mut rng);
        record(
            &mut out,
            "embedding_lookup",
            "op",
            &grad_check(
                |t, table| {
                    let y = t.embedding_lookup(table, &[1, 4, 1, 0], &[2, 2])?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum_all(sq))
                },
                &table,
                H,
                TOL,
            )?,
        );
    }
    {
        // layer_norm wrt input, scale and shift: pack all three into one leaf
        let packed = random_tensor(&[3 * 4 + 4 + 4], &mut rng);
        record(
            &mut out,
            "layer_norm",
            "op",
            &grad_check(
                |t, p| {
                    let x = t.slice_last(p, 0, 12)?;
                    let x = t.reshape(x, &[3, 4])?;
                    let gamma = t.slice_last(p, 12, 4)?;
                    let beta = t.slice_last(p, 16, 4)?;
                    let y = t.layer_norm(x, gamma, beta, 1e-5)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum_all(sq))
                },
                &packed,
                H,
                TOL,
            )?,
        );
    }
    {
        let uv = random_tensor(&[10], &mut rng);
        record(
            &mut out,
            "cosine",
            "op",
            &grad_check(
                |t, p| {
                    let u = t.slice_last(p, 0, 5)?;
                    let v = t.slice_last(p, 5, 5)?;
                    t.cosine(u, v)
                },
                &uv,
                H,
                TOL,
            )?,
        );
    }
    record(
        &mut out,
        "log1p_sum_exp",
        "op",
        &grad_check(|t, x| t.log1p_sum_exp(x), &random_tensor(&[7], &mut rng), H, TOL)?,
    );

    // ── module level ──
    {
        // top-k softmax with the mask frozen at the unperturbed point
        let z = random_tensor(&[2, 5, 3], &mut rng);
        let mut probe = Tape::new();
        let zid = probe.leaf(z.clone(), false);
        let gate = probe.topk_softmax(zid, 1, 3)?;
        let mask = probe.gate_mask(gate).expect("gate node").to_vec();
        record(
            &mut out,
            "topk_softmax.frozen_mask",
            "module",
            &grad_check(
                move |t, x| {
                    let p = t.subset_softmax(x, 1, mask.clone())?;
                    let sq = t.mul(p, p)?;
                    Ok(t.sum_all(sq))
                },
                &z,
                H,
                TOL,
            )?,
        );
    }
    {
        // CoSENT over four packed 5-vectors
        let packed = random_tensor(&[20], &mut rng);
        record(
            &mut out,
            "cosent_loss",
            "module",
            &grad_check(
                |t, p| {
                    let vecs: Vec<_> = (0..4)
                        .map(|i| t.slice_last(p, i * 5, 5))
                        .collect::<Result<_>>()?;
                    crate::embedding::cosent_loss_tape(t, &vecs, &[(0, 1)], &[(2, 3)], 20.0)
                },
                &packed,
                H,
                TOL,
            )?,
        );
    }
    {
        use crate::model::{nonlinear_block_mlp, AffineOf};
        // MLP block wrt input and both mixing weights, packed into one leaf
        let (cp, tp) = (3usize, 4usize);
        let n_in = 2 * cp * tp;
        let packed = random_tensor(&[n_in + tp * tp + tp + cp * cp + cp], &mut rng);
        record(
            &mut out,
            "nonlinear_block_mlp",
            "module",
            &grad_check(
                move |t, p| {
                    let mut off = 0;
                    let mut take = |t: &mut Tape<f64>, n: usize, shape: &[usize]| -> Result<crate::tape::NodeId> {
                        let s = t.slice_last(p, off, n)?;
                        off += n;
                        t.reshape(s, shape)
                    };
                    let x = take(t, n_in, &[2, cp, tp])?;
                    let wt = take(t, tp * tp, &[tp, tp])?;
                    let bt = take(t, tp, &[tp])?;
                    let wc = take(t, cp * cp, &[cp, cp])?;
                    let bc = take(t, cp, &[cp])?;
                    let r = nonlinear_block_mlp(
                        t,
                        x,
                        &AffineOf { weight: wt, bias: bt },
                        &AffineOf { weight: wc, bias: bc },
                    )?;
                    let sq = t.mul(r, r)?;
                    Ok(t.sum_all(sq))
                },
                &packed,
                H,
                TOL,
            )?,
        );
    }
    {
        use crate::model::{nonlinear_block_transformer, BlockKind, BlockOf, ModelConfig, ModelParams};
        // transformer block wrt its input; parameters are fixed random
        let mut cfg = ModelConfig::new(4, 8, 4);
        cfg.block = BlockKind::Transformer;
        cfg.d_embed = 8;
        cfg.mlp_hidden = 8;
        cfg.tf_heads = 2;
        let params = ModelParams::<f64>::seeded(&cfg, &mut rng)?;
        let x = random_tensor(&[2, cfg.c_compressed(), cfg.t_compressed()], &mut rng);
        record(
            &mut out,
            "nonlinear_block_transformer",
            "module",
            &grad_check(
                move |t, x| {
                    let ids = params.register(t);
                    let BlockOf::Transformer { layers } = &ids.block else {
                        unreachable!("config selects the transformer block")
                    };
                    let (r, _) = nonlinear_block_transformer(t, x, layers, &cfg)?;
                    let sq = t.mul(r, r)?;
                    Ok(t.sum_all(sq))
                },
                &x,
                H,
                TOL,
            )?,
        );
    }

    // ── full model ──
    {
        let r = full_model_check(seed)?;
        record(&mut out, "model.forward_mse", "model", &r);
    }
    Ok(out)
}

/// Gradient check of the full forecaster forward + MSE at the tiny config
/// (B=2, C=4, T=8, P=4, both compression levels 2), with gate masks frozen
/// and the leaf spanning every parameter coordinate.
pub fn full_model_check(seed: u64) -> Result<GradCheckReport> {
    use crate::model::{forward_ids, GateMode, ModelConfig, ModelParams};
    use crate::synthetic::sinusoid_trend_series;
    use crate::train::mse_node;
    use rand::SeedableRng;

    let mut cfg = ModelConfig::new(4, 8, 4);
    cfg.d_embed = 8;
    cfg.mlp_hidden = 8;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::<f64>::seeded(&cfg, &mut rng)?;
    // Evaluate at a generic point: zero-initialized biases put relu
    // preactivations exactly on the kink, where central differences and
    // the zero subgradient disagree. A small signed offset on every
    // coordinate moves the check away from kinks and top-k ties.
    params.visit_mut(&mut |_, t: &mut Tensor<f64>| {
        for v in t.data_mut() {
            let u = rng.random::<f64>();
            let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            *v += sign * (0.02 + 0.03 * u);
        }
    });

    let series = sinusoid_trend_series(4, 30, seed);
    let norm = crate::data::Normalizer::fit(&series, 0..30)?;
    let data = crate::data::Dataset::<f64>::prepare(&series, &norm)?;
    let batch = data.batch(&[0, 9], cfg.lookback, cfg.horizon)?;

    // capture gate masks at the unperturbed parameters
    let mut probe = Tape::new();
    let probe_ids = params.register(&mut probe);
    let probe_trace = forward_ids(&mut probe, &probe_ids, &batch, &cfg, GateMode::TopK, false)?;
    let masks = probe_trace.masks(&probe);

    // flatten every parameter into one leaf
    let mut flat = Vec::new();
    let mut shapes = Vec::new();
    params.visit(&mut |_, t| {
        flat.extend_from_slice(t.data());
        shapes.push(t.shape().to_vec());
    });
    let x0 = Tensor::from_slice(&flat)?;
    let cfg2 = cfg.clone();
    let params2 = params.clone();
    let batch2 = batch.clone();
    grad_check(
        move |t, x| {
            let mut offset = 0usize;
            let ids = params2.map(|tensor| {
                let n = tensor.numel();
                let s = t.slice_last(x, offset, n).expect("slice within leaf");
                offset += n;
                t.reshape(s, tensor.shape()).expect("consistent shape")
            });
            let trace = forward_ids(t, &ids, &batch2, &cfg2, GateMode::Frozen(&masks), false)?;
            let truth = t.constant(batch2.y.clone());
            mse_node(t, trace.t_out, truth)
        },
        &x0,
        H,
        TOL,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact_on_dyadic_inputs() {
        // dyadic coordinates and a power-of-two step make the central
        // difference of a sum exact
        let x = Tensor::from_fn(&[2, 3], |i| 0.25 * i as f64 - 0.5).unwrap();
        let h = (2.0f64).powi(-17);
        let report = grad_check(|t, x| Ok(t.sum_all(x)), &x, h, 1e-12).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        assert!(report.pass());
    }

    #[test]
    fn softmax_affine_composite() {
        let x = Tensor::from_slice(&[0.3, -0.7, 1.1, 0.2]).unwrap();
        let report = grad_check(
            |t, x| {
                let w = t.constant(Tensor::new(&[4, 3], (0..12).map(|i| 0.1 * i as f64 - 0.5).collect()).unwrap());
                let x2 = t.reshape(x, &[1, 4])?;
                let z = t.matmul(x2, w)?;
                let p = t.softmax_axis(z, 1)?;
                let sq = t.mul(p, p)?;
                Ok(t.sum_all(sq))
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn nan_is_reported() {
        let x = Tensor::from_slice(&[1.0, -1.0]).unwrap();
        let err = grad_check(
            |t, x| {
                let c = t.constant(Tensor::from_slice(&[f64::NAN, 0.0]).unwrap());
                let y = t.mul(x, c)?;
                Ok(t.sum_all(y))
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }
}
