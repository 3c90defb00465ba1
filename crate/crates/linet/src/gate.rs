//! Top-k softmax gating.
//!
//! A gate takes a logits tensor, keeps the k largest entries per lane along
//! its axis, softmax-normalizes the survivors, and zeroes everything else.
//! The axis is always the contraction axis of the matmul that consumes the
//! gate, so each output slot receives a convex combination of source entries.
//!
//! Exclusion is implemented by leaving entries out of the normalizing sum —
//! no arithmetic with infinities. Gradients treat the selection mask as a
//! constant (straight-through): the softmax Jacobian restricted to the
//! selected subset, zero elsewhere.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{axis_lanes, lane_start, Tensor};

/// Retention rate and gate axis for one top-k softmax gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateConfig {
    /// Fraction of entries kept along the gate axis, in (0, 1].
    pub retention: f64,
    /// Contraction axis of the matmul that consumes the gate output.
    pub axis: usize,
}

/// Sparse gate weights plus the boolean selection mask (true = selected).
#[derive(Clone, Debug, PartialEq)]
pub struct GateOutput<T: Scalar> {
    pub weights: Tensor<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> GateOutput<T> {
    /// Number of selected entries in lane-major element order.
    pub fn selected_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Maps a retention rate to k: `clamp(ceil(retention * axis_len), 1, axis_len)`.
pub fn retention_to_k(retention: f64, axis_len: usize) -> Result<usize> {
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::config(format!(
            "retention rate must be in (0, 1], got {retention}"
        )));
    }
    if axis_len == 0 {
        return Err(Error::config("gate axis length must be positive".to_string()));
    }
    let k = (retention * axis_len as f64).ceil() as usize;
    Ok(k.clamp(1, axis_len))
}

/// Writes the top-k selection mask for one contiguous lane.
///
/// Ties at the k-th boundary resolve to the lowest index.
pub(crate) fn lane_topk_mask<T: Scalar>(lane: &[T], k: usize, mask: &mut [bool]) -> Result<()> {
    debug_assert_eq!(lane.len(), mask.len());
    if lane.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "top-k selection requires finite logits".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..lane.len()).collect();
    order.sort_by(|&a, &b| {
        lane[b]
            .partial_cmp(&lane[a])
            .expect("finite logits compare")
            .then(a.cmp(&b))
    });
    mask.iter_mut().for_each(|m| *m = false);
    for &idx in order.iter().take(k) {
        mask[idx] = true;
    }
    Ok(())
}

/// Softmax over the selected subset of one contiguous lane.
///
/// Non-selected outputs are exactly zero. Errors when the selected subset is
/// empty or has no finite support.
pub(crate) fn lane_subset_softmax<T: Scalar>(lane: &[T], mask: &[bool], out: &mut [T]) -> Result<()> {
    debug_assert_eq!(lane.len(), mask.len());
    debug_assert_eq!(lane.len(), out.len());
    let mut max = T::neg_infinity();
    let mut any = false;
    for (v, &m) in lane.iter().zip(mask) {
        if !m {
            continue;
        }
        if v.is_nan() {
            return Err(Error::numerical("softmax input is NaN".to_string()));
        }
        any = true;
        if *v > max {
            max = *v;
        }
    }
    if !any || max == T::neg_infinity() {
        return Err(Error::numerical(
            "softmax has empty support on a lane".to_string(),
        ));
    }
    let mut denom = T::zero();
    for (i, (v, &m)) in lane.iter().zip(mask).enumerate() {
        if m {
            let e = (*v - max).exp();
            out[i] = e;
            denom = denom + e;
        } else {
            out[i] = T::zero();
        }
    }
    for (o, &m) in out.iter_mut().zip(mask) {
        if m {
            *o = *o / denom;
        }
    }
    Ok(())
}

/// Top-k softmax over a tensor: per-lane selection along `cfg.axis` with
/// `k = retention_to_k(cfg.retention, axis_len)`.
pub fn topk_softmax<T: Scalar>(z: &Tensor<T>, cfg: &GateConfig) -> Result<GateOutput<T>> {
    let (lanes, len, stride) = axis_lanes(z.shape(), cfg.axis)?;
    let k = retention_to_k(cfg.retention, len)?;
    let mut mask = vec![false; z.numel()];
    let mut out = vec![T::zero(); z.numel()];
    let mut scratch = vec![T::zero(); len];
    let mut lane_mask = vec![false; len];
    let mut probs = vec![T::zero(); len];
    for lane in 0..lanes {
        let base = lane_start(lane, len, stride);
        for i in 0..len {
            scratch[i] = z.data()[base + i * stride];
        }
        lane_topk_mask(&scratch, k, &mut lane_mask)?;
        lane_subset_softmax(&scratch, &lane_mask, &mut probs)?;
        for i in 0..len {
            mask[base + i * stride] = lane_mask[i];
            out[base + i * stride] = probs[i];
        }
    }
    Ok(GateOutput {
        weights: Tensor::new(z.shape(), out)?,
        mask,
    })
}

/// Dense softmax gate: `topk_softmax` with retention 1.0 (mask all-true).
pub fn dense_softmax_gate<T: Scalar>(z: &Tensor<T>, axis: usize) -> Result<GateOutput<T>> {
    topk_softmax(
        z,
        &GateConfig {
            retention: 1.0,
            axis,
        },
    )
}

/// Gradient of the gate output with the selection mask held constant.
///
/// For selected i, j: `dp_i/dz_j = p_i (delta_ij - p_j)`; non-selected
/// positions receive exactly zero gradient.
pub fn topk_softmax_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    out: &GateOutput<T>,
    axis: usize,
) -> Result<Tensor<T>> {
    if grad_out.shape() != out.weights.shape() {
        return Err(Error::shape(format!(
            "upstream gradient shape {:?} does not match gate shape {:?}",
            grad_out.shape(),
            out.weights.shape()
        )));
    }
    let gx = gate_backward(&out.weights, &out.mask, axis, grad_out.data())?;
    Tensor::new(out.weights.shape(), gx)
}

/// Shared backward kernel: `p` are the forward weights, `mask` the selection.
pub(crate) fn gate_backward<T: Scalar>(
    p: &Tensor<T>,
    mask: &[bool],
    axis: usize,
    g: &[T],
) -> Result<Vec<T>> {
    let (lanes, len, stride) = axis_lanes(p.shape(), axis)?;
    let mut gx = vec![T::zero(); p.numel()];
    for lane in 0..lanes {
        let base = lane_start(lane, len, stride);
        let mut s = T::zero();
        for i in 0..len {
            let off = base + i * stride;
            if mask[off] {
                s = s + g[off] * p.data()[off];
            }
        }
        for i in 0..len {
            let off = base + i * stride;
            if mask[off] {
                gx[off] = p.data()[off] * (g[off] - s);
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(v: &[f64]) -> Tensor<f64> {
        Tensor::from_slice(v).unwrap()
    }

    #[test]
    fn retention_to_k_examples() {
        assert_eq!(retention_to_k(0.5, 96).unwrap(), 48);
        assert_eq!(retention_to_k(0.1, 7).unwrap(), 1);
        assert_eq!(retention_to_k(1.0, 10).unwrap(), 10);
        assert!(retention_to_k(0.0, 10).is_err());
        assert!(retention_to_k(1.1, 10).is_err());
    }

    #[test]
    fn full_retention_is_uniform_on_equal_logits() {
        let out = topk_softmax(
            &vec1(&[1.0, 1.0, 1.0]),
            &GateConfig {
                retention: 1.0,
                axis: 0,
            },
        )
        .unwrap();
        for &w in out.weights.data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(out.mask, vec![true, true, true]);
    }

    #[test]
    fn golden_topk_two_of_three() {
        // I_k = {0, 2}: weights sigma(1), 0, sigma(-1)
        let out = topk_softmax(
            &vec1(&[3.0, 1.0, 2.0]),
            &GateConfig {
                retention: 2.0 / 3.0,
                axis: 0,
            },
        )
        .unwrap();
        let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
        let w = out.weights.data();
        assert!((w[0] - sigma(1.0)).abs() < 1e-12);
        assert_eq!(w[1], 0.0);
        assert!((w[2] - sigma(-1.0)).abs() < 1e-12);
        assert!((w[0] - 0.73106).abs() < 1e-5);
        assert!((w[2] - 0.26894).abs() < 1e-5);
        assert_eq!(out.mask, vec![true, false, true]);
    }

    #[test]
    fn single_selection_normalizes_to_one() {
        let out = topk_softmax(
            &vec1(&[5.0, 0.0, 0.0, 0.0]),
            &GateConfig {
                retention: 0.25,
                axis: 0,
            },
        )
        .unwrap();
        assert_eq!(out.weights.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ties_at_boundary_select_lowest_index() {
        let out = topk_softmax(
            &vec1(&[1.0, 2.0, 2.0, 1.0]),
            &GateConfig {
                retention: 0.5,
                axis: 0,
            },
        )
        .unwrap();
        assert_eq!(out.mask, vec![false, true, true, false]);

        // all-equal logits, k = 2: the two lowest indices win
        let out = topk_softmax(
            &vec1(&[7.0, 7.0, 7.0, 7.0]),
            &GateConfig {
                retention: 0.5,
                axis: 0,
            },
        )
        .unwrap();
        assert_eq!(out.mask, vec![true, true, false, false]);
    }

    #[test]
    fn backward_golden_row() {
        let out = topk_softmax(
            &vec1(&[3.0, 1.0, 2.0]),
            &GateConfig {
                retention: 2.0 / 3.0,
                axis: 0,
            },
        )
        .unwrap();
        let g = topk_softmax_backward(&vec1(&[1.0, 0.0, 0.0]), &out, 0).unwrap();
        let p0 = out.weights.data()[0];
        let p2 = out.weights.data()[2];
        assert!((g.data()[0] - p0 * (1.0 - p0)).abs() < 1e-15);
        assert_eq!(g.data()[1], 0.0);
        assert!((g.data()[2] + p0 * p2).abs() < 1e-15);
        assert!((g.data()[0] - 0.19661).abs() < 1e-5);
        assert!((g.data()[2] + 0.19661).abs() < 1e-5);
    }

    #[test]
    fn backward_zero_upstream_is_zero() {
        let out = topk_softmax(
            &vec1(&[3.0, 1.0, 2.0]),
            &GateConfig {
                retention: 2.0 / 3.0,
                axis: 0,
            },
        )
        .unwrap();
        let g = topk_softmax_backward(&vec1(&[0.0, 0.0, 0.0]), &out, 0).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn dense_gate_matches_full_retention() {
        let z = vec1(&[0.3, -1.2, 0.8, 0.0]);
        let dense = dense_softmax_gate(&z, 0).unwrap();
        let full = topk_softmax(
            &z,
            &GateConfig {
                retention: 1.0,
                axis: 0,
            },
        )
        .unwrap();
        assert_eq!(dense.weights.data(), full.weights.data());
        assert!(dense.mask.iter().all(|&m| m));

        let half = dense_softmax_gate(&vec1(&[0.0, 0.0]), 0).unwrap();
        assert_eq!(half.weights.data(), &[0.5, 0.5]);
    }

    #[test]
    fn gate_along_middle_axis_of_rank3() {
        // shape [1, 3, 2], axis 1: two lanes (one per trailing column)
        let z = Tensor::<f64>::new(&[1, 3, 2], vec![3.0, 0.0, 1.0, 0.1, 2.0, 0.2]).unwrap();
        let out = topk_softmax(
            &z,
            &GateConfig {
                retention: 2.0 / 3.0,
                axis: 1,
            },
        )
        .unwrap();
        // column 0 holds [3, 1, 2]: select {0, 2}
        assert!(out.mask[0] && !out.mask[2] && out.mask[4]);
        let w = out.weights.data();
        assert!((w[0] + w[4] - 1.0).abs() < 1e-12);
        // column 1 holds [0, 0.1, 0.2]: select {1, 2}
        assert!(!out.mask[1] && out.mask[3] && out.mask[5]);
        assert!((w[3] + w[5] - 1.0).abs() < 1e-12);
    }
}
