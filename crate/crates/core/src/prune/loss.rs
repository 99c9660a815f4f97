//! Edge and node objectives.
//!
//! The public functions take probabilities. Training goes through the
//! `*_logit` helpers, which evaluate the same quantities from logits without
//! the clamp and give their derivatives with respect to the logit.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::forward::{sigmoid, softplus};
use super::PruneError;
use crate::graph::{NodeMask, WeightMatrix};

const CLAMP_LO: f64 = 1e-7;
const CLAMP_HI: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeLossConfig {
    pub lambda_s: f64,
    pub lambda_c: f64,
    pub focal_gamma: f64,
}

impl Default for NodeLossConfig {
    fn default() -> Self {
        Self { lambda_s: 0.1, lambda_c: 0.05, focal_gamma: 2.0 }
    }
}

fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<(), PruneError> {
    if expected != actual {
        return Err(PruneError::Dimension { what, expected, actual });
    }
    Ok(())
}

pub(crate) fn edge_loss_raw(w: ArrayView2<f64>, a_gt: ArrayView2<f64>, y: &[f64], lambda_off: f64) -> f64 {
    let n = y.len();
    let (mut on, mut on_count, mut off, mut off_count) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let m = y[i] * y[j];
            on += m * (w[[i, j]] - a_gt[[i, j]]).powi(2);
            on_count += m;
            off += (1.0 - m) * w[[i, j]].powi(2);
            off_count += 1.0 - m;
        }
    }
    let first = if on_count > 0.0 { on / on_count } else { 0.0 };
    let second = if off_count > 0.0 { lambda_off * off / off_count } else { 0.0 };
    first + second
}

/// Masked squared error on the support `y_i y_j = 1`, plus `lambda_off` times the
/// mean squared weight off the support. A term with an empty index set is 0.
pub fn edge_loss(
    w_pred: &WeightMatrix,
    a_gt: &WeightMatrix,
    y: &NodeMask,
    lambda_off: f64,
) -> Result<f64, PruneError> {
    check_dim("target matrix size", w_pred.n(), a_gt.n())?;
    check_dim("mask length", w_pred.n(), y.n())?;
    Ok(edge_loss_raw(w_pred.as_array().view(), a_gt.as_array().view(), &y.to_f64(), lambda_off))
}

/// `lambda_c / n^2` times the total outgoing weight of nodes with `y_i = 0`.
pub(crate) fn coherence_raw(w: ArrayView2<f64>, y: &[f64], lambda_c: f64) -> f64 {
    let n = y.len();
    let mut sum = 0.0;
    for i in (0..n).filter(|&i| y[i] == 0.0) {
        sum += w.row(i).iter().map(|v| v.abs()).sum::<f64>();
    }
    lambda_c * sum / (n * n) as f64
}

fn bce(p: f64, y: f64) -> f64 {
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn focal(p: f64, y: f64, gamma: f64) -> f64 {
    -(y * (1.0 - p).powf(gamma) * p.ln() + (1.0 - y) * p.powf(gamma) * (1.0 - p).ln())
}

/// Mean focal loss over nodes, probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn focal_loss(y_hat: &[f64], y: &NodeMask, gamma: f64) -> Result<f64, PruneError> {
    check_dim("mask length", y_hat.len(), y.n())?;
    let yf = y.to_f64();
    let n = yf.len() as f64;
    Ok(y_hat.iter().zip(&yf).map(|(&p, &t)| focal(p.clamp(CLAMP_LO, CLAMP_HI), t, gamma)).sum::<f64>() / n)
}

/// Mean BCE (or focal) plus sparsity `lambda_s * mean(y_hat)` plus coherence.
pub fn node_loss(
    y_hat: &[f64],
    y: &NodeMask,
    w_pred: &WeightMatrix,
    cfg: &NodeLossConfig,
    use_focal: bool,
) -> Result<f64, PruneError> {
    check_dim("mask length", y_hat.len(), y.n())?;
    check_dim("weight matrix size", y.n(), w_pred.n())?;
    let yf = y.to_f64();
    let n = yf.len() as f64;
    let clamped: Vec<f64> = y_hat.iter().map(|p| p.clamp(CLAMP_LO, CLAMP_HI)).collect();
    let fit = if use_focal {
        clamped.iter().zip(&yf).map(|(&p, &t)| focal(p, t, cfg.focal_gamma)).sum::<f64>() / n
    } else {
        clamped.iter().zip(&yf).map(|(&p, &t)| bce(p, t)).sum::<f64>() / n
    };
    let sparsity = cfg.lambda_s * clamped.iter().sum::<f64>() / n;
    Ok(fit + sparsity + coherence_raw(w_pred.as_array().view(), &yf, cfg.lambda_c))
}

pub fn total_loss(edge: f64, node: f64, beta: f64) -> f64 {
    edge + beta * node
}

/// BCE of `sigmoid(u)` against `y` and its derivative in `u`.
pub(crate) fn bce_logit(u: f64, y: f64) -> (f64, f64) {
    let loss = y * softplus(-u) + (1.0 - y) * softplus(u);
    (loss, sigmoid(u) - y)
}

/// Focal loss of `sigmoid(u)` against `y` and its derivative in `u`.
pub(crate) fn focal_logit(u: f64, y: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(u);
    let q = 1.0 - p;
    let ln_p = -softplus(-u);
    let ln_q = -softplus(u);
    let pos_loss = -q.powf(gamma) * ln_p;
    let neg_loss = -p.powf(gamma) * ln_q;
    let pos_grad = gamma * q.powf(gamma) * p * ln_p - q.powf(gamma + 1.0);
    let neg_grad = -gamma * p.powf(gamma) * q * ln_q + p.powf(gamma + 1.0);
    (y * pos_loss + (1.0 - y) * neg_loss, y * pos_grad + (1.0 - y) * neg_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn wm(rows: Array2<f64>) -> WeightMatrix {
        WeightMatrix::new(rows).unwrap()
    }

    #[test]
    fn edge_hand_case() {
        let mut w = Array2::from_elem((3, 3), 0.5);
        w.diag_mut().fill(0.0);
        let a = array![[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let y = NodeMask::from_bits(vec![true, true, false]);
        // support {(0,1),(1,0)}: (0.25 + 0.25) / 2; off-support: 0.5 * 4 * 0.25 / 4
        let l = edge_loss(&wm(w), &wm(a), &y, 0.5).unwrap();
        assert!((l - 0.375).abs() < 1e-12);
    }

    #[test]
    fn edge_perfect_and_full_mask() {
        let a = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let y = NodeMask::from_bits(vec![true, true, false]);
        assert_eq!(edge_loss(&wm(a.clone()), &wm(a.clone()), &y, 0.5).unwrap(), 0.0);
        // full mask: off-support is empty, only the first term remains
        let all = NodeMask::all(3);
        let l = edge_loss(&wm(a.clone()), &WeightMatrix::zeros(3), &all, 0.5).unwrap();
        assert!((l - 2.0 / 6.0).abs() < 1e-12);
        let err = edge_loss(&wm(a), &WeightMatrix::zeros(4), &y, 0.5).unwrap_err();
        assert!(matches!(err, PruneError::Dimension { .. }));
    }

    #[test]
    fn node_hand_case() {
        let mut w = Array2::zeros((2, 2));
        w[[1, 0]] = 0.8;
        let y = NodeMask::from_bits(vec![true, false]);
        let l = node_loss(&[0.5, 0.5], &y, &wm(w), &NodeLossConfig::default(), false).unwrap();
        // ln 2 + 0.1 * 0.5 + 0.05 * 0.8 / 4
        assert!((l - (std::f64::consts::LN_2 + 0.06)).abs() < 1e-12);
        assert!((l - 0.7531).abs() < 1e-4);
    }

    #[test]
    fn node_perfect_mask_leaves_regularizers() {
        let y = NodeMask::from_bits(vec![true, false, true]);
        let cfg = NodeLossConfig::default();
        let l = node_loss(&[1.0, 0.0, 1.0], &y, &WeightMatrix::zeros(3), &cfg, false).unwrap();
        let sparsity = 0.1 * (2.0 * CLAMP_HI + CLAMP_LO) / 3.0;
        assert!((l - sparsity).abs() < 1e-6);
        // all-ones target: no absent rows, so the coherence term vanishes
        let mut w = Array2::from_elem((3, 3), 0.9);
        w.diag_mut().fill(0.0);
        let all = NodeMask::all(3);
        let with_w = node_loss(&[0.7, 0.7, 0.7], &all, &wm(w), &cfg, false).unwrap();
        let without = node_loss(&[0.7, 0.7, 0.7], &all, &WeightMatrix::zeros(3), &cfg, false).unwrap();
        assert_eq!(with_w, without);
    }

    #[test]
    fn focal_reduces_to_bce_at_gamma_zero() {
        let y = NodeMask::from_bits(vec![true, false, true, false]);
        let p = [0.3, 0.6, 0.9, 0.05];
        let w = WeightMatrix::zeros(4);
        let cfg = NodeLossConfig { lambda_s: 0.0, lambda_c: 0.0, focal_gamma: 0.0 };
        let a = node_loss(&p, &y, &w, &cfg, true).unwrap();
        let b = node_loss(&p, &y, &w, &cfg, false).unwrap();
        assert!((a - b).abs() < 1e-12);
        // gamma > 0 down-weights easy examples
        let f = focal_loss(&p, &y, 2.0).unwrap();
        assert!(f < b);
    }

    #[test]
    fn total_is_linear_in_beta() {
        assert!((total_loss(0.375, 0.7531, 1.0) - 1.1281).abs() < 1e-12);
        assert_eq!(total_loss(0.375, 0.7531, 0.0), 0.375);
    }

    #[test]
    fn logit_forms_agree_with_probability_forms() {
        for &u in &[-6.0, -1.5, -0.2, 0.0, 0.4, 2.0, 7.0] {
            let p = sigmoid(u);
            for &y in &[0.0, 1.0] {
                assert!((bce_logit(u, y).0 - bce(p, y)).abs() < 1e-10);
                assert!((focal_logit(u, y, 2.0).0 - focal(p, y, 2.0)).abs() < 1e-10);
                let h = 1e-6;
                let fd = (bce_logit(u + h, y).0 - bce_logit(u - h, y).0) / (2.0 * h);
                assert!((fd - bce_logit(u, y).1).abs() < 1e-7);
                let fd = (focal_logit(u + h, y, 2.0).0 - focal_logit(u - h, y, 2.0).0) / (2.0 * h);
                assert!((fd - focal_logit(u, y, 2.0).1).abs() < 1e-7);
            }
        }
        // far past the clamp the logit form keeps growing
        assert!(bce_logit(-40.0, 1.0).0 > 39.0);
    }

    fn instance(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
        (
            prop::collection::vec(0.0..=1.0f64, n * n),
            prop::collection::vec(0.0..=1.0f64, n * n),
            prop::collection::vec(any::<bool>(), n),
        )
    }

    fn square(n: usize, v: Vec<f64>) -> WeightMatrix {
        let mut a = Array2::from_shape_vec((n, n), v).unwrap();
        a.diag_mut().fill(0.0);
        wm(a)
    }

    fn zero_outside(w: &WeightMatrix, y: &NodeMask) -> WeightMatrix {
        let mut a = w.as_array().clone();
        for ((i, j), v) in a.indexed_iter_mut() {
            if !y.is_active(i) || !y.is_active(j) {
                *v = 0.0;
            }
        }
        wm(a)
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative((w, a, bits) in instance(5), lambda_off in 0.0..2.0f64) {
            let y = NodeMask::from_bits(bits);
            let w = square(5, w);
            let a = zero_outside(&square(5, a), &y);
            prop_assert!(edge_loss(&w, &a, &y, lambda_off).unwrap() >= 0.0);
            let y_hat: Vec<f64> = w.as_array().row(0).to_vec();
            let cfg = NodeLossConfig::default();
            prop_assert!(node_loss(&y_hat, &y, &w, &cfg, false).unwrap() >= 0.0);
            prop_assert!(node_loss(&y_hat, &y, &w, &cfg, true).unwrap() >= 0.0);
        }

        #[test]
        fn edge_loss_zero_iff_exact((w, _a, bits) in instance(4), bump in 1e-3..1.0f64) {
            let y = NodeMask::from_bits(bits);
            let target = zero_outside(&square(4, w), &y);
            prop_assert_eq!(edge_loss(&target, &target, &y, 0.5).unwrap(), 0.0);
            let mut moved = target.as_array().clone();
            let v = moved[[0, 1]];
            moved[[0, 1]] = if v >= 0.5 { v - 0.5 * bump } else { v + 0.5 * bump };
            prop_assert!(edge_loss(&wm(moved), &target, &y, 0.5).unwrap() > 0.0);
        }

        #[test]
        fn total_linear(e in 0.0..10.0f64, n in 0.0..10.0f64, b1 in 0.0..3.0f64, b2 in 0.0..3.0f64) {
            let mid = total_loss(e, n, 0.5 * (b1 + b2));
            let avg = 0.5 * (total_loss(e, n, b1) + total_loss(e, n, b2));
            prop_assert!((mid - avg).abs() < 1e-9);
        }
    }
}
