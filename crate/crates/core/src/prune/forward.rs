//! Deterministic forward pass: GCN backbone, bilinear edge head, mask MLP.
//!
//! Message passing runs over the complete graph on `n_max + 1` nodes (agents
//! plus the query's virtual node) with self-loops, unnormalized, so the
//! neighbourhood term of each layer is the column sum over all rows. Each layer
//! adds a per-node root term so agents keep their identity:
//!
//! ```text
//! H1 = relu(X W_root1 + 1 sum(X) W_gcn1)
//! Z  = H1 W_root2 + 1 sum(H1) W_gcn2        (first n_max rows)
//! ```

use ndarray::{s, Array1, Array2, Axis};

use super::params::PruneNetParams;
use super::PruneError;
use crate::embed::NodeFeatures;
use crate::graph::WeightMatrix;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Intermediate values of the backbone, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct GcnTrace {
    pub x_sum: Array1<f64>,
    pub pre1: Array2<f64>,
    pub h1: Array2<f64>,
    pub h1_sum: Array1<f64>,
    /// Agent rows only.
    pub z: Array2<f64>,
}

pub(crate) fn gcn_trace(x: &NodeFeatures, p: &PruneNetParams) -> Result<GcnTrace, PruneError> {
    let n_max = p.shape.n_max;
    let (rows, d) = x.x().dim();
    if rows != n_max + 1 {
        return Err(PruneError::Dimension { what: "feature rows", expected: n_max + 1, actual: rows });
    }
    if d != p.shape.d {
        return Err(PruneError::Dimension { what: "feature width", expected: p.shape.d, actual: d });
    }
    let x = x.x();
    let x_sum = x.sum_axis(Axis(0));
    let pre1 = x.dot(&p.w_root1) + x_sum.dot(&p.w_gcn1);
    let h1 = pre1.mapv(|v| v.max(0.0));
    let h1_sum = h1.sum_axis(Axis(0));
    let z_full = h1.dot(&p.w_root2) + h1_sum.dot(&p.w_gcn2);
    let z = z_full.slice(s![..n_max, ..]).to_owned();
    Ok(GcnTrace { x_sum, pre1, h1, h1_sum, z })
}

/// Latent agent matrix `Z` (`n_max x h`).
pub fn gcn_forward(x: &NodeFeatures, p: &PruneNetParams) -> Result<Array2<f64>, PruneError> {
    Ok(gcn_trace(x, p)?.z)
}

/// Bilinear scores `z_i . (B z_j)`, zero on the diagonal.
pub(crate) fn edge_logits(z: &Array2<f64>, p: &PruneNetParams) -> Array2<f64> {
    let mut e = z.dot(&p.b_edge).dot(&z.t());
    e.diag_mut().fill(0.0);
    e
}

pub fn edge_head(z: &Array2<f64>, p: &PruneNetParams) -> WeightMatrix {
    let mut w = edge_logits(z, p).mapv(sigmoid);
    w.diag_mut().fill(0.0);
    WeightMatrix::new(w).expect("sigmoid output lies in [0, 1]")
}

#[derive(Debug, Clone)]
pub(crate) struct NodeTrace {
    pub q: Array2<f64>,
    pub r: Array2<f64>,
    pub s: Array1<f64>,
}

pub(crate) fn node_trace(z: &Array2<f64>, p: &PruneNetParams) -> NodeTrace {
    let q = z.dot(&p.mlp_w1) + &p.mlp_b1;
    let r = q.mapv(|v| v.max(0.0));
    let s = r.dot(&p.mlp_w2) + p.mlp_b2();
    NodeTrace { q, r, s }
}

/// Mask logits `s` and continuous mask `y_hat = sigmoid(s)`.
pub fn node_head(z: &Array2<f64>, p: &PruneNetParams) -> (Vec<f64>, Vec<f64>) {
    let s = node_trace(z, p).s.to_vec();
    let y_hat = s.iter().map(|&v| sigmoid(v)).collect();
    (s, y_hat)
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub z: Array2<f64>,
    pub w_pred: WeightMatrix,
    pub y_hat: Vec<f64>,
    pub s: Vec<f64>,
}

pub fn forward(x: &NodeFeatures, p: &PruneNetParams) -> Result<ForwardOutput, PruneError> {
    let z = gcn_forward(x, p)?;
    let w_pred = edge_head(&z, p);
    let (s, y_hat) = node_head(&z, p);
    Ok(ForwardOutput { z, w_pred, y_hat, s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prune::params::NetShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_features(rows: usize, d: usize, seed: u64) -> NodeFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NodeFeatures::new(Array2::from_shape_simple_fn((rows, d), || StandardNormal.sample(&mut rng)))
    }

    #[test]
    fn zero_features_give_zero_latents() {
        let shape = NetShape::new(5, 8).with_hidden(6, 4);
        let p = PruneNetParams::init(shape, &mut ChaCha8Rng::seed_from_u64(1));
        let z = gcn_forward(&NodeFeatures::new(Array2::zeros((6, 8))), &p).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shapes() {
        let shape = NetShape::new(15, 384);
        let p = PruneNetParams::init(shape, &mut ChaCha8Rng::seed_from_u64(1));
        let out = forward(&random_features(16, 384, 2), &p).unwrap();
        assert_eq!(out.z.dim(), (15, 64));
        assert_eq!(out.w_pred.n(), 15);
        assert_eq!(out.y_hat.len(), 15);
        let err = forward(&random_features(15, 384, 2), &p).unwrap_err();
        assert!(matches!(err, PruneError::Dimension { .. }));
        let err = forward(&random_features(16, 100, 2), &p).unwrap_err();
        assert!(matches!(err, PruneError::Dimension { .. }));
    }

    #[test]
    fn swapping_agent_rows_permutes_latents() {
        let shape = NetShape::new(5, 8).with_hidden(6, 4);
        let p = PruneNetParams::init(shape, &mut ChaCha8Rng::seed_from_u64(3));
        let x = random_features(6, 8, 4);
        let mut swapped = x.x().clone();
        for c in 0..8 {
            swapped.swap([1, c], [3, c]);
        }
        let z = gcn_forward(&x, &p).unwrap();
        let zs = gcn_forward(&NodeFeatures::new(swapped), &p).unwrap();
        for c in 0..6 {
            assert!((z[[1, c]] - zs[[3, c]]).abs() < 1e-9);
            assert!((z[[3, c]] - zs[[1, c]]).abs() < 1e-9);
            assert!((z[[0, c]] - zs[[0, c]]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_bilinear_form_gives_half() {
        let shape = NetShape::new(4, 8).with_hidden(6, 4);
        let mut p = PruneNetParams::init(shape, &mut ChaCha8Rng::seed_from_u64(5));
        p.b_edge.fill(0.0);
        let z = gcn_forward(&random_features(5, 8, 6), &p).unwrap();
        let w = edge_head(&z, &p);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(w.get(i, j), if i == j { 0.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn asymmetric_form_gives_directed_weights() {
        let shape = NetShape::new(4, 8).with_hidden(6, 4);
        let p = PruneNetParams::init(shape, &mut ChaCha8Rng::seed_from_u64(7));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = Array2::from_shape_simple_fn((4, 6), || StandardNormal.sample(&mut rng));
        let w = edge_head(&z, &p);
        let asym = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .any(|(i, j)| i != j && (w.get(i, j) - w.get(j, i)).abs() > 1e-12);
        assert!(asym);
    }

    #[test]
    fn node_head_cases() {
        let shape = NetShape::new(3, 8).with_hidden(6, 4);
        let mut p = PruneNetParams::init(shape, &mut ChaCha8Rng::seed_from_u64(9));
        let z = Array2::zeros((3, 6));
        let (s, y) = node_head(&z, &p);
        assert!(s.iter().all(|&v| v == 0.0));
        assert!(y.iter().all(|&v| v == 0.5));
        p = PruneNetParams::zeros(shape);
        p.mlp_b2[0] = 10.0;
        let (_, y) = node_head(&Array2::from_elem((3, 6), 0.3), &p);
        for v in y {
            assert!((v - 0.999_954_602_131_297_6).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0);
    }
}
