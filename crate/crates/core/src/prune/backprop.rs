//! Loss and hand-derived reverse pass over the fixed network graph.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::forward::{edge_logits, gcn_trace, node_trace, sigmoid};
use super::gumbel::logistic_noise;
use super::loss::{bce_logit, coherence_raw, edge_loss_raw, focal_logit};
use super::params::PruneNetParams;
use super::train::TrainConfig;
use super::PruneError;
use crate::embed::NodeFeatures;
use crate::graph::{NodeMask, WeightMatrix};

/// Logistic noise added to edge and node logits before the temperature.
/// `None` selects the deterministic path for that head.
#[derive(Debug, Clone, Default)]
pub struct SampleNoise {
    pub edge: Option<Array2<f64>>,
    pub node: Option<Vec<f64>>,
}

impl SampleNoise {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn draw<R: Rng + ?Sized>(n: usize, rng: &mut R, edges: bool, nodes: bool) -> Self {
        let edge = edges.then(|| Array2::from_shape_simple_fn((n, n), || logistic_noise(rng)));
        let node = nodes.then(|| (0..n).map(|_| logistic_noise(rng)).collect());
        Self { edge, node }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub edge: f64,
    pub node: f64,
    pub total: f64,
}

/// Total loss of one supervision pair under relaxed samples at temperature
/// `tau`, and its gradient with respect to every parameter.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grad(
    p: &PruneNetParams,
    x: &NodeFeatures,
    a_gt: &WeightMatrix,
    y: &NodeMask,
    cfg: &TrainConfig,
    tau: f64,
    noise: &SampleNoise,
    use_focal: bool,
) -> Result<(LossParts, PruneNetParams), PruneError> {
    let n = p.shape.n_max;
    for (what, got) in [("target matrix size", a_gt.n()), ("mask length", y.n())] {
        if got != n {
            return Err(PruneError::Dimension { what, expected: n, actual: got });
        }
    }
    let yf = y.to_f64();
    let nf = n as f64;
    let g = gcn_trace(x, p)?;
    let z = &g.z;

    // edge head
    let mut e = edge_logits(z, p);
    if let Some(ne) = &noise.edge {
        e += ne;
    }
    let mut w = e.mapv(|v| sigmoid(v / tau));
    w.diag_mut().fill(0.0);

    // node head
    let nt = node_trace(z, p);
    let u: Vec<f64> = nt
        .s
        .iter()
        .enumerate()
        .map(|(i, &s)| (s + noise.node.as_ref().map_or(0.0, |v| v[i])) / tau)
        .collect();
    let y_hat: Vec<f64> = u.iter().map(|&v| sigmoid(v)).collect();

    let edge = edge_loss_raw(w.view(), a_gt.as_array().view(), &yf, cfg.lambda_off);
    let mut fit = 0.0;
    let mut d_u = vec![0.0; n];
    for i in 0..n {
        let (l, d) = if use_focal { focal_logit(u[i], yf[i], cfg.focal_gamma) } else { bce_logit(u[i], yf[i]) };
        fit += l / nf;
        d_u[i] = d / nf;
    }
    let sparsity = cfg.lambda_s * y_hat.iter().sum::<f64>() / nf;
    let coherence = coherence_raw(w.view(), &yf, cfg.coherence_lambda_c);
    let node = fit + sparsity + coherence;
    let total = edge + cfg.beta * node;

    // dL/dW
    let (mut on_count, mut off_count) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                on_count += yf[i] * yf[j];
                off_count += 1.0 - yf[i] * yf[j];
            }
        }
    }
    let coh = cfg.beta * cfg.coherence_lambda_c / (nf * nf);
    let a = a_gt.as_array();
    let mut d_e = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let m = yf[i] * yf[j];
            let mut dw = 0.0;
            if on_count > 0.0 {
                dw += 2.0 * m * (w[[i, j]] - a[[i, j]]) / on_count;
            }
            if off_count > 0.0 {
                dw += cfg.lambda_off * 2.0 * (1.0 - m) * w[[i, j]] / off_count;
            }
            if yf[i] == 0.0 {
                dw += coh;
            }
            d_e[[i, j]] = dw * w[[i, j]] * (1.0 - w[[i, j]]) / tau;
        }
    }
    let mut grad = PruneNetParams::zeros(p.shape);
    grad.b_edge = z.t().dot(&d_e).dot(z);
    let mut d_z = d_e.dot(z).dot(&p.b_edge.t()) + d_e.t().dot(z).dot(&p.b_edge);

    // dL/ds
    let d_s: Array1<f64> = (0..n)
        .map(|i| cfg.beta * (d_u[i] + cfg.lambda_s / nf * y_hat[i] * (1.0 - y_hat[i])) / tau)
        .collect();
    grad.mlp_w2 = nt.r.t().dot(&d_s);
    grad.mlp_b2[0] = d_s.sum();
    let mut d_q = Array2::zeros(nt.q.raw_dim());
    for ((i, k), v) in d_q.indexed_iter_mut() {
        if nt.q[[i, k]] > 0.0 {
            *v = d_s[i] * p.mlp_w2[k];
        }
    }
    grad.mlp_w1 = z.t().dot(&d_q);
    grad.mlp_b1 = d_q.sum_axis(Axis(0));
    d_z += &d_q.dot(&p.mlp_w1.t());

    // GCN layer 2; the query row of Z receives no gradient
    let h = p.shape.h;
    let mut d_zf = Array2::zeros((n + 1, h));
    d_zf.slice_mut(ndarray::s![..n, ..]).assign(&d_z);
    let col2 = d_zf.sum_axis(Axis(0));
    grad.w_root2 = g.h1.t().dot(&d_zf);
    grad.w_gcn2 = outer(&g.h1_sum, &col2);
    let spread2 = p.w_gcn2.dot(&col2);
    let mut d_h1 = d_zf.dot(&p.w_root2.t()) + &spread2;

    // GCN layer 1
    d_h1.zip_mut_with(&g.pre1, |d, &pre| {
        if pre <= 0.0 {
            *d = 0.0;
        }
    });
    let col1 = d_h1.sum_axis(Axis(0));
    grad.w_root1 = x.x().t().dot(&d_h1);
    grad.w_gcn1 = outer(&g.x_sum, &col1);

    Ok((LossParts { edge, node, total }, grad))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prune::forward::forward;
    use crate::prune::loss::{edge_loss, node_loss, total_loss, NodeLossConfig};
    use crate::prune::params::{NetShape, TENSOR_NAMES};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    struct Instance {
        p: PruneNetParams,
        x: NodeFeatures,
        a: WeightMatrix,
        y: NodeMask,
        tau: f64,
        noise: SampleNoise,
        focal: bool,
    }

    fn instance(seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = NetShape::new(5, 8).with_hidden(6, 4);
        let mut p = PruneNetParams::init(shape, &mut rng);
        for t in [&mut p.mlp_b1, &mut p.mlp_b2] {
            t.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = NodeFeatures::new(Array2::from_shape_simple_fn((6, 8), || StandardNormal.sample(&mut rng)));
        let mut y = NodeMask::from_bits((0..5).map(|_| rng.random_bool(0.5)).collect());
        if y.active_count() < 2 {
            y = NodeMask::from_bits(vec![true, true, false, true, false]);
        }
        let mut a = Array2::zeros((5, 5));
        for i in y.active() {
            for j in y.active() {
                if i != j {
                    a[[i, j]] = rng.random_range(0.0..=1.0);
                }
            }
        }
        let tau = rng.random_range(0.5..=1.0);
        let noise = SampleNoise::draw(5, &mut rng, true, true);
        Instance { p, x, a: WeightMatrix::new(a).unwrap(), y, tau, noise, focal: rng.random_bool(0.5) }
    }

    fn loss_at(inst: &Instance, p: &PruneNetParams, cfg: &TrainConfig) -> f64 {
        loss_and_grad(p, &inst.x, &inst.a, &inst.y, cfg, inst.tau, &inst.noise, inst.focal).unwrap().0.total
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let cfg = TrainConfig::default();
        let step = 1e-5;
        for seed in 0..5 {
            let inst = instance(seed);
            let (_, grad) =
                loss_and_grad(&inst.p, &inst.x, &inst.a, &inst.y, &cfg, inst.tau, &inst.noise, inst.focal)
                    .unwrap();
            for (t, name) in TENSOR_NAMES.iter().enumerate() {
                for k in 0..grad.tensors()[t].len() {
                    let mut plus = inst.p.clone();
                    plus.tensors_mut()[t][k] += step;
                    let mut minus = inst.p.clone();
                    minus.tensors_mut()[t][k] -= step;
                    let fd = (loss_at(&inst, &plus, &cfg) - loss_at(&inst, &minus, &cfg)) / (2.0 * step);
                    let an = grad.tensors()[t][k];
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                    assert!(rel < 1e-4, "seed {seed} {name}[{k}]: analytic {an} numeric {fd}");
                }
            }
        }
    }

    #[test]
    fn deterministic_unit_temperature_matches_public_losses() {
        let cfg = TrainConfig::default();
        let inst = instance(11);
        let (parts, _) =
            loss_and_grad(&inst.p, &inst.x, &inst.a, &inst.y, &cfg, 1.0, &SampleNoise::none(), false).unwrap();
        let out = forward(&inst.x, &inst.p).unwrap();
        let e = edge_loss(&out.w_pred, &inst.a, &inst.y, cfg.lambda_off).unwrap();
        let node_cfg = NodeLossConfig {
            lambda_s: cfg.lambda_s,
            lambda_c: cfg.coherence_lambda_c,
            focal_gamma: cfg.focal_gamma,
        };
        let nl = node_loss(&out.y_hat, &inst.y, &out.w_pred, &node_cfg, false).unwrap();
        assert!((parts.edge - e).abs() < 1e-12);
        assert!((parts.node - nl).abs() < 1e-9);
        assert!((parts.total - total_loss(e, nl, cfg.beta)).abs() < 1e-9);
    }

    #[test]
    fn rejects_mismatched_targets() {
        let inst = instance(2);
        let cfg = TrainConfig::default();
        let err = loss_and_grad(
            &inst.p,
            &inst.x,
            &WeightMatrix::zeros(4),
            &inst.y,
            &cfg,
            1.0,
            &SampleNoise::none(),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, PruneError::Dimension { .. }));
    }
}
