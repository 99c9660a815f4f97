//! Gumbel-Sigmoid relaxation of Bernoulli gates.

use rand::Rng;

use super::forward::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GumbelMode {
    /// `sigmoid((logit + g1 - g2) / tau)` with `g1, g2` i.i.d. standard Gumbel.
    Stochastic,
    /// `sigmoid(logit / tau)`.
    Deterministic,
}

fn standard_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // random::<f64>() is in [0, 1); flip to (0, 1] so ln never sees 0
    let u = 1.0 - rng.random::<f64>();
    -(-u.ln()).ln()
}

/// Difference of two standard Gumbel draws (a standard logistic variate).
pub fn logistic_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    standard_gumbel(rng) - standard_gumbel(rng)
}

pub(crate) fn relaxed(logit: f64, noise: f64, tau: f64) -> f64 {
    sigmoid((logit + noise) / tau)
}

/// Samples one gate per logit. With `hard`, the relaxed value is rounded to
/// `{0, 1}` (`>= 0.5` maps to 1); its gradient is still taken from the relaxed
/// value, see [`gumbel_sigmoid_grad`].
pub fn gumbel_sigmoid<R: Rng + ?Sized>(
    logits: &[f64],
    tau: f64,
    rng: &mut R,
    mode: GumbelMode,
    hard: bool,
) -> Vec<f64> {
    assert!(tau > 0.0, "temperature must be positive");
    logits
        .iter()
        .map(|&l| {
            let noise = match mode {
                GumbelMode::Stochastic => logistic_noise(rng),
                GumbelMode::Deterministic => 0.0,
            };
            let soft = relaxed(l, noise, tau);
            if hard {
                if soft >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            } else {
                soft
            }
        })
        .collect()
}

/// `d sample / d logit` for a given noise draw. The hard variant uses the same
/// value (straight-through).
pub fn gumbel_sigmoid_grad(logit: f64, noise: f64, tau: f64) -> f64 {
    let y = relaxed(logit, noise, tau);
    y * (1.0 - y) / tau
}
