use super::forward::forward;
use super::params::PruneNetParams;
use super::PruneError;
use crate::embed::{build_node_features, EmbeddingBackend};
use crate::graph::{induce, CommTopology, NodeMask};
use crate::pool::AgentPool;

/// Deterministic inference: keep agents with `y_hat >= theta` (the two highest
/// scores if fewer pass), then mask the predicted edge weights.
pub fn design_topology<B: EmbeddingBackend + ?Sized>(
    query: &str,
    pool: &AgentPool,
    backend: &B,
    params: &PruneNetParams,
    theta: f64,
) -> Result<CommTopology, PruneError> {
    let x = build_node_features(pool, query, backend)?;
    let out = forward(&x, params)?;
    Ok(induce(&out.w_pred, &select_mask(&out.y_hat, theta))?)
}

pub(crate) fn select_mask(y_hat: &[f64], theta: f64) -> NodeMask {
    let mut bits: Vec<bool> = y_hat.iter().map(|&v| v >= theta).collect();
    if bits.iter().filter(|&&b| b).count() < 2 {
        let mut ranked: Vec<usize> = (0..y_hat.len()).collect();
        // stable sort keeps lower ids first among equal scores
        ranked.sort_by(|&a, &b| y_hat[b].total_cmp(&y_hat[a]));
        bits = vec![false; y_hat.len()];
        for &i in ranked.iter().take(2) {
            bits[i] = true;
        }
    }
    NodeMask::from_bits(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::prune::params::NetShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_and_fallback() {
        assert_eq!(select_mask(&[0.9, 0.2, 0.6, 0.5], 0.5).members(), vec![0, 2, 3]);
        assert_eq!(select_mask(&[0.1, 0.4, 0.3, 0.05], 0.5).members(), vec![1, 2]);
        assert_eq!(select_mask(&[0.1, 0.9, 0.3], 0.5).members(), vec![1, 2]);
        assert_eq!(select_mask(&[0.2, 0.2, 0.2], 0.5).members(), vec![0, 1]);
        assert_eq!(select_mask(&[0.0, 0.0, 0.0], 0.0).members(), vec![0, 1, 2]);
    }

    #[test]
    fn zero_theta_keeps_everyone_and_design_is_pure() {
        let pool = AgentPool::default_roster();
        let backend = HashEmbedder::default();
        let p = PruneNetParams::init(NetShape::new(15, 384), &mut ChaCha8Rng::seed_from_u64(0));
        let all = design_topology("any query", &pool, &backend, &p, 0.0).unwrap();
        assert_eq!(all.mask().active_count(), 15);
        let a = design_topology("route planning", &pool, &backend, &p, 0.5).unwrap();
        let b = design_topology("route planning", &pool, &backend, &p, 0.5).unwrap();
        assert_eq!(a, b);
        assert!(a.mask().active_count() >= 2);
        for i in 0..15 {
            assert_eq!(a.weights().get(i, i), 0.0);
            for j in 0..15 {
                if !a.mask().is_active(i) || !a.mask().is_active(j) {
                    assert_eq!(a.weights().get(i, j), 0.0);
                }
            }
        }
    }
}
