use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamW;
use super::backprop::{loss_and_grad, LossParts, SampleNoise};
use super::params::{NetShape, PruneNetParams};
use super::PruneError;
use crate::embed::{build_node_features, EmbeddingBackend, Memoized, NodeFeatures};
use crate::graph::SupervisionPair;
use crate::pool::AgentPool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lambda_off: f64,
    pub lambda_s: f64,
    /// Weight of the coherence term in the node loss.
    #[serde(alias = "lambda_c")]
    pub coherence_lambda_c: f64,
    pub beta: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub focal_gamma: f64,
    /// Focal loss replaces BCE when a batch's active-node fraction is below this.
    pub focal_threshold: f64,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub gumbel_edges: bool,
    pub gumbel_nodes: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.95,
            weight_decay: 1e-5,
            epochs: 20,
            batch: 10,
            lambda_off: 0.5,
            lambda_s: 0.1,
            coherence_lambda_c: 0.05,
            beta: 1.0,
            tau_start: 1.0,
            tau_end: 0.1,
            focal_gamma: 2.0,
            focal_threshold: 0.20,
            hidden: NetShape::DEFAULT_HIDDEN,
            mlp_hidden: NetShape::DEFAULT_MLP_HIDDEN,
            gumbel_edges: true,
            gumbel_nodes: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PruneError> {
        let bad = |m: &str| Err(PruneError::Config(m.to_string()));
        let nonneg = [
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
            ("lambda_off", self.lambda_off),
            ("lambda_s", self.lambda_s),
            ("coherence_lambda_c", self.coherence_lambda_c),
            ("beta", self.beta),
            ("focal_gamma", self.focal_gamma),
            ("focal_threshold", self.focal_threshold),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if self.epochs == 0 || self.batch == 0 || self.hidden == 0 || self.mlp_hidden == 0 {
            return bad("epochs, batch and hidden sizes must be positive");
        }
        if !(self.tau_end > 0.0 && self.tau_start >= self.tau_end && self.tau_start.is_finite()) {
            return bad(&format!(
                "need tau_start >= tau_end > 0, got {} -> {}",
                self.tau_start, self.tau_end
            ));
        }
        Ok(())
    }

    /// Linear schedule over global steps, ending exactly at `tau_end`.
    pub fn tau_at(&self, step: usize, total_steps: usize) -> f64 {
        if total_steps <= 1 {
            return self.tau_start;
        }
        let frac = step as f64 / (total_steps - 1) as f64;
        self.tau_start + (self.tau_end - self.tau_start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub edge_loss: f64,
    pub node_loss: f64,
    pub total: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub steps_per_epoch: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,edge_loss,node_loss,total,tau\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{}\n", r.step, r.edge_loss, r.node_loss, r.total, r.tau));
        }
        out
    }

    /// Loss of the first minibatch, measured before any update.
    pub fn initial_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.total)
    }

    /// Mean minibatch loss over the last epoch.
    pub fn final_loss(&self) -> Option<f64> {
        let k = self.steps_per_epoch.max(1).min(self.records.len());
        if k == 0 {
            return None;
        }
        let tail = &self.records[self.records.len() - k..];
        Some(tail.iter().map(|r| r.total).sum::<f64>() / k as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PruneNetParams,
    pub log: TrainLog,
}

struct Example<'a> {
    x: NodeFeatures,
    pair: &'a SupervisionPair,
}

pub fn train<B: EmbeddingBackend + ?Sized>(
    corpus: &[SupervisionPair],
    pool: &AgentPool,
    backend: &B,
    cfg: &TrainConfig,
) -> Result<TrainOutput, PruneError> {
    cfg.validate()?;
    let shape = NetShape::new(pool.n_max(), backend.dim()).with_hidden(cfg.hidden, cfg.mlp_hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = PruneNetParams::init(shape, &mut rng);
    train_with_init(init, corpus, pool, backend, cfg)
}

/// Trains starting from `params`. Shuffling and noise use stream 1 of the seed,
/// so they do not depend on how `params` was produced.
pub fn train_with_init<B: EmbeddingBackend + ?Sized>(
    mut params: PruneNetParams,
    corpus: &[SupervisionPair],
    pool: &AgentPool,
    backend: &B,
    cfg: &TrainConfig,
) -> Result<TrainOutput, PruneError> {
    cfg.validate()?;
    params.validate()?;
    if corpus.is_empty() {
        return Err(PruneError::EmptyCorpus);
    }
    let n = params.shape.n_max;
    if pool.n_max() != n {
        return Err(PruneError::Dimension { what: "pool size", expected: n, actual: pool.n_max() });
    }
    if backend.dim() != params.shape.d {
        return Err(PruneError::Dimension {
            what: "embedding width",
            expected: params.shape.d,
            actual: backend.dim(),
        });
    }
    for pair in corpus {
        if pair.n_max() != n {
            return Err(PruneError::Dimension { what: "pair frame size", expected: n, actual: pair.n_max() });
        }
    }

    let memo = Memoized::new(backend);
    let examples = corpus
        .iter()
        .map(|pair| Ok(Example { x: build_node_features(pool, &pair.task_text, &memo)?, pair }))
        .collect::<Result<Vec<_>, PruneError>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let steps_per_epoch = examples.len().div_ceil(cfg.batch);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(&params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.weight_decay);
    let mut log = TrainLog { records: Vec::with_capacity(total_steps), steps_per_epoch };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let tau = cfg.tau_at(step, total_steps);
            let active: usize = chunk.iter().map(|&i| examples[i].pair.y.active_count()).sum();
            let use_focal = (active as f64) < cfg.focal_threshold * (chunk.len() * n) as f64;
            let mut grad = PruneNetParams::zeros(params.shape);
            let mut parts = LossParts::default();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let ex = &examples[i];
                let noise = SampleNoise::draw(n, &mut rng, cfg.gumbel_edges, cfg.gumbel_nodes);
                let (p, g) =
                    loss_and_grad(&params, &ex.x, &ex.pair.a_gt, &ex.pair.y, cfg, tau, &noise, use_focal)?;
                parts.edge += scale * p.edge;
                parts.node += scale * p.node;
                parts.total += scale * p.total;
                grad.add_scaled(&g, scale);
            }
            if !parts.total.is_finite() {
                return Err(PruneError::TrainingDiverged { step });
            }
            log.records.push(LogRecord {
                step,
                edge_loss: parts.edge,
                node_loss: parts.node,
                total: parts.total,
                tau,
            });
            opt.step(&mut params, &grad);
            step += 1;
        }
        log::debug!(
            "epoch {} done, last loss {:.5}",
            epoch + 1,
            log.records.last().map_or(f64::NAN, |r| r.total)
        );
    }
    if params.validate().is_err() {
        return Err(PruneError::TrainingDiverged { step });
    }
    Ok(TrainOutput { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::graph::{lift_subgraph, Topology};
    use crate::prune::design::design_topology;
    use crate::task::TaskCategory;

    fn pair(task: &str, members: &[usize], n_max: usize) -> SupervisionPair {
        let (a_gt, y) = lift_subgraph(&Topology::complete(members.len()), members, n_max).unwrap();
        SupervisionPair {
            task_id: task.into(),
            task_text: task.into(),
            category: TaskCategory::MathReasoning,
            score: 1.0,
            y,
            a_gt,
        }
    }

    #[test]
    fn tau_schedule_is_linear_and_monotone() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.tau_at(0, 10), 1.0);
        assert!((cfg.tau_at(9, 10) - 0.1).abs() < 1e-15);
        let taus: Vec<f64> = (0..10).map(|s| cfg.tau_at(s, 10)).collect();
        assert!(taus.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(cfg.tau_at(0, 1), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { tau_end: 2.0, ..Default::default() },
            TrainConfig { tau_end: 0.0, ..Default::default() },
            TrainConfig { batch: 0, ..Default::default() },
            TrainConfig { lr: -1.0, ..Default::default() },
            TrainConfig { adam_beta2: 1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(PruneError::Config(_))), "{cfg:?}");
        }
        let lr0 = TrainConfig { lr: 0.0, ..Default::default() };
        assert!(lr0.validate().is_ok());
    }

    #[test]
    fn lambda_c_alias() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"lambda_c": 0.2, "beta": 0.75}"#).unwrap();
        assert_eq!(cfg.coherence_lambda_c, 0.2);
        assert_eq!(cfg.beta, 0.75);
        assert_eq!(cfg.lr, 1e-3);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let pool = AgentPool::default_roster();
        let err = train(&[], &pool, &HashEmbedder::default(), &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, PruneError::EmptyCorpus));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let pool = AgentPool::default_roster();
        let backend = HashEmbedder::default();
        let cfg = TrainConfig { lr: 0.0, epochs: 2, ..Default::default() };
        let shape = NetShape::new(15, 384).with_hidden(cfg.hidden, cfg.mlp_hidden);
        let init = PruneNetParams::init(shape, &mut ChaCha8Rng::seed_from_u64(4));
        let corpus = vec![pair("what is 3 + 4", &[11, 12, 14], 15)];
        let out = train_with_init(init.clone(), &corpus, &pool, &backend, &cfg).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.log.records.len(), 2);
    }

    #[test]
    fn single_pair_is_memorized() {
        let pool = AgentPool::default_roster();
        let backend = HashEmbedder::default();
        let members = [2, 6, 9];
        let corpus = vec![pair("Estimate the inflation effect of a tariff", &members, 15)];
        let cfg = TrainConfig { epochs: 200, seed: 3, ..Default::default() };
        let out = train(&corpus, &pool, &backend, &cfg).unwrap();
        assert_eq!(out.log.records.len(), 200);
        let t = design_topology(&corpus[0].task_text, &pool, &backend, &out.params, 0.5).unwrap();
        assert_eq!(t.mask().members(), members.to_vec());
        assert!(out.log.final_loss().unwrap() < out.log.initial_loss().unwrap());
    }

    #[test]
    fn csv_log_layout() {
        let log = TrainLog {
            records: vec![LogRecord { step: 0, edge_loss: 0.5, node_loss: 0.25, total: 0.75, tau: 1.0 }],
            steps_per_epoch: 1,
        };
        assert_eq!(log.to_csv(), "step,edge_loss,node_loss,total,tau\n0,0.5,0.25,0.75,1\n");
        assert_eq!(log.final_loss(), Some(0.75));
    }
}
