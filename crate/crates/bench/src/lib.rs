//! Fixtures shared by the benchmarks: the default roster, a planted corpus and
//! a briefly trained network.

use std::sync::Arc;

use agp_core::collector::{collect, CollectorConfig};
use agp_core::orchestrator::{BackendSet, MajorityDecision};
use agp_core::prune::{train, TrainConfig};
use agp_core::synthetic::{generate_tasks, PlantedEvaluator};
use agp_core::{
    build_node_features, AgentPool, HashEmbedder, NodeFeatures, PlantedBackend, PruneNetParams, SupervisionPair,
    TaskSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub pool: AgentPool,
    pub embedder: HashEmbedder,
    pub tasks: Vec<TaskSpec>,
    pub corpus: Vec<SupervisionPair>,
    pub params: PruneNetParams,
}

impl Fixture {
    /// `per_category` planted tasks of each kind, collected with budget 100
    /// and trained for `epochs`.
    pub fn new(per_category: usize, epochs: usize) -> Self {
        let pool = AgentPool::default_roster();
        let embedder = HashEmbedder::default();
        let tasks = generate_tasks([per_category; 3], 1, "bench");
        let corpus = collect(&tasks, pool.n_max(), &PlantedEvaluator::default(), &Self::collector_config())
            .expect("planted collection succeeds")
            .pairs;
        let cfg = TrainConfig { epochs, seed: 1, ..Default::default() };
        let params = train(&corpus, &pool, &embedder, &cfg).expect("training succeeds").params;
        Self { pool, embedder, tasks, corpus, params }
    }

    pub fn collector_config() -> CollectorConfig {
        CollectorConfig { budget: 100, seed: 1, parallelism: 1, ..Default::default() }
    }

    pub fn features(&self, query: &str) -> NodeFeatures {
        build_node_features(&self.pool, query, &self.embedder).expect("hash embeddings fit the roster")
    }

    pub fn backends(&self) -> BackendSet {
        BackendSet::new(Arc::new(PlantedBackend::default()), Arc::new(MajorityDecision))
    }

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }
}
