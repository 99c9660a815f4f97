//! Adaptive graph pruning for multi-agent LLM communication.
//!
//! The pipeline mines high-utility agent teams from a fixed pool, trains a
//! dual-pruning graph network on those labels, and executes the topologies it
//! designs with a multi-round orchestrator under token accounting.

pub mod baselines;
pub mod collector;
pub mod embed;
pub mod graph;
pub mod orchestrator;
pub mod pool;
pub mod prune;
pub mod synthetic;
pub mod task;

pub use embed::{
    build_node_features, embed_text, EmbedError, EmbeddingBackend, EmbeddingVector, HashEmbedder,
    HttpEmbedder, Memoized, NodeFeatures,
};
pub use graph::{
    binarize, induce, lift_subgraph, parse_topology, serialize_topology, CommTopology, GraphError,
    NodeMask, SupervisionPair, Topology, TopologyFormat, WeightMatrix,
};
pub use pool::{load_pool, render_system_prompt, render_user_prompt, AgentPool, AgentProfile};
pub use task::{AnswerCheck, TaskCategory, TaskSpec};
pub use collector::{
    collect, mine_supervision, read_corpus, sample_orders, sample_subset, score_graph,
    write_corpus, CollectError, CollectOutput, CollectorConfig, Evaluator, PoolMode, SampledGraph,
    ScoredTask,
};
pub use prune::{
    design_topology, edge_loss, forward, gumbel_sigmoid, load_checkpoint, node_loss,
    save_checkpoint, total_loss, train, ForwardOutput, GumbelMode, NetShape, NodeLossConfig,
    PruneError, PruneNetParams, TrainConfig, TrainLog, TrainOutput,
};
pub use orchestrator::{
    count_tokens, decision_aggregate, run_topology, visible_history, AgentBackend, BackendSet,
    DialogueEntry, OrchestratorError, RunConfig, RunResult,
};
pub use baselines::{
    fit_node_count_gaussian, make_static, run_bench, BenchConfig, BenchError, BenchReport,
    GaussianFit, StaticShape, TopologySource,
};
pub use synthetic::{PlantedBackend, PlantedEvaluator, PlantedTeams};
