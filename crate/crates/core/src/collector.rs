//! Stage I: sample complete subgraphs of the pool, score them per task, keep
//! the best `top_k` per task and lift them into supervision pairs.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{lift_subgraph, GraphError, SupervisionPair, Topology};
use crate::task::{TaskCategory, TaskSpec};

#[derive(Debug, thiserror::Error)]
pub enum CollectError {
    #[error("invalid collector config: {0}")]
    Config(String),
    #[error("order {order} outside [2, {n_max}]")]
    InvalidOrder { order: usize, n_max: usize },
    #[error("score unavailable: {0}")]
    ScoreUnavailable(String),
    #[error("task {task_id}: only {found} distinct scored graph(s), need {needed}")]
    MineUnderflow { task_id: String, found: usize, needed: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("malformed corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
}

/// Whether every task draws its own sample pool or all tasks share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    #[default]
    PerTask,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectorConfig {
    /// Pool budget `B`: number of sampled graphs per pool.
    pub budget: usize,
    pub sigma: f64,
    /// Mean graph order; `n_max / 2` when unset.
    pub mu: Option<f64>,
    pub top_k: usize,
    pub seed: u64,
    pub pool_mode: PoolMode,
    pub parallelism: usize,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        Self {
            budget: 2000,
            sigma: 2.0,
            mu: None,
            top_k: 2,
            seed: 0,
            pool_mode: PoolMode::PerTask,
            parallelism: 1,
        }
    }
}

impl CollectorConfig {
    pub fn mean(&self, n_max: usize) -> f64 {
        self.mu.unwrap_or(n_max as f64 / 2.0)
    }

    pub fn validate(&self, n_max: usize) -> Result<(), CollectError> {
        let mu = self.mean(n_max);
        if self.budget == 0 {
            return Err(CollectError::Config("budget must be >= 1".into()));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(CollectError::Config(format!("sigma {} must be > 0", self.sigma)));
        }
        if !(2.0..=n_max as f64).contains(&mu) {
            return Err(CollectError::Config(format!("mu {mu} outside [2, {n_max}]")));
        }
        if self.top_k == 0 {
            return Err(CollectError::Config("top_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// A complete subgraph `K_i` over ascending agent ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampledGraph {
    members: Vec<usize>,
}

impl SampledGraph {
    pub fn new(mut members: Vec<usize>) -> Result<Self, CollectError> {
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(CollectError::Graph(GraphError::InvalidMembers(format!(
                "duplicate ids in {members:?}"
            ))));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn order(&self) -> usize {
        self.members.len()
    }

    pub fn topology(&self) -> Topology {
        Topology::complete(self.members.len())
    }

    pub fn contains(&self, id: usize) -> bool {
        self.members.binary_search(&id).is_ok()
    }
}

fn order_distribution(cfg: &CollectorConfig, n_max: usize) -> Normal<f64> {
    Normal::new(cfg.mean(n_max), cfg.sigma).expect("sigma validated")
}

/// Draws one order: Gaussian resampled until inside `[2, n_max]`, then
/// rounded half-up.
fn draw_order<R: Rng + ?Sized>(normal: &Normal<f64>, n_max: usize, rng: &mut R) -> usize {
    loop {
        let x = normal.sample(rng);
        if (2.0..=n_max as f64).contains(&x) {
            return (x + 0.5).floor() as usize;
        }
    }
}

pub fn sample_orders_with<R: Rng + ?Sized>(
    cfg: &CollectorConfig,
    n_max: usize,
    rng: &mut R,
) -> Result<Vec<usize>, CollectError> {
    cfg.validate(n_max)?;
    let normal = order_distribution(cfg, n_max);
    Ok((0..cfg.budget).map(|_| draw_order(&normal, n_max, rng)).collect())
}

/// `B` graph orders from the truncated Gaussian, seeded by `cfg.seed`.
pub fn sample_orders(cfg: &CollectorConfig, n_max: usize) -> Result<Vec<usize>, CollectError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_orders_with(cfg, n_max, &mut rng)
}

/// Uniform size-`order` subset without replacement, sorted ascending.
pub fn sample_subset<R: Rng + ?Sized>(
    order: usize,
    n_max: usize,
    rng: &mut R,
) -> Result<SampledGraph, CollectError> {
    if order < 2 || order > n_max {
        return Err(CollectError::InvalidOrder { order, n_max });
    }
    let mut members = index::sample(rng, n_max, order).into_vec();
    members.sort_unstable();
    Ok(SampledGraph { members })
}

/// Scores one graph on one task. Implementations return per-instance scores
/// in `[0, 1]`; the utility is their mean.
pub trait Evaluator: Sync {
    fn evaluate(&self, graph: &SampledGraph, task: &TaskSpec) -> Result<Vec<f64>, CollectError>;
}

pub fn score_graph<E: Evaluator + ?Sized>(
    graph: &SampledGraph,
    task: &TaskSpec,
    evaluator: &E,
) -> Result<f64, CollectError> {
    let outcomes = evaluator.evaluate(graph, task)?;
    if outcomes.is_empty() {
        return Err(CollectError::ScoreUnavailable("evaluator returned no instances".into()));
    }
    if let Some(bad) = outcomes.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CollectError::ScoreUnavailable(format!("instance score {bad} outside [0, 1]")));
    }
    Ok(outcomes.iter().sum::<f64>() / outcomes.len() as f64)
}

/// Scored pool for one task.
#[derive(Debug, Clone)]
pub struct ScoredTask {
    pub task: TaskSpec,
    pub graphs: Vec<(SampledGraph, f64)>,
}

/// Ranking used for mining: higher utility, then fewer members, then
/// lexicographic member list.
fn rank(a: &(SampledGraph, f64), b: &(SampledGraph, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1)
        .then(a.0.order().cmp(&b.0.order()))
        .then_with(|| a.0.members.cmp(&b.0.members))
}

/// Keeps the `top_k` distinct member sets per task and lifts them to `n_max`.
pub fn mine_supervision(
    scored: &[ScoredTask],
    top_k: usize,
    n_max: usize,
) -> Result<Vec<SupervisionPair>, CollectError> {
    let mut pairs = Vec::with_capacity(scored.len() * top_k);
    for st in scored {
        let mut ranked = st.graphs.clone();
        ranked.sort_by(rank);
        ranked.dedup_by(|a, b| a.0 == b.0);
        if ranked.len() < top_k {
            return Err(CollectError::MineUnderflow {
                task_id: st.task.task_id.clone(),
                found: ranked.len(),
                needed: top_k,
            });
        }
        for (graph, score) in ranked.into_iter().take(top_k) {
            let (a_gt, y) = lift_subgraph(&graph.topology(), graph.members(), n_max)?;
            let pair = SupervisionPair {
                task_id: st.task.task_id.clone(),
                task_text: st.task.task_text.clone(),
                category: st.task.category,
                score,
                y,
                a_gt,
            };
            pair.validate()?;
            pairs.push(pair);
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CollectStats {
    pub tasks: usize,
    pub graphs_sampled: usize,
    pub graphs_scored: usize,
    pub graphs_skipped: usize,
    pub pairs: usize,
    pub categories: BTreeMap<TaskCategory, usize>,
}

#[derive(Debug, Clone)]
pub struct CollectOutput {
    pub pairs: Vec<SupervisionPair>,
    pub stats: CollectStats,
}

fn sample_pool(
    cfg: &CollectorConfig,
    n_max: usize,
    stream: u64,
) -> Result<Vec<SampledGraph>, CollectError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let orders = sample_orders_with(cfg, n_max, &mut rng)?;
    orders.into_iter().map(|o| sample_subset(o, n_max, &mut rng)).collect()
}

struct TaskScores {
    scored: ScoredTask,
    evaluated: usize,
    skipped: usize,
}

fn score_task<E: Evaluator + ?Sized>(
    task: &TaskSpec,
    pool: &[SampledGraph],
    evaluator: &E,
) -> TaskScores {
    let mut cache: HashMap<&SampledGraph, Option<f64>> = HashMap::new();
    let mut graphs = Vec::with_capacity(pool.len());
    let (mut evaluated, mut skipped) = (0, 0);
    for g in pool {
        let score = *cache.entry(g).or_insert_with(|| {
            evaluated += 1;
            match score_graph(g, task, evaluator) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("task {}: skipping graph {:?}: {e}", task.task_id, g.members());
                    None
                }
            }
        });
        match score {
            Some(s) => graphs.push((g.clone(), s)),
            None => skipped += 1,
        }
    }
    TaskScores { scored: ScoredTask { task: task.clone(), graphs }, evaluated, skipped }
}

/// Runs the whole Stage I pipeline over `tasks`.
pub fn collect<E: Evaluator + ?Sized>(
    tasks: &[TaskSpec],
    n_max: usize,
    evaluator: &E,
    cfg: &CollectorConfig,
) -> Result<CollectOutput, CollectError> {
    cfg.validate(n_max)?;
    let shared = match cfg.pool_mode {
        PoolMode::Shared => Some(sample_pool(cfg, n_max, 0)?),
        PoolMode::PerTask => None,
    };
    let work = |(i, task): (usize, &TaskSpec)| -> Result<TaskScores, CollectError> {
        let own;
        let pool = match &shared {
            Some(p) => p.as_slice(),
            None => {
                own = sample_pool(cfg, n_max, i as u64)?;
                own.as_slice()
            }
        };
        Ok(score_task(task, pool, evaluator))
    };
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build()
        .map_err(|e| CollectError::Config(e.to_string()))?;
    let results: Vec<TaskScores> = threads.install(|| {
        tasks.par_iter().enumerate().map(work).collect::<Result<Vec<_>, _>>()
    })?;

    let mut stats = CollectStats { tasks: tasks.len(), ..Default::default() };
    let mut scored = Vec::with_capacity(results.len());
    for r in results {
        stats.graphs_sampled += cfg.budget;
        stats.graphs_scored += r.evaluated;
        stats.graphs_skipped += r.skipped;
        scored.push(r.scored);
    }
    let pairs = mine_supervision(&scored, cfg.top_k, n_max)?;
    stats.pairs = pairs.len();
    for p in &pairs {
        *stats.categories.entry(p.category).or_default() += 1;
    }
    Ok(CollectOutput { pairs, stats })
}

/// One pair per line.
pub fn write_corpus(pairs: &[SupervisionPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pair serializes"));
        out.push('\n');
    }
    out
}

pub fn read_corpus(text: &str) -> Result<Vec<SupervisionPair>, CollectError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CollectError::Corpus { line: i + 1, message: e.to_string() })
        })
        .collect()
}
