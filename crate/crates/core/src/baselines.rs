//! Fixed-shape baseline topologies, the benchmark harness and the node-count
//! Gaussian fit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingBackend;
use crate::graph::{CommTopology, NodeMask, WeightMatrix};
use crate::orchestrator::{run_topology, BackendSet, OrchestratorError, RunConfig};
use crate::pool::AgentPool;
use crate::prune::{design_topology, PruneNetParams};
use crate::task::{TaskCategory, TaskSpec};

pub const DEFAULT_RANDOM_P: f64 = 0.3;
pub const DEFAULT_REPEATS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("benchmark suite is empty")]
    EmptySuite,
    #[error("histogram has a single occupied bin; a Gaussian fit is undefined")]
    FitDegenerate,
    #[error("need at least {needed} topologies, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("topology source failed: {0}")]
    Source(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticShape {
    Chain,
    Star,
    Tree,
    Complete,
    Random,
}

impl StaticShape {
    pub const ALL: [StaticShape; 5] =
        [StaticShape::Chain, StaticShape::Star, StaticShape::Tree, StaticShape::Complete, StaticShape::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            StaticShape::Chain => "chain",
            StaticShape::Star => "star",
            StaticShape::Tree => "tree",
            StaticShape::Complete => "complete",
            StaticShape::Random => "random",
        }
    }
}

impl std::str::FromStr for StaticShape {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        StaticShape::ALL
            .into_iter()
            .find(|shape| shape.as_str() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown shape {s:?}")))
    }
}

/// Builds a baseline over `members` (ascending ids within an `n_max` frame).
/// Included edges get weight 1. `p` is only read for [`StaticShape::Random`];
/// `bidirectional` only for [`StaticShape::Tree`].
pub fn make_static<R: Rng + ?Sized>(
    shape: StaticShape,
    members: &[usize],
    n_max: usize,
    p: f64,
    bidirectional: bool,
    rng: &mut R,
) -> Result<CommTopology, BenchError> {
    let m = members.len();
    if m < 2 {
        return Err(BenchError::Config(format!("{} members; need at least 2", m)));
    }
    if shape == StaticShape::Random && !(0.0..=1.0).contains(&p) {
        return Err(BenchError::Config(format!("edge probability {p} outside [0, 1]")));
    }
    let mask = NodeMask::from_members(n_max, members).map_err(|e| BenchError::Config(e.to_string()))?;
    let mut local: Vec<(usize, usize)> = Vec::new();
    match shape {
        StaticShape::Chain => local.extend((0..m - 1).map(|i| (i, i + 1))),
        StaticShape::Star => {
            for i in 1..m {
                local.push((0, i));
                local.push((i, 0));
            }
        }
        StaticShape::Tree => {
            for child in 1..m {
                let parent = (child - 1) / 2;
                local.push((parent, child));
                if bidirectional {
                    local.push((child, parent));
                }
            }
        }
        StaticShape::Complete => {
            local.extend((0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))))
        }
        StaticShape::Random => {
            for i in 0..m {
                for j in 0..m {
                    if i != j && rng.random_bool(p) {
                        local.push((i, j));
                    }
                }
            }
        }
    }
    let mut w = ndarray::Array2::zeros((n_max, n_max));
    for (a, b) in local {
        w[[members[a], members[b]]] = 1.0;
    }
    let weights = WeightMatrix::new(w).map_err(|e| BenchError::Config(e.to_string()))?;
    CommTopology::new(mask, weights).map_err(|e| BenchError::Config(e.to_string()))
}

/// Supplies one topology per (task, repeat) cell.
pub trait TopologySource: Sync {
    fn name(&self) -> &str;
    fn topology(&self, task: &TaskSpec, repeat: usize) -> Result<CommTopology, BenchError>;
}

/// A fixed shape over the whole pool. Random edges are redrawn per cell from
/// `seed`, the task id and the repeat index.
#[derive(Debug, Clone)]
pub struct StaticSource {
    pub shape: StaticShape,
    pub n_max: usize,
    pub p: f64,
    pub bidirectional: bool,
    pub seed: u64,
}

impl StaticSource {
    pub fn new(shape: StaticShape, n_max: usize, seed: u64) -> Self {
        Self { shape, n_max, p: DEFAULT_RANDOM_P, bidirectional: false, seed }
    }
}

fn cell_seed(seed: u64, task_id: &str, repeat: usize) -> u64 {
    // FNV-1a over the task id, mixed with the seed and repeat
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in task_id.bytes().chain((repeat as u64).to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl TopologySource for StaticSource {
    fn name(&self) -> &str {
        self.shape.as_str()
    }

    fn topology(&self, task: &TaskSpec, repeat: usize) -> Result<CommTopology, BenchError> {
        let members: Vec<usize> = (0..self.n_max).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(self.seed, &task.task_id, repeat));
        make_static(self.shape, &members, self.n_max, self.p, self.bidirectional, &mut rng)
    }
}

/// Topologies from the trained network.
pub struct DesignedSource<'a, B: ?Sized> {
    pub pool: &'a AgentPool,
    pub backend: &'a B,
    pub params: &'a PruneNetParams,
    pub theta: f64,
}

impl<B: EmbeddingBackend + ?Sized> TopologySource for DesignedSource<'_, B> {
    fn name(&self) -> &str {
        "designed"
    }

    fn topology(&self, task: &TaskSpec, _repeat: usize) -> Result<CommTopology, BenchError> {
        design_topology(&task.task_text, self.pool, self.backend, self.params, self.theta)
            .map_err(|e| BenchError::Source(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub repeats: usize,
    pub k: usize,
    pub theta: f64,
    pub seed: u64,
    pub parallelism: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { repeats: DEFAULT_REPEATS, k: 3, theta: 0.5, seed: 0, parallelism: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub accuracy: f64,
    pub mean_tokens: f64,
    pub mean_active: f64,
    pub runs: usize,
    pub failures: usize,
    pub category_accuracy: BTreeMap<TaskCategory, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite_id: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    fn categories(&self) -> Vec<TaskCategory> {
        let mut cats: Vec<TaskCategory> =
            self.rows.iter().flat_map(|r| r.category_accuracy.keys().copied()).collect();
        cats.sort();
        cats.dedup();
        cats
    }

    pub fn to_csv(&self) -> String {
        let cats = self.categories();
        let mut out = String::from("method");
        for c in &cats {
            let _ = write!(out, ",{c}");
        }
        out.push_str(",accuracy,mean_tokens,mean_active,runs,failures\n");
        for r in &self.rows {
            out.push_str(&r.method);
            for c in &cats {
                let _ = write!(out, ",{:.4}", r.category_accuracy.get(c).copied().unwrap_or(f64::NAN));
            }
            let _ = writeln!(
                out,
                ",{:.4},{:.1},{:.2},{},{}",
                r.accuracy, r.mean_tokens, r.mean_active, r.runs, r.failures
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let cats = self.categories();
        let mut out = String::from("| Method |");
        for c in &cats {
            let _ = write!(out, " {c} |");
        }
        out.push_str(" Avg. |  Tokens |\n|---|");
        for _ in &cats {
            out.push_str("---:|");
        }
        out.push_str("---:|---:|\n");
        for r in &self.rows {
            let _ = write!(out, "| {} |", r.method);
            for c in &cats {
                let _ = write!(out, " {:.2} |", 100.0 * r.category_accuracy.get(c).copied().unwrap_or(f64::NAN));
            }
            let _ = writeln!(out, " {:.2} | {:.1} |", 100.0 * r.accuracy, r.mean_tokens);
        }
        out
    }
}

struct Cell {
    method: usize,
    category: TaskCategory,
    correct: bool,
    tokens: u64,
    active: usize,
    failed: bool,
}

/// Runs every method on every task `repeats` times. Failed cells count as
/// incorrect with whatever tokens they spent.
pub fn run_bench(
    suite_id: &str,
    suite: &[TaskSpec],
    methods: &[&dyn TopologySource],
    pool: &AgentPool,
    backends: &BackendSet,
    cfg: &BenchConfig,
) -> Result<BenchReport, BenchError> {
    if suite.is_empty() {
        return Err(BenchError::EmptySuite);
    }
    if cfg.repeats == 0 {
        return Err(BenchError::Config("repeats must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..suite.len()).flat_map(move |t| (0..cfg.repeats).map(move |r| (m, t, r))))
        .collect();
    let run_cell = |&(m, t, r): &(usize, usize, usize)| -> Cell {
        let task = &suite[t];
        let method = methods[m];
        let mut cell = Cell { method: m, category: task.category, correct: false, tokens: 0, active: 0, failed: true };
        let topology = match method.topology(task, r) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("{} on {} (repeat {r}): {e}", method.name(), task.task_id);
                return cell;
            }
        };
        cell.active = topology.mask().active_count();
        let run_cfg = RunConfig { k: cfg.k, theta: cfg.theta, seed: cell_seed(cfg.seed, &task.task_id, r) };
        match run_topology(&topology, task, pool, backends, &run_cfg) {
            Ok(run) => {
                cell.correct = task.is_correct(&run.answer);
                cell.tokens = run.total_tokens;
                cell.failed = false;
            }
            Err(OrchestratorError::RunAborted { reason, partial }) => {
                log::warn!("{} on {} (repeat {r}) aborted: {reason}", method.name(), task.task_id);
                cell.tokens = partial.iter().map(|e| e.tokens()).sum();
            }
            Err(e) => log::warn!("{} on {} (repeat {r}): {e}", method.name(), task.task_id),
        }
        cell
    };
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let cells: Vec<Cell> = threads.install(|| jobs.par_iter().map(run_cell).collect());

    let rows = methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let mine: Vec<&Cell> = cells.iter().filter(|c| c.method == m).collect();
            let runs = mine.len();
            let mut per_cat: BTreeMap<TaskCategory, (usize, usize)> = BTreeMap::new();
            for c in &mine {
                let e = per_cat.entry(c.category).or_default();
                e.0 += usize::from(c.correct);
                e.1 += 1;
            }
            BenchRow {
                method: method.name().to_string(),
                accuracy: mine.iter().filter(|c| c.correct).count() as f64 / runs as f64,
                mean_tokens: mine.iter().map(|c| c.tokens as f64).sum::<f64>() / runs as f64,
                mean_active: mine.iter().map(|c| c.active as f64).sum::<f64>() / runs as f64,
                runs,
                failures: mine.iter().filter(|c| c.failed).count(),
                category_accuracy: per_cat.into_iter().map(|(k, (ok, n))| (k, ok as f64 / n as f64)).collect(),
            }
        })
        .collect();
    Ok(BenchReport { suite_id: suite_id.to_string(), seeds: vec![cfg.seed], rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub a: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * (-(x - self.mu).powi(2) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Least-squares amplitude for fixed `(mu, sigma)` and the residual it leaves.
fn profile_sse(xs: &[f64], ys: &[f64], mu: f64, sigma: f64) -> (f64, f64) {
    let (mut gy, mut gg, mut yy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let g = (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp();
        gy += g * y;
        gg += g * g;
        yy += y * y;
    }
    if gg == 0.0 {
        return (0.0, yy);
    }
    let a = gy / gg;
    (a, yy - a * gy)
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Fits `A exp(-(x - mu)^2 / (2 sigma^2))` to histogram points: coarse grid
/// over `(mu, sigma)`, alternating golden-section refinement, closed-form `A`.
pub fn fit_gaussian_histogram(xs: &[f64], ys: &[f64]) -> Result<GaussianFit, BenchError> {
    if xs.len() != ys.len() {
        return Err(BenchError::Config("histogram x and y lengths differ".into()));
    }
    if ys.iter().filter(|&&y| y > 0.0).count() < 2 {
        return Err(BenchError::FitDegenerate);
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1.0);
    let (s_lo, s_hi) = (0.05 * span, 2.0 * span);
    let sse = |mu: f64, sigma: f64| profile_sse(xs, ys, mu, sigma).1;

    let mut best = (lo, s_lo, f64::INFINITY);
    let steps = 60;
    for i in 0..=steps {
        let mu = lo + span * i as f64 / steps as f64;
        for j in 0..=steps {
            let sigma = s_lo + (s_hi - s_lo) * j as f64 / steps as f64;
            let e = sse(mu, sigma);
            if e < best.2 {
                best = (mu, sigma, e);
            }
        }
    }
    let (mut mu, mut sigma) = (best.0, best.1);
    let (dmu, dsig) = (span / steps as f64, (s_hi - s_lo) / steps as f64);
    for _ in 0..20 {
        mu = golden_min(|m| sse(m, sigma), mu - dmu, mu + dmu, 40);
        sigma = golden_min(|s| sse(mu, s), (sigma - dsig).max(1e-3), sigma + dsig, 40);
    }
    let (a, _) = profile_sse(xs, ys, mu, sigma);
    Ok(GaussianFit { a, mu, sigma: sigma.abs() })
}

/// Histogram of integer counts over `0..=max`, then [`fit_gaussian_histogram`].
pub fn fit_counts(counts: &[usize]) -> Result<GaussianFit, BenchError> {
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0.0; max + 2];
    for &c in counts {
        hist[c] += 1.0;
    }
    let xs: Vec<f64> = (0..hist.len()).map(|x| x as f64).collect();
    fit_gaussian_histogram(&xs, &hist)
}

pub fn fit_node_count_gaussian(topologies: &[CommTopology]) -> Result<GaussianFit, BenchError> {
    if topologies.len() < 5 {
        return Err(BenchError::TooFewSamples { needed: 5, got: topologies.len() });
    }
    let counts: Vec<usize> = topologies.iter().map(|t| t.mask().active_count()).collect();
    fit_counts(&counts)
}
