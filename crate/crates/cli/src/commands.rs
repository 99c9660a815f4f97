use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use agp_core::baselines::{fit_node_count_gaussian, DesignedSource, StaticShape, StaticSource};
use agp_core::collector::{collect, read_corpus, write_corpus, CollectError, CollectStats};
use agp_core::orchestrator::{run_topology, OrchestratorError, OrchestratorEvaluator, RunConfig, RunResult};
use agp_core::prune::{design_topology, load_checkpoint, save_checkpoint, train, PruneError, TrainLog};
use agp_core::synthetic::{generate_tasks, tasks_to_jsonl, PlantedEvaluator};
use agp_core::task::parse_tasks;
use agp_core::{
    parse_topology, run_bench, AgentPool, BenchConfig, BenchReport, CommTopology, EmbeddingBackend, GaussianFit,
    PruneNetParams, TaskCategory, TaskSpec, TopologySource,
};

use crate::config::{subsystem_seed, Config, Subsystem};
use crate::CliError;

pub const BENCH_METHODS: [&str; 6] = ["chain", "star", "tree", "complete", "random", "designed"];

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn need<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| CliError::Usage(format!("no {what} path configured")))
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>, CliError> {
    let text = String::from_utf8(read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let tasks = parse_tasks(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if tasks.is_empty() {
        return Err(CliError::Usage(format!("no tasks in {}", path.display())));
    }
    Ok(tasks)
}

/// Accepts full category names and the short forms `general`, `math`, `code`.
pub fn parse_category(s: &str) -> Result<TaskCategory, CliError> {
    let short = |c: TaskCategory| c.as_str().split('_').next().unwrap_or_default() == s;
    TaskCategory::ALL.into_iter().find(|&c| c.as_str() == s || short(c)).ok_or_else(|| {
        let names: Vec<&str> = TaskCategory::ALL.iter().map(|c| c.as_str()).collect();
        CliError::Usage(format!("unknown category {s:?} (valid: {})", names.join(", ")))
    })
}

/// Writes `counts` planted tasks per category (general, math, code).
pub fn cmd_synth(cfg: &Config, counts: [usize; 3], prefix: &str, out: &Path) -> Result<Vec<TaskSpec>, CliError> {
    if counts.iter().sum::<usize>() == 0 {
        return Err(CliError::Usage("no tasks requested".into()));
    }
    let tasks = generate_tasks(counts, subsystem_seed(cfg.seed, Subsystem::Synth), prefix);
    write(out, tasks_to_jsonl(&tasks))?;
    Ok(tasks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvaluatorKind {
    Planted,
    Orchestrator,
}

impl std::str::FromStr for EvaluatorKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "planted" => Ok(Self::Planted),
            "orchestrator" => Ok(Self::Orchestrator),
            other => Err(CliError::Usage(format!("unknown evaluator {other:?} (planted, orchestrator)"))),
        }
    }
}

pub fn cmd_collect(cfg: &Config, tasks_path: &Path, evaluator: EvaluatorKind) -> Result<CollectStats, CliError> {
    let out = need(&cfg.paths.corpus, "corpus")?;
    let tasks = load_tasks(tasks_path)?;
    let pool = cfg.pool()?;
    let ccfg = cfg.collector_config();
    let result = match evaluator {
        EvaluatorKind::Planted => collect(&tasks, pool.n_max(), &PlantedEvaluator::default(), &ccfg),
        EvaluatorKind::Orchestrator => {
            let backends = cfg.backends()?;
            let ev = OrchestratorEvaluator {
                pool: &pool,
                backends: &backends,
                cfg: run_config(cfg),
            };
            collect(&tasks, pool.n_max(), &ev, &ccfg)
        }
    };
    let output = result.map_err(|e| match e {
        // every graph of some task was skipped, i.e. the evaluator kept failing
        CollectError::MineUnderflow { .. } | CollectError::ScoreUnavailable(_) => CliError::External(e.to_string()),
        other => CliError::Usage(other.to_string()),
    })?;
    write(out, write_corpus(&output.pairs))?;
    Ok(output.stats)
}

pub fn format_collect_summary(stats: &CollectStats) -> String {
    let cats: Vec<String> = stats.categories.iter().map(|(c, n)| format!("{c}={n}")).collect();
    format!(
        "tasks {}, graphs sampled {}, scored {}, skipped {}, pairs mined {} ({})",
        stats.tasks,
        stats.graphs_sampled,
        stats.graphs_scored,
        stats.graphs_skipped,
        stats.pairs,
        cats.join(", ")
    )
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub log: TrainLog,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
}

impl TrainSummary {
    pub fn initial_loss(&self) -> f64 {
        self.log.initial_loss().unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.log.final_loss().unwrap_or(f64::NAN)
    }
}

pub fn log_path_for(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.csv")
}

pub fn cmd_train(cfg: &Config, log_path: Option<&Path>) -> Result<TrainSummary, CliError> {
    let corpus_path = need(&cfg.paths.corpus, "corpus")?;
    let checkpoint = need(&cfg.paths.checkpoint, "checkpoint")?.to_path_buf();
    let text = String::from_utf8(read(corpus_path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", corpus_path.display())))?;
    let corpus = read_corpus(&text).map_err(|e| CliError::Usage(format!("{}: {e}", corpus_path.display())))?;
    let pool = cfg.pool()?;
    let embedder = cfg.embedder()?;
    let tcfg = cfg.train_config();
    let out = train(&corpus, &pool, embedder.as_ref(), &tcfg).map_err(|e| match e {
        PruneError::TrainingDiverged { .. } => CliError::Training(e.to_string()),
        PruneError::Embed(_) => CliError::External(e.to_string()),
        other => CliError::Usage(other.to_string()),
    })?;
    let log_path = log_path.map(Path::to_path_buf).unwrap_or_else(|| log_path_for(&checkpoint));
    write(&checkpoint, save_checkpoint(&out.params, Some(&tcfg)))?;
    write(&log_path, out.log.to_csv())?;
    Ok(TrainSummary { log: out.log, checkpoint, log_path })
}

/// Loads the configured checkpoint and checks it against the pool and
/// embedding width.
pub fn load_params(cfg: &Config, pool: &AgentPool, embedder: &dyn EmbeddingBackend) -> Result<PruneNetParams, CliError> {
    let path = need(&cfg.paths.checkpoint, "checkpoint")?;
    let bytes = std::fs::read(path).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
    let params = load_checkpoint(&bytes, None).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    if params.shape.n_max != pool.n_max() || params.shape.d != embedder.dim() {
        return Err(CliError::Checkpoint(format!(
            "checkpoint is for {} agents and {}-dim embeddings, configured {} and {}",
            params.shape.n_max,
            params.shape.d,
            pool.n_max(),
            embedder.dim()
        )));
    }
    Ok(params)
}

fn design(
    query: &str,
    pool: &AgentPool,
    embedder: &dyn EmbeddingBackend,
    params: &PruneNetParams,
    theta: f64,
) -> Result<CommTopology, CliError> {
    design_topology(query, pool, embedder, params, theta).map_err(|e| match e {
        PruneError::Embed(_) => CliError::External(e.to_string()),
        PruneError::Dimension { .. } | PruneError::Shape(_) => CliError::Checkpoint(e.to_string()),
        other => CliError::Usage(other.to_string()),
    })
}

pub fn cmd_design(cfg: &Config, query: &str) -> Result<CommTopology, CliError> {
    let pool = cfg.pool()?;
    let embedder = cfg.embedder()?;
    let params = load_params(cfg, &pool, embedder.as_ref())?;
    design(query, &pool, embedder.as_ref(), &params, cfg.theta)
}

pub fn active_roles(topology: &CommTopology, pool: &AgentPool) -> Vec<String> {
    topology
        .mask()
        .active()
        .map(|i| format!("{i}: {}", pool.get(i).map_or("?", |a| a.role.as_str())))
        .collect()
}

fn run_config(cfg: &Config) -> RunConfig {
    RunConfig { k: cfg.k_rounds, theta: cfg.theta, seed: subsystem_seed(cfg.seed, Subsystem::Orchestrator) }
}

/// Designs a topology for `task`, executes it and writes the result (or the
/// partial transcript of an aborted run) to `transcript`.
pub fn cmd_run(cfg: &Config, task: &TaskSpec, transcript: &Path) -> Result<RunResult, CliError> {
    let pool = cfg.pool()?;
    let embedder = cfg.embedder()?;
    let backends = cfg.backends()?;
    let params = load_params(cfg, &pool, embedder.as_ref())?;
    let topology = design(&task.task_text, &pool, embedder.as_ref(), &params, cfg.theta)?;
    match run_topology(&topology, task, &pool, &backends, &run_config(cfg)) {
        Ok(result) => {
            write(transcript, result.to_json())?;
            Ok(result)
        }
        Err(OrchestratorError::RunAborted { reason, partial }) => {
            let doc = serde_json::to_string_pretty(&partial).expect("entries serialize");
            write(transcript, doc)?;
            Err(CliError::RunAborted { reason, partial: transcript.to_path_buf() })
        }
        Err(e) => Err(CliError::Usage(e.to_string())),
    }
}

pub fn parse_methods(list: &str) -> Result<Vec<String>, CliError> {
    let methods: Vec<String> = list.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect();
    if methods.is_empty() {
        return Err(CliError::Usage(format!("no methods given (valid: {})", BENCH_METHODS.join(", "))));
    }
    for m in &methods {
        if !BENCH_METHODS.contains(&m.as_str()) {
            return Err(CliError::Usage(format!(
                "unknown method {m:?} (valid: {})",
                BENCH_METHODS.join(", ")
            )));
        }
    }
    Ok(methods)
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub methods: Vec<String>,
    pub repeats: usize,
    pub out_dir: PathBuf,
}

pub fn cmd_bench(cfg: &Config, suite_path: &Path, opts: &BenchOptions) -> Result<BenchReport, CliError> {
    let suite = load_tasks(suite_path)?;
    let pool = cfg.pool()?;
    let embedder = cfg.embedder()?;
    let backends = cfg.backends()?;
    let seed = subsystem_seed(cfg.seed, Subsystem::Bench);
    let params = if opts.methods.iter().any(|m| m == "designed") {
        Some(load_params(cfg, &pool, embedder.as_ref())?)
    } else {
        None
    };
    let statics: Vec<StaticSource> = opts
        .methods
        .iter()
        .filter(|m| *m != "designed")
        .map(|m| {
            let shape: StaticShape = m.parse().map_err(|e: agp_core::BenchError| CliError::Usage(e.to_string()))?;
            Ok(StaticSource::new(shape, pool.n_max(), seed))
        })
        .collect::<Result<_, CliError>>()?;
    let designed = params.as_ref().map(|params| DesignedSource {
        pool: &pool,
        backend: embedder.as_ref(),
        params,
        theta: cfg.theta,
    });
    let mut sources: Vec<&dyn TopologySource> = Vec::new();
    let mut statics_iter = statics.iter();
    for m in &opts.methods {
        if m == "designed" {
            sources.push(designed.as_ref().expect("designed source is built when requested"));
        } else {
            sources.push(statics_iter.next().expect("one static source per static method"));
        }
    }
    let bcfg = BenchConfig {
        repeats: opts.repeats,
        k: cfg.k_rounds,
        theta: cfg.theta,
        seed,
        parallelism: cfg.parallelism,
    };
    let suite_id = suite_path.file_stem().map_or("suite".into(), |s| s.to_string_lossy().into_owned());
    let report = run_bench(&suite_id, &suite, &sources, &pool, &backends, &bcfg)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    write(&opts.out_dir.join(format!("{suite_id}.bench.csv")), report.to_csv())?;
    write(&opts.out_dir.join(format!("{suite_id}.bench.md")), report.to_markdown())?;
    Ok(report)
}

/// Roster as JSONL.
pub fn export_pool(cfg: &Config) -> Result<String, CliError> {
    Ok(cfg.pool()?.to_jsonl())
}

/// Topology JSON to DOT with role labels.
pub fn export_dot(cfg: &Config, topology_path: &Path) -> Result<String, CliError> {
    let pool = cfg.pool()?;
    let topology =
        parse_topology(&read(topology_path)?).map_err(|e| CliError::Usage(format!("{}: {e}", topology_path.display())))?;
    Ok(topology.to_dot(Some(&pool.roles())))
}

/// Per-category pair counts and team sizes of a corpus, as CSV.
pub fn export_corpus_stats(cfg: &Config) -> Result<String, CliError> {
    let path = need(&cfg.paths.corpus, "corpus")?;
    let text = String::from_utf8(read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let corpus = read_corpus(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut rows: BTreeMap<TaskCategory, (usize, usize)> = BTreeMap::new();
    for p in &corpus {
        let e = rows.entry(p.category).or_default();
        e.0 += 1;
        e.1 += p.y.active_count();
    }
    let mut out = String::from("category,pairs,mean_active\n");
    for (c, (n, active)) in rows {
        out.push_str(&format!("{c},{n},{:.3}\n", active as f64 / n as f64));
    }
    Ok(out)
}

/// Histogram of designed team sizes over a task file plus its Gaussian fit.
/// Histogram CSV of designed team sizes, plus a Gaussian fit when the
/// histogram has enough spread for one.
pub fn export_node_counts(
    cfg: &Config,
    tasks_path: &Path,
) -> Result<(String, Result<GaussianFit, String>), CliError> {
    let tasks = load_tasks(tasks_path)?;
    let pool = cfg.pool()?;
    let embedder = cfg.embedder()?;
    let params = load_params(cfg, &pool, embedder.as_ref())?;
    let topologies = tasks
        .iter()
        .map(|t| design(&t.task_text, &pool, embedder.as_ref(), &params, cfg.theta))
        .collect::<Result<Vec<_>, _>>()?;
    let mut counts = vec![0usize; pool.n_max() + 1];
    for t in &topologies {
        counts[t.mask().active_count()] += 1;
    }
    let fit = fit_node_count_gaussian(&topologies).map_err(|e| e.to_string());
    let mut out = String::from("active,count\n");
    for (k, c) in counts.iter().enumerate() {
        out.push_str(&format!("{k},{c}\n"));
    }
    Ok((out, fit))
}
