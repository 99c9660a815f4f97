//! The `agp` command line: synthesize planted tasks, collect supervision,
//! train the pruning network, design and run topologies, benchmark baselines.

pub mod commands;
pub mod config;
mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use agp_core::{serialize_topology, AnswerCheck, TaskSpec, TopologyFormat};
use clap::{Args, Parser, Subcommand};

pub use commands::*;
pub use config::{subsystem_seed, AgentKind, Config, EmbeddingKind, Subsystem};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "agp", version, about = "Design pruned multi-agent communication topologies")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; subsystems derive their own seeds from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Agent roster JSONL (default: built-in 15-agent roster).
    #[arg(long, global = true)]
    pub pool: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Embedding backend: hash or http.
    #[arg(long, global = true)]
    pub embedding: Option<String>,
    /// Agent backend: planted, echo or live.
    #[arg(long, global = true)]
    pub agents: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Mask threshold.
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Dialogue rounds.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted task suite as JSONL.
    Synth(SynthArgs),
    /// Sample, score and mine supervision pairs.
    Collect(CollectArgs),
    /// Train the pruning network on a corpus.
    Train(TrainArgs),
    /// Design a topology for a query.
    Design(DesignArgs),
    /// Design and execute a topology for a query.
    Run(RunArgs),
    /// Compare topology sources on a task suite.
    Bench(BenchArgs),
    /// Emit rosters, DOT graphs and CSV summaries.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Total tasks, split 200:100:160 over general, math, code.
    #[arg(long, default_value_t = 460)]
    pub total: usize,
    /// Explicit per-category counts `general,math,code`.
    #[arg(long)]
    pub counts: Option<String>,
    #[arg(long, default_value = "task")]
    pub prefix: String,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    /// planted or orchestrator.
    #[arg(long, default_value = "planted")]
    pub evaluator: String,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training log CSV (default: next to the checkpoint).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long)]
    pub query: String,
    /// json or dot.
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Write the topology here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub query: String,
    /// general, math or code.
    #[arg(long, default_value = "general")]
    pub category: String,
    /// Expected answer, used by planted agents and to report correctness.
    #[arg(long, default_value = "")]
    pub expected: String,
    #[arg(long, default_value = "run.json")]
    pub transcript: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub suite: PathBuf,
    /// Comma-separated subset of chain, star, tree, complete, random, designed.
    #[arg(long, default_value = "chain,star,tree,complete,random,designed")]
    pub methods: String,
    #[arg(long, default_value_t = agp_core::baselines::DEFAULT_REPEATS)]
    pub repeats: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(subcommand)]
    pub what: ExportWhat,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExportWhat {
    /// The agent roster as JSONL.
    Pool,
    /// A topology JSON file as Graphviz DOT.
    Dot {
        #[arg(long)]
        topology: PathBuf,
    },
    /// Pairs and mean team size per category of the corpus.
    CorpusStats,
    /// Designed team sizes over a task file, with a Gaussian fit.
    NodeCounts {
        #[arg(long)]
        tasks: PathBuf,
    },
}

impl Cli {
    /// Config file and environment, overridden by the flags given here.
    pub fn config(&self) -> Result<Config, CliError> {
        let mut cfg = Config::load(self.config.as_deref())?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.parallelism {
            cfg.parallelism = v;
        }
        if let Some(v) = &self.pool {
            cfg.paths.pool = Some(v.clone());
        }
        if let Some(v) = &self.corpus {
            cfg.paths.corpus = Some(v.clone());
        }
        if let Some(v) = &self.checkpoint {
            cfg.paths.checkpoint = Some(v.clone());
        }
        if let Some(v) = &self.embedding {
            cfg.embedding.backend = v.parse()?;
        }
        if let Some(v) = &self.agents {
            cfg.agents.backend = v.parse()?;
        }
        if let Some(v) = &self.model {
            cfg.agents.model = v.clone();
        }
        if let Some(v) = self.theta {
            cfg.theta = v;
        }
        if let Some(v) = self.k {
            cfg.k_rounds = v;
        }
        match &self.command {
            Command::Collect(a) => {
                let c = &mut cfg.collector;
                c.budget = a.budget.unwrap_or(c.budget);
                c.sigma = a.sigma.unwrap_or(c.sigma);
                c.mu = a.mu.or(c.mu);
                c.top_k = a.top_k.unwrap_or(c.top_k);
            }
            Command::Train(a) => {
                let t = &mut cfg.train;
                t.epochs = a.epochs.unwrap_or(t.epochs);
                t.lr = a.lr.unwrap_or(t.lr);
                t.beta = a.beta.unwrap_or(t.beta);
                t.batch = a.batch.unwrap_or(t.batch);
                t.weight_decay = a.weight_decay.unwrap_or(t.weight_decay);
            }
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_counts(s: &str) -> Result<[usize; 3], CliError> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("--counts {s:?}: {e}")))?;
    <[usize; 3]>::try_from(parts).map_err(|_| CliError::Usage(format!("--counts needs three numbers, got {s:?}")))
}

fn emit(out: Option<&std::path::Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Executes one parsed invocation.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.config()?;
    match &cli.command {
        Command::Synth(a) => {
            let counts = match &a.counts {
                Some(c) => parse_counts(c)?,
                None => agp_core::synthetic::ratio_counts(a.total),
            };
            let tasks = cmd_synth(&cfg, counts, &a.prefix, &a.out)?;
            println!("wrote {} tasks to {}", tasks.len(), a.out.display());
        }
        Command::Collect(a) => {
            let stats = cmd_collect(&cfg, &a.tasks, a.evaluator.parse()?)?;
            println!("{}", format_collect_summary(&stats));
        }
        Command::Train(a) => {
            println!("config {}", serde_json::to_string(&cfg.train_config()).expect("config serializes"));
            let s = cmd_train(&cfg, a.log.as_deref())?;
            println!(
                "final loss {:.6} (initial {:.6}), checkpoint {}, log {}",
                s.final_loss(),
                s.initial_loss(),
                s.checkpoint.display(),
                s.log_path.display()
            );
        }
        Command::Design(a) => {
            let format: TopologyFormat = a.format.parse().map_err(|e: agp_core::GraphError| CliError::Usage(e.to_string()))?;
            let topology = cmd_design(&cfg, &a.query)?;
            let pool = cfg.pool()?;
            let text = match format {
                TopologyFormat::Dot => topology.to_dot(Some(&pool.roles())),
                TopologyFormat::Json => String::from_utf8(serialize_topology(&topology, format)).expect("utf-8") + "\n",
            };
            let roles = active_roles(&topology, &pool).join(", ");
            match &a.out {
                Some(_) => {
                    emit(a.out.as_deref(), &text)?;
                    println!("active agents: {roles}");
                }
                None => {
                    emit(None, &text)?;
                    eprintln!("active agents: {roles}");
                }
            }
        }
        Command::Run(a) => {
            let task = TaskSpec {
                task_id: "query".into(),
                task_text: a.query.clone(),
                category: parse_category(&a.category)?,
                expected_answer: a.expected.clone(),
                check: AnswerCheck::Exact,
            };
            let result = cmd_run(&cfg, &task, &a.transcript)?;
            println!("answer: {}", result.answer);
            println!("total tokens: {}", result.total_tokens);
            println!("transcript: {}", a.transcript.display());
        }
        Command::Bench(a) => {
            let opts = BenchOptions { methods: parse_methods(&a.methods)?, repeats: a.repeats, out_dir: a.out_dir.clone() };
            let report = cmd_bench(&cfg, &a.suite, &opts)?;
            print!("{}", report.to_markdown());
        }
        Command::Export(a) => {
            let out = a.out.as_deref();
            match &a.what {
                ExportWhat::Pool => emit(out, &export_pool(&cfg)?)?,
                ExportWhat::Dot { topology } => emit(out, &export_dot(&cfg, topology)?)?,
                ExportWhat::CorpusStats => emit(out, &export_corpus_stats(&cfg)?)?,
                ExportWhat::NodeCounts { tasks } => {
                    let (csv, fit) = export_node_counts(&cfg, tasks)?;
                    emit(out, &csv)?;
                    match fit {
                        Ok(fit) => eprintln!("gaussian fit: A {:.4}, mu {:.4}, sigma {:.4}", fit.a, fit.mu, fit.sigma),
                        Err(e) => eprintln!("gaussian fit: {e}"),
                    }
                }
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
