//! Run configuration. Sources are layered defaults < environment < config file
//! < command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use agp_core::collector::CollectorConfig;
use agp_core::orchestrator::{
    AgentBackend, BackendError, BackendSet, ChatBackend, EchoBackend, MajorityDecision, DEFAULT_API_KEY_ENV,
    DEFAULT_CHAT_ENDPOINT_ENV,
};
use agp_core::prune::TrainConfig;
use agp_core::{AgentPool, EmbeddingBackend, HashEmbedder, HttpEmbedder, PlantedBackend};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const EMBED_ENDPOINT_ENV: &str = "AGP_EMBED_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Experts of the task's category answer correctly, the rest give a decoy.
    Planted,
    Echo,
    /// OpenAI-compatible chat endpoint.
    Live,
}

impl FromStr for AgentKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "planted" => Ok(Self::Planted),
            "echo" => Ok(Self::Echo),
            "live" => Ok(Self::Live),
            other => Err(CliError::Usage(format!("unknown agent backend {other:?} (planted, echo, live)"))),
        }
    }
}

impl FromStr for EmbeddingKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "hash" => Ok(Self::Hash),
            "http" => Ok(Self::Http),
            other => Err(CliError::Usage(format!("unknown embedding backend {other:?} (hash, http)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub pool: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { pool: None, corpus: Some("corpus.jsonl".into()), checkpoint: Some("prunenet.json".into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingKind,
    pub endpoint: Option<String>,
    pub dim: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { backend: EmbeddingKind::Hash, endpoint: None, dim: agp_core::embed::DEFAULT_DIM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsConfig {
    pub backend: AgentKind,
    pub endpoint: Option<String>,
    pub model: String,
    /// Environment variable holding the API key.
    pub key_env: String,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            backend: AgentKind::Planted,
            endpoint: None,
            model: "gpt-4o-mini".into(),
            key_env: DEFAULT_API_KEY_ENV.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Root seed; every subsystem derives its own seed from it.
    pub seed: u64,
    pub parallelism: usize,
    pub k_rounds: usize,
    pub theta: f64,
    pub paths: PathsConfig,
    pub embedding: EmbeddingConfig,
    pub agents: AgentsConfig,
    pub collector: CollectorConfig,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            parallelism: 1,
            k_rounds: agp_core::orchestrator::DEFAULT_ROUNDS,
            theta: agp_core::orchestrator::DEFAULT_THETA,
            paths: PathsConfig::default(),
            embedding: EmbeddingConfig::default(),
            agents: AgentsConfig::default(),
            collector: CollectorConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    Synth = 1,
    Collector = 2,
    Train = 3,
    Orchestrator = 4,
    Bench = 5,
}

/// Seed of one subsystem: first word of stream `subsystem` of the root seed.
pub fn subsystem_seed(root: u64, subsystem: Subsystem) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(subsystem as u64);
    rng.next_u64()
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl Config {
    /// Defaults, then environment, then the optional config file.
    pub fn load(file: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.apply_env(|k| std::env::var(k).ok());
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cfg.apply_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        }
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(v) = var(EMBED_ENDPOINT_ENV).filter(|v| !v.is_empty()) {
            self.embedding.endpoint = Some(v);
        }
        if let Some(v) = var(DEFAULT_CHAT_ENDPOINT_ENV).filter(|v| !v.is_empty()) {
            self.agents.endpoint = Some(v);
        }
    }

    /// Keys present in `text` replace the current values; absent keys keep them.
    pub fn apply_toml(&mut self, text: &str) -> Result<(), String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let mut overlay = serde_json::to_value(table).map_err(|e| e.to_string())?;
        if let Some(train) = overlay.get_mut("train").and_then(Value::as_object_mut) {
            if let Some(v) = train.remove("lambda_c") {
                train.insert("coherence_lambda_c".into(), v);
            }
        }
        let mut base = serde_json::to_value(&*self).map_err(|e| e.to_string())?;
        merge(&mut base, overlay);
        *self = serde_json::from_value(base).map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.parallelism == 0 {
            return usage("parallelism must be at least 1".into());
        }
        if self.k_rounds == 0 {
            return usage("k_rounds must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return usage(format!("theta {} outside [0, 1]", self.theta));
        }
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn collector_config(&self) -> CollectorConfig {
        CollectorConfig {
            seed: subsystem_seed(self.seed, Subsystem::Collector),
            parallelism: self.parallelism,
            ..self.collector.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: subsystem_seed(self.seed, Subsystem::Train), ..self.train.clone() }
    }

    pub fn pool(&self) -> Result<AgentPool, CliError> {
        match &self.paths.pool {
            None => Ok(AgentPool::default_roster()),
            Some(path) => {
                let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
                agp_core::load_pool(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
            }
        }
    }

    pub fn embedder(&self) -> Result<Box<dyn EmbeddingBackend>, CliError> {
        match self.embedding.backend {
            EmbeddingKind::Hash => Ok(Box::new(HashEmbedder::new(self.embedding.dim))),
            EmbeddingKind::Http => {
                let endpoint = self.embedding.endpoint.clone().ok_or_else(|| {
                    CliError::Usage(format!("http embedding needs an endpoint ({EMBED_ENDPOINT_ENV} or [embedding] endpoint)"))
                })?;
                Ok(Box::new(HttpEmbedder::new(endpoint, None, self.embedding.dim)))
            }
        }
    }

    pub fn backends(&self) -> Result<BackendSet, CliError> {
        let (agents, decision): (Arc<dyn AgentBackend>, Arc<dyn AgentBackend>) = match self.agents.backend {
            AgentKind::Planted => (Arc::new(PlantedBackend::default()), Arc::new(MajorityDecision)),
            AgentKind::Echo => (Arc::new(EchoBackend), Arc::new(MajorityDecision)),
            AgentKind::Live => {
                let endpoint = self.agents.endpoint.clone().ok_or_else(|| {
                    CliError::Usage(format!("live agents need an endpoint ({DEFAULT_CHAT_ENDPOINT_ENV} or [agents] endpoint)"))
                })?;
                let chat = ChatBackend::from_env(endpoint, self.agents.model.clone(), &self.agents.key_env)
                    .map_err(|e| match e {
                        BackendError::CredentialsMissing(m) => CliError::External(format!("credentials missing: {m}")),
                        other => CliError::External(other.to_string()),
                    })?;
                let chat: Arc<dyn AgentBackend> = Arc::new(chat);
                (chat.clone(), chat)
            }
        };
        Ok(BackendSet::new(agents, decision))
    }
}
