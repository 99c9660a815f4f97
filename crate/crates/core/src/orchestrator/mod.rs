//! Executes a designed topology: `k` rounds over the active agents, then the
//! decision agent reads the whole transcript and answers.

mod backend;
mod http;

pub use backend::{
    extract_answer, majority_answer, AgentBackend, AgentRequest, BackendError, BackendSet, Completion,
    EchoBackend, MajorityDecision, Usage,
};
pub use http::{ChatBackend, DEFAULT_API_KEY_ENV, DEFAULT_CHAT_ENDPOINT_ENV};

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collector::{CollectError, Evaluator, SampledGraph};
use crate::graph::{binarize, lift_subgraph, CommTopology, GraphError, NodeMask, Topology, WeightMatrix};
use crate::pool::{render_system_prompt, render_user_prompt, AgentPool, AgentProfile, HistoryItem};
use crate::task::TaskSpec;

pub const DEFAULT_ROUNDS: usize = 3;
pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueEntry {
    pub entry_id: String,
    pub round: usize,
    /// `None` for the decision agent.
    pub agent_id: Option<usize>,
    pub role: String,
    pub output: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl DialogueEntry {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub answer: String,
    pub transcript: Vec<DialogueEntry>,
    pub total_tokens: u64,
    pub per_agent_tokens: BTreeMap<usize, u64>,
    pub decision_tokens: u64,
    pub topology_used: CommTopology,
}

impl RunResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run result serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("topology has {active} active agents; at least 2 are required")]
    DegenerateTopology { active: usize },
    #[error("run aborted: {reason}")]
    RunAborted { reason: String, partial: Vec<DialogueEntry> },
    #[error("decision agent needs a nonempty transcript")]
    EmptyTranscript,
    #[error("pool has {pool} agents but topology has {topology}")]
    PoolMismatch { pool: usize, topology: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub k: usize,
    pub theta: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { k: DEFAULT_ROUNDS, theta: DEFAULT_THETA, seed: 0 }
    }
}

/// Whitespace-delimited token count.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

const ID_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

fn fresh_entry_id<R: Rng + ?Sized>(rng: &mut R, used: &mut HashSet<String>) -> String {
    loop {
        let id: String = (0..4).map(|_| ID_ALPHABET[rng.random_range(0..ID_ALPHABET.len())] as char).collect();
        if used.insert(id.clone()) {
            return id;
        }
    }
}

/// Entries authored by in-neighbours of `agent_id`, heaviest edge first, then
/// arrival order.
pub fn visible_history<'a>(
    history: &'a [DialogueEntry],
    agent_id: usize,
    adj: &Topology,
    weights: &WeightMatrix,
) -> Vec<&'a DialogueEntry> {
    let mut seen: Vec<&DialogueEntry> = history
        .iter()
        .filter(|e| matches!(e.agent_id, Some(j) if j < adj.n() && adj.has_edge(j, agent_id)))
        .collect();
    // stable sort preserves arrival order within equal weights
    seen.sort_by(|a, b| {
        let wa = weights.get(a.agent_id.unwrap_or(0), agent_id);
        let wb = weights.get(b.agent_id.unwrap_or(0), agent_id);
        wb.total_cmp(&wa)
    });
    seen
}

fn history_items<'a>(entries: &[&'a DialogueEntry]) -> Vec<HistoryItem<'a>> {
    entries
        .iter()
        .map(|e| HistoryItem { id: &e.entry_id, role: &e.role, output: &e.output })
        .collect()
}

fn charge(completion: &Completion, system: &str, user: &str) -> (u64, u64) {
    match completion.usage {
        Some(u) => (u.prompt_tokens, u.completion_tokens),
        None => (count_tokens(system) + count_tokens(user), count_tokens(&completion.text)),
    }
}

struct Decision {
    completion: Completion,
    prompt_tokens: u64,
    completion_tokens: u64,
}

fn decide(
    transcript: &[DialogueEntry],
    task: &TaskSpec,
    profile: &AgentProfile,
    backend: &dyn AgentBackend,
    round: usize,
    seed: u64,
) -> Result<Decision, OrchestratorError> {
    if transcript.is_empty() {
        return Err(OrchestratorError::EmptyTranscript);
    }
    let all: Vec<&DialogueEntry> = transcript.iter().collect();
    let system = render_system_prompt(profile, &task.task_text);
    let user = render_user_prompt(history_items(&all));
    let request = AgentRequest {
        agent_id: None,
        role: &profile.role,
        round,
        system_prompt: &system,
        user_prompt: &user,
        task,
        history: &all,
        seed,
    };
    let completion = backend.complete(&request).map_err(|e| OrchestratorError::RunAborted {
        reason: format!("decision agent: {e}"),
        partial: transcript.to_vec(),
    })?;
    let (prompt_tokens, completion_tokens) = charge(&completion, &system, &user);
    Ok(Decision { completion, prompt_tokens, completion_tokens })
}

/// Prompts the decision agent with the task and full transcript and returns
/// its output verbatim.
pub fn decision_aggregate(
    transcript: &[DialogueEntry],
    task: &TaskSpec,
    decision_backend: &dyn AgentBackend,
) -> Result<String, OrchestratorError> {
    let profile = AgentProfile::decision_maker("");
    let round = transcript.iter().map(|e| e.round).max().unwrap_or(1);
    Ok(decide(transcript, task, &profile, decision_backend, round, 0)?.completion.text)
}

pub fn run_topology(
    topology: &CommTopology,
    task: &TaskSpec,
    pool: &AgentPool,
    backends: &BackendSet,
    cfg: &RunConfig,
) -> Result<RunResult, OrchestratorError> {
    let active: Vec<usize> = topology.mask().members();
    if active.len() < 2 {
        return Err(OrchestratorError::DegenerateTopology { active: active.len() });
    }
    if pool.n_max() != topology.n_max() {
        return Err(OrchestratorError::PoolMismatch { pool: pool.n_max(), topology: topology.n_max() });
    }
    let adj = binarize(topology.weights(), cfg.theta);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used_ids = HashSet::new();
    let mut transcript: Vec<DialogueEntry> = Vec::new();
    let mut per_agent: BTreeMap<usize, u64> = active.iter().map(|&i| (i, 0)).collect();

    for round in 1..=cfg.k {
        for &id in &active {
            let profile = pool.get(id).expect("active ids are below n_max");
            let visible = visible_history(&transcript, id, &adj, topology.weights());
            let system = render_system_prompt(profile, &task.task_text);
            let user = render_user_prompt(history_items(&visible));
            let seed = rng.next_u64();
            let request = AgentRequest {
                agent_id: Some(id),
                role: &profile.role,
                round,
                system_prompt: &system,
                user_prompt: &user,
                task,
                history: &visible,
                seed,
            };
            let completion = match backends.for_agent(id).complete(&request) {
                Ok(c) => c,
                Err(e) => {
                    return Err(OrchestratorError::RunAborted {
                        reason: format!("agent {id} in round {round}: {e}"),
                        partial: transcript,
                    })
                }
            };
            let (prompt_tokens, completion_tokens) = charge(&completion, &system, &user);
            *per_agent.get_mut(&id).expect("active agent") += prompt_tokens + completion_tokens;
            transcript.push(DialogueEntry {
                entry_id: fresh_entry_id(&mut rng, &mut used_ids),
                round,
                agent_id: Some(id),
                role: profile.role.clone(),
                output: completion.text,
                prompt_tokens,
                completion_tokens,
            });
        }
    }

    let decision_profile = AgentProfile::decision_maker("");
    let seed = rng.next_u64();
    let decision = decide(&transcript, task, &decision_profile, backends.decision(), cfg.k.max(1), seed)?;
    let decision_tokens = decision.prompt_tokens + decision.completion_tokens;
    transcript.push(DialogueEntry {
        entry_id: fresh_entry_id(&mut rng, &mut used_ids),
        round: cfg.k.max(1),
        agent_id: None,
        role: decision_profile.role.clone(),
        output: decision.completion.text.clone(),
        prompt_tokens: decision.prompt_tokens,
        completion_tokens: decision.completion_tokens,
    });
    let total_tokens = per_agent.values().sum::<u64>() + decision_tokens;
    Ok(RunResult {
        answer: decision.completion.text,
        transcript,
        total_tokens,
        per_agent_tokens: per_agent,
        decision_tokens,
        topology_used: topology.clone(),
    })
}

/// Scores a sampled team by running it as a complete graph and checking the
/// decision agent's answer.
pub struct OrchestratorEvaluator<'a> {
    pub pool: &'a AgentPool,
    pub backends: &'a BackendSet,
    pub cfg: RunConfig,
}

impl Evaluator for OrchestratorEvaluator<'_> {
    fn evaluate(&self, graph: &SampledGraph, task: &TaskSpec) -> Result<Vec<f64>, CollectError> {
        let (weights, mask) = lift_subgraph(&graph.topology(), graph.members(), self.pool.n_max())?;
        let topology = CommTopology::new(mask, weights)?;
        let run = run_topology(&topology, task, self.pool, self.backends, &self.cfg)
            .map_err(|e| CollectError::ScoreUnavailable(e.to_string()))?;
        Ok(vec![if task.is_correct(&run.answer) { 1.0 } else { 0.0 }])
    }
}

/// The complete graph over every agent in `mask`.
pub fn complete_on(mask: &NodeMask) -> Result<CommTopology, GraphError> {
    let members = mask.members();
    let (w, m) = lift_subgraph(&Topology::complete(members.len()), &members, mask.n())?;
    CommTopology::new(m, w)
}
