//! The anchored agent roster and prompt rendering.
//!
//! Agents are pinned to ids `0..n_max` so every mined or designed graph shares
//! one reference frame. Profiles are immutable configuration; per-run dialogue
//! state lives in the orchestrator.

use serde::{Deserialize, Serialize};

/// Fixed lead-in of every user prompt; the dialogue JSON follows directly.
pub const USER_PROMPT_PREFIX: &str =
    "At the same time, there are the following responses to the same question for your reference: ";

/// Appendix system prompt layout.
pub const DEFAULT_SYSTEM_TEMPLATE: &str =
    "<Profile>. And your task is to solve the question: <Task>. ";

/// Roster shipped with the crate: 15 heterogeneous roles, ids 0..14.
pub const DEFAULT_POOL_JSONL: &str = include_str!("../data/default_pool.jsonl");

#[derive(Debug, thiserror::Error)]
pub enum PoolError {
    #[error("agent ids are not anchored to 0..{n}: {detail}")]
    AnchoringError { n: usize, detail: String },
    #[error("malformed profile file: {0}")]
    FormatError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: usize,
    pub role: String,
    pub expertise: String,
    #[serde(default)]
    pub backbone: String,
    #[serde(default)]
    pub tools: Vec<String>,
    #[serde(default = "default_template")]
    pub system_template: String,
    /// Persona text filling the `<Profile>` slot. Derived from role and
    /// expertise when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
}

fn default_template() -> String {
    DEFAULT_SYSTEM_TEMPLATE.to_string()
}

impl AgentProfile {
    pub fn profile_text(&self) -> String {
        match &self.profile {
            Some(p) => p.clone(),
            None => format!("You are the {}. Your duty: {}", self.role, self.expertise),
        }
    }

    /// Text fed to the embedding backend for this agent's node.
    pub fn embedding_text(&self) -> String {
        format!("{} {}", self.role, self.expertise)
    }

    /// The aggregating agent. It sits outside the graph and is never pruned.
    pub fn decision_maker(backbone: &str) -> Self {
        Self {
            id: usize::MAX,
            role: "Decision Maker".into(),
            expertise: "Aggregate the dialogue history into one final answer".into(),
            backbone: backbone.into(),
            tools: Vec::new(),
            system_template: default_template(),
            profile: Some(
                "You are the Decision Maker. Read every response in the dialogue history and \
                 give the single final answer"
                    .into(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPool {
    agents: Vec<AgentProfile>,
}

impl AgentPool {
    pub fn new(mut agents: Vec<AgentProfile>) -> Result<Self, PoolError> {
        if agents.is_empty() {
            return Err(PoolError::FormatError("no agent profiles".into()));
        }
        agents.sort_by_key(|a| a.id);
        let n = agents.len();
        for (pos, agent) in agents.iter().enumerate() {
            if agent.id != pos {
                let detail = if pos > 0 && agents[pos - 1].id == agent.id {
                    format!("duplicate id {}", agent.id)
                } else {
                    format!("expected id {pos}, found {}", agent.id)
                };
                return Err(PoolError::AnchoringError { n, detail });
            }
            if agent.role.trim().is_empty() {
                return Err(PoolError::FormatError(format!("agent {} has an empty role", agent.id)));
            }
        }
        Ok(Self { agents })
    }

    pub fn default_roster() -> Self {
        load_pool(DEFAULT_POOL_JSONL.as_bytes()).expect("shipped roster is valid")
    }

    pub fn n_max(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[AgentProfile] {
        &self.agents
    }

    pub fn get(&self, id: usize) -> Option<&AgentProfile> {
        self.agents.get(id)
    }

    pub fn roles(&self) -> Vec<String> {
        self.agents.iter().map(|a| a.role.clone()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for a in &self.agents {
            out.push_str(&serde_json::to_string(a).expect("profile serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parses a JSONL profile file into an anchored pool.
pub fn load_pool(source: &[u8]) -> Result<AgentPool, PoolError> {
    let text = std::str::from_utf8(source).map_err(|e| PoolError::FormatError(e.to_string()))?;
    let agents = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(no, line)| {
            serde_json::from_str::<AgentProfile>(line)
                .map_err(|e| PoolError::FormatError(format!("line {}: {e}", no + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    AgentPool::new(agents)
}

/// Fills the `<Profile>` and `<Task>` slots in one pass, so slot markers inside
/// the filled text are left alone.
fn fill_slots(template: &str, profile: &str, task: &str) -> String {
    let mut out = String::with_capacity(template.len() + profile.len() + task.len());
    let mut rest = template;
    loop {
        let next_profile = rest.find("<Profile>");
        let next_task = rest.find("<Task>");
        let (idx, slot_len, fill) = match (next_profile, next_task) {
            (Some(p), Some(t)) if p < t => (p, "<Profile>".len(), profile),
            (Some(p), None) => (p, "<Profile>".len(), profile),
            (_, Some(t)) => (t, "<Task>".len(), task),
            (None, None) => break,
        };
        out.push_str(&rest[..idx]);
        out.push_str(fill);
        rest = &rest[idx + slot_len..];
    }
    out.push_str(rest);
    out
}

pub fn render_system_prompt(profile: &AgentProfile, task: &str) -> String {
    let text = profile.profile_text();
    if text.is_empty() {
        log::warn!("agent {} renders with an empty profile", profile.id);
    }
    fill_slots(&profile.system_template, &text, task)
}

/// One element of the dialogue history JSON, in the appendix field order.
#[derive(Debug, Clone, Serialize)]
pub struct HistoryItem<'a> {
    pub id: &'a str,
    pub role: &'a str,
    pub output: &'a str,
}

pub fn render_user_prompt<'a, I>(history: I) -> String
where
    I: IntoIterator<Item = HistoryItem<'a>>,
{
    let items: Vec<HistoryItem<'a>> = history.into_iter().collect();
    let json = serde_json::to_string(&items).expect("history serializes");
    format!("{USER_PROMPT_PREFIX}{json}")
}
