use std::collections::BTreeMap;
use std::sync::Arc;

use super::DialogueEntry;
use crate::task::TaskSpec;

/// Token usage reported by a backend. Overrides the whitespace fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), usage: None }
    }
}

/// Everything a backend may look at for one call.
#[derive(Debug, Clone, Copy)]
pub struct AgentRequest<'a> {
    /// `None` for the decision agent.
    pub agent_id: Option<usize>,
    pub role: &'a str,
    pub round: usize,
    pub system_prompt: &'a str,
    pub user_prompt: &'a str,
    pub task: &'a TaskSpec,
    /// The entries rendered into `user_prompt`, in prompt order.
    pub history: &'a [&'a DialogueEntry],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("credentials missing: {0}")]
    CredentialsMissing(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("{0}")]
    Other(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Transport(_) => true,
            _ => false,
        }
    }
}

pub trait AgentBackend: Send + Sync {
    fn complete(&self, request: &AgentRequest<'_>) -> Result<Completion, BackendError>;
}

impl<B: AgentBackend + ?Sized> AgentBackend for Arc<B> {
    fn complete(&self, request: &AgentRequest<'_>) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

/// Which backend serves which agent; the decision agent has its own slot.
#[derive(Clone)]
pub struct BackendSet {
    default: Arc<dyn AgentBackend>,
    overrides: BTreeMap<usize, Arc<dyn AgentBackend>>,
    decision: Arc<dyn AgentBackend>,
}

impl BackendSet {
    pub fn new(agents: Arc<dyn AgentBackend>, decision: Arc<dyn AgentBackend>) -> Self {
        Self { default: agents, overrides: BTreeMap::new(), decision }
    }

    pub fn with_agent(mut self, id: usize, backend: Arc<dyn AgentBackend>) -> Self {
        self.overrides.insert(id, backend);
        self
    }

    pub fn for_agent(&self, id: usize) -> &dyn AgentBackend {
        self.overrides.get(&id).unwrap_or(&self.default).as_ref()
    }

    pub fn decision(&self) -> &dyn AgentBackend {
        self.decision.as_ref()
    }
}

/// Repeats the task with the agent's role. Pure.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

impl AgentBackend for EchoBackend {
    fn complete(&self, request: &AgentRequest<'_>) -> Result<Completion, BackendError> {
        Ok(Completion::text(format!(
            "{} (round {}) considered: {}",
            request.role, request.round, request.task.task_text
        )))
    }
}

/// Pulls the final answer out of an agent output. Outputs of the form
/// `... And my answer to the <task> is <answer>.` yield `<answer>`; anything
/// else is taken whole.
pub fn extract_answer(output: &str, task_text: &str) -> String {
    let marker = format!("And my answer to the {task_text} is ");
    let tail = match output.rfind(&marker) {
        Some(pos) => &output[pos + marker.len()..],
        None => match output.rfind("And my answer to the ").and_then(|p| output[p..].rfind(" is ").map(|q| p + q)) {
            Some(pos) => &output[pos + 4..],
            None => output,
        },
    };
    let t = tail.trim();
    t.strip_suffix('.').unwrap_or(t).trim().to_string()
}

/// Decision mock: majority vote over the answers in the history. Ties go to
/// the answer that appeared first.
#[derive(Debug, Clone, Copy, Default)]
pub struct MajorityDecision;

pub fn majority_answer<'a, I: IntoIterator<Item = &'a str>>(answers: I) -> Option<String> {
    let mut counts: Vec<(String, usize)> = Vec::new();
    for a in answers {
        match counts.iter_mut().find(|(s, _)| s == a) {
            Some((_, c)) => *c += 1,
            None => counts.push((a.to_string(), 1)),
        }
    }
    let best = counts.iter().map(|(_, c)| *c).max()?;
    counts.into_iter().find(|(_, c)| *c == best).map(|(s, _)| s)
}

impl AgentBackend for MajorityDecision {
    fn complete(&self, request: &AgentRequest<'_>) -> Result<Completion, BackendError> {
        let answers: Vec<String> =
            request.history.iter().map(|e| extract_answer(&e.output, &request.task.task_text)).collect();
        majority_answer(answers.iter().map(String::as_str))
            .map(Completion::text)
            .ok_or_else(|| BackendError::Other("empty transcript".into()))
    }
}
