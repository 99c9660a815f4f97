//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{AgentBackend, AgentRequest, BackendError, Completion, Usage};

pub const DEFAULT_API_KEY_ENV: &str = "AGP_API_KEY";
pub const DEFAULT_CHAT_ENDPOINT_ENV: &str = "AGP_CHAT_ENDPOINT";

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 2],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

pub struct ChatBackend {
    endpoint: String,
    model: String,
    api_key: String,
    pub temperature: f64,
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
    agent: ureq::Agent,
}

impl ChatBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            temperature: 1.0,
            attempts: 3,
            backoff: Duration::from_secs(1),
            agent,
        }
    }

    /// Reads the API key from `key_var`. An unset or empty variable is a
    /// credentials error.
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>, key_var: &str) -> Result<Self, BackendError> {
        match std::env::var(key_var) {
            Ok(key) if !key.trim().is_empty() => Ok(Self::new(endpoint, model, key)),
            _ => Err(BackendError::CredentialsMissing(format!("environment variable {key_var} is not set"))),
        }
    }

    fn call_once(&self, system: &str, user: &str) -> Result<Completion, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [Message { role: "system", content: system }, Message { role: "user", content: user }],
            temperature: self.temperature,
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Status { status, body });
        }
        let parsed: ChatResponse =
            resp.body_mut().read_json().map_err(|e| BackendError::Malformed(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Malformed("no choices in response".into()))?;
        let usage = parsed
            .usage
            .map(|u| Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens });
        Ok(Completion { text, usage })
    }
}

impl AgentBackend for ChatBackend {
    fn complete(&self, request: &AgentRequest<'_>) -> Result<Completion, BackendError> {
        let mut delay = self.backoff;
        let mut attempt = 1;
        loop {
            match self.call_once(request.system_prompt, request.user_prompt) {
                Ok(c) => return Ok(c),
                Err(e) if e.is_retryable() && attempt < self.attempts => {
                    log::warn!("chat call failed (attempt {attempt}/{}): {e}", self.attempts);
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
