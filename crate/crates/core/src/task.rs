//! Task descriptions shared by the collector, orchestrator and bench harness.

use serde::{Deserialize, Serialize};

/// Task family a query or supervision pair belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    GeneralReasoning,
    MathReasoning,
    CodeGeneration,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 3] = [
        TaskCategory::GeneralReasoning,
        TaskCategory::MathReasoning,
        TaskCategory::CodeGeneration,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            TaskCategory::GeneralReasoning => "general_reasoning",
            TaskCategory::MathReasoning => "math_reasoning",
            TaskCategory::CodeGeneration => "code_generation",
        }
    }

    pub const fn index(self) -> usize {
        match self {
            TaskCategory::GeneralReasoning => 0,
            TaskCategory::MathReasoning => 1,
            TaskCategory::CodeGeneration => 2,
        }
    }
}

impl std::fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rule deciding whether an answer matches the expected one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnswerCheck {
    /// Trimmed strings compare equal.
    #[default]
    Exact,
    /// The last number in the answer is within `tolerance` of the expected value.
    Numeric { tolerance: f64 },
    /// The answer contains the expected string, ignoring ASCII case.
    Contains,
}

impl AnswerCheck {
    pub fn matches(&self, answer: &str, expected: &str) -> bool {
        match *self {
            AnswerCheck::Exact => answer.trim() == expected.trim(),
            AnswerCheck::Contains => answer
                .to_ascii_lowercase()
                .contains(&expected.trim().to_ascii_lowercase()),
            AnswerCheck::Numeric { tolerance } => {
                match (last_number(answer), expected.trim().parse::<f64>()) {
                    (Some(got), Ok(want)) => (got - want).abs() <= tolerance,
                    _ => false,
                }
            }
        }
    }
}

fn last_number(text: &str) -> Option<f64> {
    let mut best = None;
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        if bytes[i] == b'-' || bytes[i].is_ascii_digit() {
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            let token = text[start..i].trim_end_matches('.');
            if let Ok(v) = token.parse::<f64>() {
                best = Some(v);
            }
        } else {
            i += 1;
        }
    }
    best
}

/// One task the agent team must solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub task_text: String,
    pub category: TaskCategory,
    pub expected_answer: String,
    #[serde(default)]
    pub check: AnswerCheck,
}

impl TaskSpec {
    pub fn is_correct(&self, answer: &str) -> bool {
        self.check.matches(answer, &self.expected_answer)
    }
}

/// Parses a JSONL task file, skipping blank lines.
pub fn parse_tasks(text: &str) -> Result<Vec<TaskSpec>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
