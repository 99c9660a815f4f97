//! Planted task suites: each category has a known best team, so every stage
//! of the pipeline can be checked without a live model.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::collector::{CollectError, Evaluator, SampledGraph};
use crate::orchestrator::{AgentBackend, AgentRequest, BackendError, Completion};
use crate::task::{AnswerCheck, TaskCategory, TaskSpec};

/// Answer every non-expert gives.
pub const DECOY_ANSWER: &str = "none";

/// Category to team. Ids refer to the default roster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedTeams {
    teams: BTreeMap<TaskCategory, Vec<usize>>,
}

impl Default for PlantedTeams {
    fn default() -> Self {
        let mut teams = BTreeMap::new();
        // Knowledgeable Expert, Critic, Historian
        teams.insert(TaskCategory::GeneralReasoning, vec![0, 1, 3]);
        // Math Solver, Mathematical Analyst, Inspector
        teams.insert(TaskCategory::MathReasoning, vec![11, 12, 14]);
        // Algorithm Designer, Bug Fixer, Programming Expert
        teams.insert(TaskCategory::CodeGeneration, vec![8, 10, 13]);
        Self { teams }
    }
}

impl PlantedTeams {
    pub fn new(teams: BTreeMap<TaskCategory, Vec<usize>>) -> Self {
        let teams = teams
            .into_iter()
            .map(|(c, mut t)| {
                t.sort_unstable();
                t.dedup();
                (c, t)
            })
            .collect();
        Self { teams }
    }

    pub fn team(&self, category: TaskCategory) -> &[usize] {
        self.teams.get(&category).map_or(&[], Vec::as_slice)
    }

    pub fn is_expert(&self, category: TaskCategory, agent: usize) -> bool {
        self.team(category).contains(&agent)
    }
}

/// Utility 1 when the team contains the planted set, otherwise the covered
/// fraction of it.
#[derive(Debug, Clone, Default)]
pub struct PlantedEvaluator {
    pub teams: PlantedTeams,
}

impl Evaluator for PlantedEvaluator {
    fn evaluate(&self, graph: &SampledGraph, task: &TaskSpec) -> Result<Vec<f64>, CollectError> {
        let team = self.teams.team(task.category);
        if team.is_empty() {
            return Err(CollectError::ScoreUnavailable(format!("no planted team for {}", task.category)));
        }
        let hit = team.iter().filter(|&&a| graph.contains(a)).count();
        Ok(vec![hit as f64 / team.len() as f64])
    }
}

/// Experts answer correctly, everyone else gives [`DECOY_ANSWER`]. Pure.
#[derive(Debug, Clone, Default)]
pub struct PlantedBackend {
    pub teams: PlantedTeams,
}

pub fn planted_output(role: &str, task_text: &str, answer: &str) -> String {
    format!("In my opinion, I think the {role} view settles it. And my answer to the {task_text} is {answer}.")
}

impl AgentBackend for PlantedBackend {
    fn complete(&self, request: &AgentRequest<'_>) -> Result<Completion, BackendError> {
        let id = request.agent_id.ok_or_else(|| BackendError::Other("planted backend serves pool agents only".into()))?;
        let answer = if self.teams.is_expert(request.task.category, id) {
            request.task.expected_answer.as_str()
        } else {
            DECOY_ANSWER
        };
        Ok(Completion::text(planted_output(request.role, &request.task.task_text, answer)))
    }
}

/// Splits `total` in the 200 : 100 : 160 ratio (general, math, code).
pub fn ratio_counts(total: usize) -> [usize; 3] {
    let general = (total as f64 * 200.0 / 460.0).round() as usize;
    let math = (total as f64 * 100.0 / 460.0).round() as usize;
    let code = total.saturating_sub(general + math);
    [general, math, code]
}

const PLACES: &[&str] = &[
    "Carthage", "Venice", "Kyoto", "Byzantium", "Timbuktu", "Lisbon", "Samarkand", "Athens", "Cusco", "Delhi",
    "Antwerp", "Novgorod",
];
const TOPICS: &[&str] = &[
    "trade routes", "city walls", "harbour tolls", "guild charters", "grain stores", "river crossings",
    "coin debasement", "merchant law", "printing presses", "tax farming",
];
const NAMES: &[&str] = &["Ada", "Bram", "Chloe", "Dmitri", "Esme", "Farid", "Greta", "Hiro", "Ines", "Jonas"];
const ITEMS: &[&str] = &["apples", "marbles", "tickets", "stamps", "pencils", "coins", "books", "shells"];
const CODE_TASKS: &[(&str, &str)] = &[
    ("returns the n-th Fibonacci number", "fib"),
    ("reverses the words of a sentence", "reverse_words"),
    ("checks whether a string is a palindrome", "is_palindrome"),
    ("merges two sorted lists", "merge_sorted"),
    ("counts the vowels in a string", "count_vowels"),
    ("returns the greatest common divisor of two integers", "gcd"),
    ("flattens a nested list", "flatten"),
    ("removes duplicates while keeping order", "dedupe"),
    ("computes the running sum of a list", "running_sum"),
    ("rotates a list by k positions", "rotate"),
];

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn general_task<R: Rng + ?Sized>(rng: &mut R) -> (String, String) {
    let a = pick(rng, PLACES);
    let mut b = pick(rng, PLACES);
    while b == a {
        b = pick(rng, PLACES);
    }
    let topic = pick(rng, TOPICS);
    let text = match rng.random_range(0..3) {
        0 => format!("Which city relied more on {topic} in its early history, {a} or {b}?"),
        1 => format!("Compare how {a} and {b} organised their {topic}; which one was earlier?"),
        _ => format!("Historians debate whether {a} or {b} first regulated {topic}. Which was it?"),
    };
    let answer = if rng.random_bool(0.5) { a } else { b };
    (text, answer.to_string())
}

fn math_task<R: Rng + ?Sized>(rng: &mut R) -> (String, String) {
    let name = pick(rng, NAMES);
    let item = pick(rng, ITEMS);
    let x: i64 = rng.random_range(3..60);
    let y: i64 = rng.random_range(2..12);
    let z: i64 = rng.random_range(1..30);
    match rng.random_range(0..3) {
        0 => (format!("{name} has {x} {item} and buys {y} packs of {z}. How many {item} does {name} have now?"), (x + y * z).to_string()),
        1 => (format!("Compute {x} times {y} minus {z}, then state the integer result."), (x * y - z).to_string()),
        _ => (
            format!("{name} shares {} {item} equally among {y} friends and keeps the rest. How many does each friend get?", x * y + z % y),
            x.to_string(),
        ),
    }
}

fn code_task<R: Rng + ?Sized>(rng: &mut R) -> (String, String) {
    let (what, name) = CODE_TASKS[rng.random_range(0..CODE_TASKS.len())];
    let text = match rng.random_range(0..3) {
        0 => format!("Write a Python function `{name}` that {what}."),
        1 => format!("Implement {name}(...) in Python: a function that {what}, with tests for edge cases."),
        _ => format!("Fix and complete the Python code for a function that {what}; name it {name}."),
    };
    (text, name.to_string())
}

/// Generates `counts[c]` tasks per category (general, math, code). Task ids are
/// `{prefix}-{category}-{index}`.
pub fn generate_tasks(counts: [usize; 3], seed: u64, prefix: &str) -> Vec<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (category, &count) in TaskCategory::ALL.iter().zip(&counts) {
        for k in 0..count {
            let (task_text, expected_answer, check) = match category {
                TaskCategory::GeneralReasoning => {
                    let (t, a) = general_task(&mut rng);
                    (t, a, AnswerCheck::Exact)
                }
                TaskCategory::MathReasoning => {
                    let (t, a) = math_task(&mut rng);
                    (t, a, AnswerCheck::Numeric { tolerance: 1e-6 })
                }
                TaskCategory::CodeGeneration => {
                    let (t, a) = code_task(&mut rng);
                    (t, a, AnswerCheck::Contains)
                }
            };
            out.push(TaskSpec {
                task_id: format!("{prefix}-{}-{k:03}", category.as_str()),
                task_text,
                category: *category,
                expected_answer,
                check,
            });
        }
    }
    out
}

pub fn tasks_to_jsonl(tasks: &[TaskSpec]) -> String {
    tasks.iter().map(|t| serde_json::to_string(t).expect("task serializes") + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::score_graph;

    #[test]
    fn ratio_split() {
        assert_eq!(ratio_counts(460), [200, 100, 160]);
        assert_eq!(ratio_counts(46), [20, 10, 16]);
        assert_eq!(ratio_counts(10).iter().sum::<usize>(), 10);
    }

    #[test]
    fn generator_is_deterministic_and_answers_check() {
        let a = generate_tasks([4, 4, 4], 5, "s");
        assert_eq!(a, generate_tasks([4, 4, 4], 5, "s"));
        assert_eq!(a.len(), 12);
        for t in &a {
            assert!(t.is_correct(&t.expected_answer), "{t:?}");
            assert!(!t.is_correct(DECOY_ANSWER), "{t:?}");
        }
        let b = generate_tasks([4, 4, 4], 6, "s");
        assert_ne!(a, b);
    }

    #[test]
    fn evaluator_scores_coverage() {
        let ev = PlantedEvaluator::default();
        let task = &generate_tasks([0, 1, 0], 0, "m")[0];
        let g = |m: Vec<usize>| SampledGraph::new(m).unwrap();
        assert_eq!(score_graph(&g(vec![11, 12, 14]), task, &ev).unwrap(), 1.0);
        assert_eq!(score_graph(&g(vec![2, 11, 12, 14, 9]), task, &ev).unwrap(), 1.0);
        assert!((score_graph(&g(vec![11, 3]), task, &ev).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(score_graph(&g(vec![0, 1]), task, &ev).unwrap(), 0.0);
    }

    #[test]
    fn planted_output_round_trips_through_extraction() {
        let text = planted_output("Critic", "Is 2 > 1?", "yes");
        assert_eq!(crate::orchestrator::extract_answer(&text, "Is 2 > 1?"), "yes");
    }
}
