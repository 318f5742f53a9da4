//! Prompt templates with `{{name}}` placeholders and the builders for the
//! four prompt kinds.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::{Location, Scenario, OPTIONS_PER_SCENARIO};
use crate::model::{Action, Capability, Need, SatMatrix};

const CHOICE_BODY: &str = include_str!("templates/choice.txt");
const SAT_UPDATE_BODY: &str = include_str!("templates/sat_update.txt");
const SCENARIO_GENERATION_BODY: &str = include_str!("templates/scenario_generation.txt");

const ROLE: &str = "Act as an expert policymaker.";
const TOP_CHOICE_GOAL: &str =
    "Your goal is to study the decision scenario and to propose your top policy among the policy choices.";
const RANKING_GOAL: &str = "Your goal is to study the decision scenario and to propose an ordered ranking of the provided policy choices, from most preferred to least preferred.";
const TOP_CHOICE_ANSWER: &str = "Start with the policy choice number wrapped in squared brackets (e.g., [1], [2], [3], [4]) based on your analysis.";
const RANKING_ANSWER: &str = "Start with all policy choice numbers, each wrapped in squared brackets, from most preferred to least preferred (e.g., [2] > [4] > [1] > [3]) based on your analysis.";
const TOP_CHOICE_JUSTIFICATION: &str = "Briefly explain why you chose the selected option.";
const RANKING_JUSTIFICATION: &str = "Briefly explain why you ordered the options this way.";

/// Upper bound on each reasoning step when constrained reasoning is on.
pub const REASONING_STEP_CHARS: usize = 150;

const CONSTRAINED_STEPS: [&str; 4] = [
    "Step 1: the most urgent need in the context.",
    "Step 2: which options address that need and for whom.",
    "Step 3: the main trade-off between those options.",
    "Step 4: why the trade-off favours your answer.",
];

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").expect("valid regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    TopChoice,
    Ranking,
    SatUpdate,
    ScenarioGeneration,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("unresolved placeholders: {}", .0.join(", "))]
    Unresolved(Vec<String>),
    #[error("malformed scenario `{id}`: {}", .problems.join("; "))]
    MalformedScenario { id: String, problems: Vec<String> },
    #[error("policy text is empty")]
    EmptyPolicy,
    #[error("scenario count must be at least 1")]
    ZeroCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub body: String,
    /// Adds the location sentence to the task instruction.
    pub context_emphasis: Option<Location>,
    /// Asks for a four-step justification with short steps.
    pub constrained_reasoning: bool,
}

impl PromptTemplate {
    pub fn new(kind: PromptKind) -> PromptTemplate {
        let body = match kind {
            PromptKind::TopChoice | PromptKind::Ranking => CHOICE_BODY,
            PromptKind::SatUpdate => SAT_UPDATE_BODY,
            PromptKind::ScenarioGeneration => SCENARIO_GENERATION_BODY,
        };
        PromptTemplate { kind, body: body.to_string(), context_emphasis: None, constrained_reasoning: false }
    }

    pub fn with_emphasis(mut self, location: Option<Location>) -> Self {
        self.context_emphasis = location;
        self
    }

    pub fn with_constrained_reasoning(mut self, on: bool) -> Self {
        self.constrained_reasoning = on;
        self
    }

    /// Placeholder names used by the body.
    pub fn placeholders(&self) -> BTreeSet<String> {
        PLACEHOLDER.captures_iter(&self.body).map(|c| c[1].to_string()).collect()
    }

    /// Substitutes every placeholder in one pass. Substituted text is not
    /// rescanned, so values may themselves contain braces.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let missing: Vec<String> = self.placeholders().into_iter().filter(|p| !vars.contains_key(p.as_str())).collect();
        if !missing.is_empty() {
            return Err(PromptError::Unresolved(missing));
        }
        Ok(PLACEHOLDER.replace_all(&self.body, |c: &Captures| vars[&c[1]].clone()).into_owned())
    }

    fn task_instruction(&self) -> String {
        let goal = match self.kind {
            PromptKind::Ranking => RANKING_GOAL,
            _ => TOP_CHOICE_GOAL,
        };
        let mut out = format!("{ROLE} {goal}");
        if let Some(sentence) = self.context_emphasis.and_then(emphasis_sentence) {
            out.push(' ');
            out.push_str(&sentence);
        }
        out
    }

    fn justification_format(&self) -> String {
        let base = match self.kind {
            PromptKind::Ranking => RANKING_JUSTIFICATION,
            _ => TOP_CHOICE_JUSTIFICATION,
        };
        if !self.constrained_reasoning {
            return base.to_string();
        }
        let mut out =
            format!("{base} Reason in exactly four numbered steps, each under {REASONING_STEP_CHARS} characters:");
        for step in CONSTRAINED_STEPS {
            out.push_str("\n     ");
            out.push_str(step);
        }
        out
    }

    /// Renders a top-choice or ranking prompt for one scenario.
    pub fn render_scenario(&self, scenario: &Scenario) -> Result<String, PromptError> {
        check_scenario(scenario)?;
        let answer = match self.kind {
            PromptKind::Ranking => RANKING_ANSWER,
            _ => TOP_CHOICE_ANSWER,
        };
        let options = scenario
            .options
            .iter()
            .map(|o| format!("{}: {}\n{}", o.index, o.title.trim(), o.description.trim()))
            .collect::<Vec<_>>()
            .join("\n");
        let vars = BTreeMap::from([
            ("task_instruction", self.task_instruction()),
            ("answer_format", answer.to_string()),
            ("justification_format", self.justification_format()),
            ("title", scenario.title.trim().to_string()),
            ("context", scenario.context.trim().to_string()),
            ("options", options),
        ]);
        self.render(&vars)
    }
}

/// The location sentence appended to the task instruction. `None` for
/// scenarios with no city.
pub fn emphasis_sentence(location: Location) -> Option<String> {
    let country = location.country()?;
    Some(format!(
        "This decision scenario is set in the city of {} in {country}. Please try to take the location into account for your analysis.",
        location.display_name()
    ))
}

fn check_scenario(scenario: &Scenario) -> Result<(), PromptError> {
    let mut problems = Vec::new();
    if scenario.title.trim().is_empty() {
        problems.push("empty title".to_string());
    }
    if scenario.context.trim().is_empty() {
        problems.push("empty context".to_string());
    }
    if scenario.options.len() != OPTIONS_PER_SCENARIO {
        problems.push(format!("{} options (expected {OPTIONS_PER_SCENARIO})", scenario.options.len()));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(PromptError::MalformedScenario { id: scenario.id.clone(), problems })
    }
}

pub fn build_top_choice_prompt(scenario: &Scenario, emphasis: Option<Location>) -> Result<String, PromptError> {
    PromptTemplate::new(PromptKind::TopChoice).with_emphasis(emphasis).render_scenario(scenario)
}

pub fn build_ranking_prompt(scenario: &Scenario, emphasis: Option<Location>) -> Result<String, PromptError> {
    PromptTemplate::new(PromptKind::Ranking).with_emphasis(emphasis).render_scenario(scenario)
}

fn quoted_list(names: &[&str]) -> String {
    names.iter().map(|n| format!("\"{n}\"")).collect::<Vec<_>>().join(", ")
}

fn capability_list() -> String {
    Capability::ALL.iter().map(|c| format!("{}. {}", c.id(), c.name())).collect::<Vec<_>>().join("\n")
}

pub fn build_sat_update_prompt(policy_text: &str, base: &SatMatrix) -> Result<String, PromptError> {
    if policy_text.trim().is_empty() {
        return Err(PromptError::EmptyPolicy);
    }
    let vars = BTreeMap::from([
        ("matrix_json", base.to_pretty_json()),
        ("policy", policy_text.trim().to_string()),
        ("action_names", quoted_list(&Action::NAMES)),
        ("need_names", quoted_list(&Need::NAMES)),
        ("capability_list", capability_list()),
    ]);
    PromptTemplate::new(PromptKind::SatUpdate).render(&vars)
}

/// Prompt asking for `count` new scenarios at `location`. Titles in `avoid`
/// are listed so the model does not repeat them.
pub fn build_scenario_generation_prompt(
    location: Location,
    count: usize,
    avoid: &[String],
) -> Result<String, PromptError> {
    if count == 0 {
        return Err(PromptError::ZeroCount);
    }
    let place = match location.country() {
        Some(country) => format!("{}, {country}", location.display_name()),
        None => "a generic city, with no place-specific details".to_string(),
    };
    let avoid_titles = if avoid.is_empty() {
        String::new()
    } else {
        let mut s = String::from("\nDo not reuse these existing titles:\n");
        for t in avoid {
            s.push_str("- ");
            s.push_str(t);
            s.push('\n');
        }
        s
    };
    let vars = BTreeMap::from([
        ("place", place),
        ("count", count.to_string()),
        ("capability_list", capability_list()),
        ("avoid_titles", avoid_titles),
        ("location", location.display_name().to_string()),
    ]);
    PromptTemplate::new(PromptKind::ScenarioGeneration).render(&vars)
}
