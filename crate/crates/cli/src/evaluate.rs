//! `evaluate`: ask a model for a top choice or ranking on every scenario.

use std::path::{Path, PathBuf};

use anyhow::Result;
use capsim::benchmark::{Benchmark, Ranking};
use capsim::llm::{parse_ranking, parse_top_choice, CompletionRequest, LlmClient, PromptKind, PromptTemplate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{write_atomic, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Top,
    Rank,
}

/// One model's (or annotator's) answers, keyed by scenario id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub label: String,
    pub task: Task,
    pub entries: Vec<Selection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub scenario_id: String,
    pub choice: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Ranking>,
    #[serde(default)]
    pub justification: String,
}

impl SelectionFile {
    pub fn load(path: &Path) -> Result<SelectionFile> {
        let text = crate::io::read_text(path)?;
        let f: SelectionFile =
            serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))?;
        Ok(f)
    }
}

/// Outcome for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResponse {
    pub scenario_id: String,
    pub request_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Provider or cassette failure, as opposed to an unparseable answer.
    #[serde(default)]
    pub hard_error: bool,
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub model: String,
    pub temperature: f64,
    pub task: Task,
    pub emphasis: bool,
    pub constrained_reasoning: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub responses: Vec<ScenarioResponse>,
    pub parsed: usize,
    pub parse_failures: usize,
    pub hard_errors: usize,
}

impl EvaluateSummary {
    pub fn success(&self) -> bool {
        self.hard_errors == 0
    }
}

pub fn build_request(args: &EvaluateArgs, scenario: &capsim::benchmark::Scenario) -> Result<CompletionRequest> {
    let kind = match args.task {
        Task::Top => PromptKind::TopChoice,
        Task::Rank => PromptKind::Ranking,
    };
    let prompt = PromptTemplate::new(kind)
        .with_emphasis(args.emphasis.then_some(scenario.location))
        .with_constrained_reasoning(args.constrained_reasoning)
        .render_scenario(scenario)?;
    Ok(CompletionRequest::new(prompt, args.model.clone(), args.temperature))
}

fn evaluate_one(args: &EvaluateArgs, client: &LlmClient, scenario: &capsim::benchmark::Scenario) -> ScenarioResponse {
    let mut out = ScenarioResponse {
        scenario_id: scenario.id.clone(),
        request_hash: String::new(),
        raw: None,
        selection: None,
        warnings: Vec::new(),
        error: None,
        hard_error: false,
    };
    let req = match build_request(args, scenario) {
        Ok(r) => r,
        Err(e) => {
            out.error = Some(format!("build_prompt: {e}"));
            out.hard_error = true;
            return out;
        }
    };
    out.request_hash = req.hash();
    let raw = match client.complete(&req) {
        Ok(t) => t,
        Err(e) => {
            out.error = Some(format!("complete: {e}"));
            out.hard_error = true;
            return out;
        }
    };
    let parsed = match args.task {
        Task::Top => parse_top_choice(&raw).map(|r| {
            out.warnings = r.warnings;
            Selection {
                scenario_id: scenario.id.clone(),
                choice: r.choice,
                ranking: None,
                justification: r.justification,
            }
        }),
        Task::Rank => parse_ranking(&raw).map(|r| {
            out.warnings = r.warnings;
            Selection {
                scenario_id: scenario.id.clone(),
                choice: r.ranking.top(),
                ranking: Some(r.ranking),
                justification: r.justification,
            }
        }),
    };
    match parsed {
        Ok(s) => out.selection = Some(s),
        Err(e) => out.error = Some(format!("parse: {e}")),
    }
    out.raw = Some(raw);
    out
}

/// Runs every scenario and writes `responses.json`, `selections.json` and
/// `failures.log` under `args.out`.
pub fn run_evaluate(benchmark: &Benchmark, client: &LlmClient, args: &EvaluateArgs) -> Result<EvaluateSummary> {
    let responses: Vec<ScenarioResponse> =
        benchmark.scenarios().par_iter().map(|s| evaluate_one(args, client, s)).collect();

    let entries: Vec<Selection> = responses.iter().filter_map(|r| r.selection.clone()).collect();
    let selections = SelectionFile { label: args.model.clone(), task: args.task, entries };
    let mut log = String::new();
    for r in &responses {
        if let Some(e) = &r.error {
            let kind = if r.hard_error { "error" } else { "parse-failure" };
            log.push_str(&format!("{}\t{kind}\t{e}\n", r.scenario_id));
        }
    }
    write_json(&args.out.join("responses.json"), &responses)?;
    write_json(&args.out.join("selections.json"), &selections)?;
    write_atomic(&args.out.join("failures.log"), log.as_bytes())?;

    let hard_errors = responses.iter().filter(|r| r.hard_error).count();
    let parsed = selections.entries.len();
    Ok(EvaluateSummary { parse_failures: responses.len() - parsed - hard_errors, parsed, hard_errors, responses })
}
