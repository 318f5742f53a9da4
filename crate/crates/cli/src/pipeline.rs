//! `pipeline`: policy text to SAT delta to paired simulation batches to a
//! comparison report.

use std::fmt;
use std::path::PathBuf;

use capsim::engine::{run_batch, RunResult, SimConfig};
use capsim::llm::{build_sat_update_prompt, extract_matrix_json, CompletionRequest, LlmClient};
use capsim::model::{AgentStatus, SatMatrix};
use capsim::policy::{diff_sat, validate_delta, PolicyDelta};
use capsim::stats::{compare_batches, ComparisonReport, StdConvention};
use serde::Serialize;
use thiserror::Error;

use crate::io::{write_atomic, write_json};
use crate::simulate::write_report;

pub const DEFAULT_REPROMPTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    LoadInputs,
    BuildPrompt,
    Complete,
    ExtractMatrixJson,
    ValidateDelta,
    Simulate,
    Compare,
    WriteOutputs,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::LoadInputs => "load_inputs",
            Stage::BuildPrompt => "build_prompt",
            Stage::Complete => "complete",
            Stage::ExtractMatrixJson => "extract_matrix_json",
            Stage::ValidateDelta => "validate_delta",
            Stage::Simulate => "simulate",
            Stage::Compare => "compare",
            Stage::WriteOutputs => "write_outputs",
        })
    }
}

#[derive(Debug, Error)]
#[error("pipeline failed at stage `{stage}` after {} attempt(s): {message}", .attempts.len())]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
    /// Model answers requested before the failure.
    pub attempts: Vec<Attempt>,
}

impl PipelineError {
    fn at(stage: Stage, attempts: &[Attempt], e: impl fmt::Display) -> Self {
        PipelineError { stage, message: e.to_string(), attempts: attempts.to_vec() }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineArgs {
    pub label: String,
    pub policy_text: String,
    /// Matrix the proposal is diffed against and homeless agents start from.
    pub base: SatMatrix,
    pub model: String,
    pub temperature: f64,
    pub sim: SimConfig,
    pub n_runs: usize,
    /// Extra attempts after a rejected proposal.
    pub reprompts: usize,
    /// Use disjoint seed lists for the two arms.
    pub unpaired: bool,
    pub std: StdConvention,
    pub out: Option<PathBuf>,
}

impl PipelineArgs {
    pub fn new(label: impl Into<String>, policy_text: impl Into<String>, model: impl Into<String>) -> Self {
        PipelineArgs {
            label: label.into(),
            policy_text: policy_text.into(),
            base: SatMatrix::default(),
            model: model.into(),
            temperature: 0.1,
            sim: SimConfig::default(),
            n_runs: 10,
            reprompts: DEFAULT_REPROMPTS,
            unpaired: false,
            std: StdConvention::default(),
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub request_hash: String,
    /// Stage at which this attempt was rejected, if it was.
    pub rejected_at: Option<Stage>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub attempts: Vec<Attempt>,
    pub proposed: SatMatrix,
    pub delta: PolicyDelta,
    pub baseline: Vec<RunResult>,
    pub treated: Vec<RunResult>,
    pub report: ComparisonReport,
}

/// The first prompt, or a re-prompt carrying the previous rejection.
pub fn attempt_prompt(first: &str, rejection: Option<&str>) -> String {
    match rejection {
        None => first.to_string(),
        Some(reason) => format!(
            "{first}\n\nYOUR PREVIOUS ANSWER WAS REJECTED: {reason}\nReturn the complete corrected matrix in the same JSON format, with no comments."
        ),
    }
}

/// Request for one attempt, given the previous attempt's rejection reason.
pub fn request_for(args: &PipelineArgs, rejection: Option<&str>) -> Result<CompletionRequest, PipelineError> {
    let first = build_sat_update_prompt(&args.policy_text, &args.base)
        .map_err(|e| PipelineError::at(Stage::BuildPrompt, &[], e))?;
    Ok(CompletionRequest::new(attempt_prompt(&first, rejection), args.model.clone(), args.temperature))
}

/// Asks for a matrix until one yields a valid delta or the re-prompt budget
/// runs out.
pub fn propose_delta(
    args: &PipelineArgs,
    client: &LlmClient,
) -> Result<(SatMatrix, PolicyDelta, Vec<Attempt>), PipelineError> {
    let mut attempts = Vec::new();
    let mut rejection: Option<(Stage, String)> = None;
    for k in 0..=args.reprompts {
        let req = request_for(args, rejection.as_ref().map(|(_, r)| r.as_str()))?;
        let mut attempt = Attempt { request_hash: req.hash(), rejected_at: None, reason: None };
        let text = match client.complete(&req) {
            Ok(t) => t,
            Err(e) => {
                attempt.rejected_at = Some(Stage::Complete);
                attempt.reason = Some(e.to_string());
                attempts.push(attempt);
                return Err(PipelineError::at(Stage::Complete, &attempts, e));
            }
        };
        let outcome = extract_matrix_json(&text).map_err(|e| (Stage::ExtractMatrixJson, e.to_string())).and_then(|m| {
            let mut d = diff_sat(&args.base, &m);
            d.label = args.label.clone();
            d.source_text = args.policy_text.clone();
            let report = validate_delta(&d, &args.base);
            if report.is_ok() {
                for w in &report.warnings {
                    log::warn!("{w}");
                }
                Ok((m, d))
            } else {
                Err((Stage::ValidateDelta, report.to_string()))
            }
        });
        match outcome {
            Ok((m, d)) => {
                attempts.push(attempt);
                return Ok((m, d, attempts));
            }
            Err((stage, reason)) => {
                log::warn!("attempt {} rejected at {stage}: {reason}", k + 1);
                attempt.rejected_at = Some(stage);
                attempt.reason = Some(reason.clone());
                attempts.push(attempt);
                rejection = Some((stage, reason));
            }
        }
    }
    let (stage, reason) = rejection.expect("loop ran at least once");
    Err(PipelineError::at(stage, &attempts, reason))
}

/// Runs the whole pipeline. Outputs go to `args.out` when set.
pub fn run_pipeline(args: &PipelineArgs, client: &LlmClient) -> Result<PipelineOutcome, PipelineError> {
    let mut sim = args.sim.clone();
    sim.validate().map_err(|e| PipelineError::at(Stage::LoadInputs, &[], e))?;
    sim.matrices.insert(AgentStatus::Homeless, args.base);

    let (proposed, delta, attempts) = propose_delta(args, client)?;
    let done = attempts.as_slice();

    let baseline = run_batch(&sim, args.n_runs, None).map_err(|e| PipelineError::at(Stage::Simulate, done, e))?;
    let treated_cfg = if args.unpaired {
        SimConfig { seed: sim.seed.wrapping_add(args.n_runs as u64), ..sim.clone() }
    } else {
        sim.clone()
    };
    let treated =
        run_batch(&treated_cfg, args.n_runs, Some(&delta)).map_err(|e| PipelineError::at(Stage::Simulate, done, e))?;
    let report =
        compare_batches(&baseline, &treated, args.std).map_err(|e| PipelineError::at(Stage::Compare, done, e))?;

    let outcome = PipelineOutcome { attempts: done.to_vec(), proposed, delta, baseline, treated, report };
    if let Some(out) = &args.out {
        write_outputs(&outcome, &args.label, out).map_err(|e| PipelineError::at(Stage::WriteOutputs, done, e))?;
    }
    Ok(outcome)
}

fn write_outputs(o: &PipelineOutcome, label: &str, out: &std::path::Path) -> anyhow::Result<()> {
    write_json(&out.join("attempts.json"), &o.attempts)?;
    let mut matrix = o.proposed.to_pretty_json();
    matrix.push('\n');
    write_atomic(&out.join("proposed_matrix.json"), matrix.as_bytes())?;
    write_json(&out.join("delta.json"), &o.delta)?;
    write_json(&out.join("baseline_runs.json"), &o.baseline)?;
    write_json(&out.join("policy_runs.json"), &o.treated)?;
    write_report(&o.report, label, out)
}
