//! Shared fixtures for the CLI integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use capsim::engine::SimConfig;
use capsim::llm::{CassetteStore, CompletionRequest, FnProvider, LlmClient, Mode, Provider};
use capsim::model::{base_sat_matrix, Action, Need};
use capsim_cli::pipeline::{propose_delta, PipelineArgs, Stage};

pub const MODEL: &str = "fixture-model";
pub const TIMESTAMP: &str = "2026-01-01T00:00:00Z";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn pipeline_fixtures() -> PathBuf {
    fixtures().join("pipeline")
}

pub fn cassette_path() -> PathBuf {
    pipeline_fixtures().join("cassette.jsonl")
}

pub struct Case {
    pub policy_file: &'static str,
    /// Stage the pipeline must fail at, or `None` for success.
    pub fails_at: Option<Stage>,
}

pub const CASES: [Case; 3] = [
    Case { policy_file: "valid.txt", fails_at: None },
    Case { policy_file: "cap_violation.txt", fails_at: Some(Stage::ValidateDelta) },
    Case { policy_file: "comment_contaminated.txt", fails_at: Some(Stage::ExtractMatrixJson) },
];

pub fn policy_text(case: &Case) -> String {
    std::fs::read_to_string(pipeline_fixtures().join(case.policy_file)).expect("fixture policy")
}

/// Small but non-trivial run size for fixture pipelines.
pub fn small_sim() -> SimConfig {
    SimConfig { n_agents: 20, n_steps: 120, seed: 11, ..SimConfig::default() }
}

pub fn pipeline_args(case: &Case) -> PipelineArgs {
    let stem = case.policy_file.trim_end_matches(".txt");
    let mut args = PipelineArgs::new(stem, policy_text(case), MODEL);
    args.sim = small_sim();
    args.n_runs = 4;
    args
}

fn fenced(json: &str, after: &str) -> String {
    format!("Here is the updated matrix.\n\n```json\n{json}\n```\n\n{after}\n")
}

/// The scripted model's answer for one fixture policy. Re-prompts get the
/// same answer, so failing cases stay failing.
pub fn scripted_response(policy_file: &str) -> String {
    let mut m = base_sat_matrix();
    match policy_file {
        "valid.txt" => {
            m.set_clamped(Need::Shelter, Action::GoReceptionCenter, 0.73);
            m.set_clamped(Need::Sleep, Action::GoReceptionCenter, 0.02);
            m.set_clamped(Need::Health, Action::GoReceptionCenter, 0.02);
            fenced(
                &m.to_pretty_json(),
                "Longer opening hours make the reception centre a better source of shelter and sleep, and the nurse adds a small health benefit.",
            )
        }
        "cap_violation.txt" => {
            m.set_clamped(Need::Shelter, Action::GoReceptionCenter, 0.75);
            m.set_clamped(Need::Sleep, Action::GoReceptionCenter, 0.02);
            fenced(&m.to_pretty_json(), "A 200-bed shelter is a large change for shelter.")
        }
        "comment_contaminated.txt" => {
            m.set_clamped(Need::Health, Action::GoHospital, 1.0);
            m.set_clamped(Need::Health, Action::GoLeisure, 0.02);
            m.set_clamped(Need::Friendship, Action::GoHospital, 0.01);
            let json = m.to_pretty_json().replacen(
                "\"matrix\": [",
                "\"matrix\": [\n    // row 3 (health) raised for clinic visits",
                1,
            );
            fenced(&json, "The clinic mainly helps health.")
        }
        other => panic!("no scripted response for {other}"),
    }
}

fn script() -> Arc<dyn Provider> {
    Arc::new(FnProvider(|req: &CompletionRequest| {
        for case in &CASES {
            if req.prompt.contains(policy_text(case).trim()) {
                return Ok(scripted_response(case.policy_file));
            }
        }
        panic!("prompt matches no fixture policy");
    }))
}

/// Cassette text for every request the three fixture pipelines send, in
/// case order then attempt order, with a fixed timestamp.
pub fn build_cassette() -> String {
    let store = Arc::new(CassetteStore::in_memory());
    let client = LlmClient::new(Mode::Record, Some(script()), store.clone());
    let mut out = String::new();
    for case in &CASES {
        let args = pipeline_args(case);
        let attempts = match propose_delta(&args, &client) {
            Ok((_, _, attempts)) => attempts,
            Err(e) => e.attempts,
        };
        for attempt in attempts {
            let mut rec = store.get(&attempt.request_hash).expect("attempt was recorded");
            rec.timestamp = TIMESTAMP.to_string();
            out.push_str(&serde_json::to_string(&rec).unwrap());
            out.push('\n');
        }
    }
    out
}
