mod common;

use std::sync::Arc;

use capsim::llm::{CassetteStore, LlmClient, Mode};
use capsim::model::{Action, Need};
use capsim::policy::Provenance;
use capsim_cli::make_client;
use capsim_cli::pipeline::run_pipeline;
use common::*;

fn replay_client() -> LlmClient {
    LlmClient::replay(Arc::new(CassetteStore::load(cassette_path()).expect("shipped cassette")))
}

/// Rewrites the shipped cassette from the scripted model.
#[test]
#[ignore]
fn regenerate_cassette() {
    std::fs::write(cassette_path(), build_cassette()).unwrap();
}

#[test]
fn shipped_cassette_is_current() {
    let shipped = std::fs::read_to_string(cassette_path()).expect("shipped cassette");
    assert_eq!(shipped, build_cassette(), "run the ignored regenerate_cassette test");
}

#[test]
fn cases_end_at_expected_stage_offline() {
    let client = replay_client();
    for case in &CASES {
        let result = run_pipeline(&pipeline_args(case), &client);
        match (case.fails_at, result) {
            (None, Ok(outcome)) => {
                assert_eq!(outcome.attempts.len(), 1);
                assert_eq!(outcome.delta.provenance, Provenance::LlmGenerated);
                assert_eq!(outcome.report.categories.len(), 4);
            }
            (Some(stage), Err(e)) => {
                assert_eq!(e.stage, stage, "{}", case.policy_file);
                assert!(e.to_string().contains(&stage.to_string()));
                // Both rejected proposals are re-prompted the full budget.
                assert_eq!(e.attempts.len(), 1 + pipeline_args(case).reprompts);
                assert!(e.attempts.iter().all(|a| a.rejected_at == Some(stage)));
            }
            (want, got) => panic!("{}: expected {want:?}, got {got:?}", case.policy_file),
        }
    }
    assert_eq!(client.provider_calls(), 0);
}

#[test]
fn valid_case_delta_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = pipeline_args(&CASES[0]);
    args.out = Some(dir.path().to_path_buf());
    let client = make_client(Mode::Replay, &cassette_path(), 2).unwrap();
    let outcome = run_pipeline(&args, &client).unwrap();

    let cells: Vec<(Need, Action)> = outcome.delta.changes.iter().map(|c| (c.need, c.action)).collect();
    assert_eq!(
        cells,
        [
            (Need::Shelter, Action::GoReceptionCenter),
            (Need::Sleep, Action::GoReceptionCenter),
            (Need::Health, Action::GoReceptionCenter),
        ]
    );
    assert!(outcome.delta.max_abs() <= 0.03);
    for f in [
        "attempts.json",
        "proposed_matrix.json",
        "delta.json",
        "baseline_runs.json",
        "policy_runs.json",
        "report.json",
        "report.csv",
        "report.txt",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
}

#[test]
fn cap_violation_names_the_cell() {
    let err = run_pipeline(&pipeline_args(&CASES[1]), &replay_client()).unwrap_err();
    assert!(err.message.contains("shelter"), "{}", err.message);
}

#[test]
fn unpaired_arms_use_other_seeds() {
    let mut args = pipeline_args(&CASES[0]);
    args.unpaired = true;
    let outcome = run_pipeline(&args, &replay_client()).unwrap();
    let base: Vec<u64> = outcome.baseline.iter().map(|r| r.seed).collect();
    let treated: Vec<u64> = outcome.treated.iter().map(|r| r.seed).collect();
    assert!(base.iter().all(|s| !treated.contains(s)));
}
