use capsim::model::{base_sat_matrix, Action, AgentStatus, Need, SatMatrix, N_ACTIONS, N_NEEDS};
use capsim::policy::{apply_policy, diff_matrices, validate_delta, CellChange, PolicyDelta, Predicate};
use proptest::prelude::*;

/// Matrices with six-decimal cells, like the ones models emit.
fn decimal_matrix() -> impl Strategy<Value = SatMatrix> {
    let cell = prop_oneof![Just(0), Just(1_000_000), 0u32..=1_000_000];
    prop_oneof![
        Just(base_sat_matrix()),
        prop::collection::vec(cell, N_NEEDS * N_ACTIONS).prop_map(|cells| {
            let mut a = [[0.0; N_ACTIONS]; N_NEEDS];
            for (i, v) in cells.into_iter().enumerate() {
                a[i / N_ACTIONS][i % N_ACTIONS] = f64::from(v) / 1e6;
            }
            SatMatrix::from_array(a).unwrap()
        }),
    ]
}

/// A delta that passes the caps on `base`, with deltas on a 1e-6 grid and
/// at least 1e-3 in magnitude.
fn valid_delta(base: SatMatrix) -> impl Strategy<Value = PolicyDelta> {
    prop::sample::subsequence((0..N_NEEDS * N_ACTIONS).collect::<Vec<_>>(), 2..=6)
        .prop_flat_map(move |cells| {
            let n = cells.len();
            (Just(cells), prop::collection::vec((1_000i32..=30_000, any::<bool>()), n))
        })
        .prop_map(move |(cells, mags)| {
            let changes = cells
                .into_iter()
                .zip(mags)
                .map(|(i, (micro, negative))| {
                    let (need, action) = (Need::ALL[i / N_ACTIONS], Action::ALL[i % N_ACTIONS]);
                    let cap = if base.get(need, action) == 0.0 { 20_000 } else { 30_000 };
                    let d = f64::from(micro.min(cap)) / 1e6;
                    CellChange { need, action, delta: if negative { -d } else { d } }
                })
                .collect();
            PolicyDelta::new("p", Predicate::homeless(), changes)
        })
}

fn base_and_delta() -> impl Strategy<Value = (SatMatrix, PolicyDelta)> {
    decimal_matrix().prop_flat_map(|m| (Just(m), valid_delta(m)))
}

/// Flips the sign of changes that would leave [0, 1]; the caps are symmetric,
/// so the result stays valid and never clamps.
fn unclamped(base: &SatMatrix, mut d: PolicyDelta) -> PolicyDelta {
    for c in &mut d.changes {
        if !(0.0..=1.0).contains(&(base.get(c.need, c.action) + c.delta)) {
            c.delta = -c.delta;
        }
    }
    d
}

proptest! {
    #[test]
    fn generated_deltas_are_valid((base, d) in base_and_delta()) {
        prop_assert!(validate_delta(&d, &base).is_ok());
    }

    #[test]
    fn closed_gate_is_identity((base, d) in base_and_delta()) {
        for status in [AgentStatus::Employed, AgentStatus::Unemployed] {
            prop_assert_eq!(apply_policy(&base, &d, &status).unwrap(), base);
        }
    }

    #[test]
    fn applied_cells_stay_in_range((base, d) in base_and_delta()) {
        let m = apply_policy(&base, &d, &AgentStatus::Homeless).unwrap();
        prop_assert!(m.rows().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn diff_of_applied_delta_validates((base, d) in base_and_delta()) {
        let d = unclamped(&base, d);
        prop_assert!(validate_delta(&d, &base).is_ok());
        let applied = apply_policy(&base, &d, &AgentStatus::Homeless).unwrap();
        let back = diff_matrices(&base, &applied.to_rows()).unwrap();
        prop_assert!(validate_delta(&back, &base).is_ok(), "{}", validate_delta(&back, &base));
        prop_assert_eq!(back.changes.len(), d.changes.len());
        for c in &d.changes {
            let found = back.changes.iter().find(|b| (b.need, b.action) == (c.need, c.action)).unwrap();
            prop_assert!((found.delta - c.delta).abs() < 1e-9);
        }
    }
}
