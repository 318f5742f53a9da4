//! Policies as small, capped perturbations of a SAT matrix, gated by an
//! agent predicate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Action, AgentStatus, Need, SatMatrix, N_ACTIONS, N_NEEDS};

/// Largest allowed |delta| on any cell.
pub const MAX_ABS_DELTA: f64 = 0.03;
/// Largest allowed |delta| on a cell whose base value is zero.
pub const MAX_ABS_DELTA_ZERO_CELL: f64 = 0.02;
pub const MIN_CHANGES: usize = 2;
/// More changes than this is allowed but flagged.
pub const WARN_CHANGES: usize = 8;

const DIFF_SCALE: f64 = 1e6;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("refusing to apply unvalidated policy delta: {0}")]
    Unvalidated(DeltaReport),
    #[error("proposed matrix has the wrong shape: {0}")]
    ShapeMismatch(crate::model::MatrixReport),
}

/// What an agent exposes to policy predicates.
pub trait AgentAttributes {
    fn status(&self) -> AgentStatus;

    /// Named attribute beyond status. Agents in this engine have none.
    fn attribute(&self, _key: &str) -> Option<&str> {
        None
    }
}

impl AgentAttributes for AgentStatus {
    fn status(&self) -> AgentStatus {
        *self
    }
}

/// Agent predicate. An empty predicate matches every agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<AgentStatus>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

impl Predicate {
    pub fn status(status: AgentStatus) -> Predicate {
        Predicate { status: Some(status), attributes: BTreeMap::new() }
    }

    pub fn homeless() -> Predicate {
        Predicate::status(AgentStatus::Homeless)
    }

    pub fn matches<A: AgentAttributes + ?Sized>(&self, agent: &A) -> bool {
        if let Some(s) = self.status {
            if agent.status() != s {
                return false;
            }
        }
        self.attributes.iter().all(|(k, v)| agent.attribute(k) == Some(v.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Manual,
    LlmGenerated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellChange {
    pub need: Need,
    pub action: Action,
    pub delta: f64,
}

/// A sparse SAT-matrix perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDelta {
    pub label: String,
    #[serde(default)]
    pub predicate: Predicate,
    pub changes: Vec<CellChange>,
    #[serde(default)]
    pub provenance: Provenance,
    #[serde(default)]
    pub source_text: String,
}

impl PolicyDelta {
    pub fn new(label: impl Into<String>, predicate: Predicate, changes: Vec<CellChange>) -> Self {
        PolicyDelta {
            label: label.into(),
            predicate,
            changes,
            provenance: Provenance::Manual,
            source_text: String::new(),
        }
    }

    pub fn validate(&self, base: &SatMatrix) -> DeltaReport {
        validate_delta(self, base)
    }

    /// Largest |delta| over all changes (0 for an empty delta).
    pub fn max_abs(&self) -> f64 {
        self.changes.iter().map(|c| c.delta.abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DeltaViolation {
    TooFewChanges { found: usize },
    DuplicateCell { need: Need, action: Action },
    NonFinite { need: Need, action: Action },
    CapExceeded { need: Need, action: Action, delta: f64 },
    ZeroCellCapExceeded { need: Need, action: Action, delta: f64 },
    OutOfRangeAfterApply { need: Need, action: Action, value: f64 },
}

impl fmt::Display for DeltaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaViolation::TooFewChanges { found } => {
                write!(f, "at least {MIN_CHANGES} changes required, found {found}")
            }
            DeltaViolation::DuplicateCell { need, action } => {
                write!(f, "({need}, {action}) changed more than once")
            }
            DeltaViolation::NonFinite { need, action } => {
                write!(f, "({need}, {action}) delta is not a finite number")
            }
            DeltaViolation::CapExceeded { need, action, delta } => {
                write!(f, "({need}, {action}) |{delta}| exceeds {MAX_ABS_DELTA}")
            }
            DeltaViolation::ZeroCellCapExceeded { need, action, delta } => {
                write!(f, "({need}, {action}) is zero in the base matrix; |{delta}| exceeds {MAX_ABS_DELTA_ZERO_CELL}")
            }
            DeltaViolation::OutOfRangeAfterApply { need, action, value } => {
                write!(f, "({need}, {action}) would become {value}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub violations: Vec<DeltaViolation>,
    pub warnings: Vec<String>,
}

impl DeltaReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for DeltaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks a delta against the magnitude and count caps for `base`.
pub fn validate_delta(delta: &PolicyDelta, base: &SatMatrix) -> DeltaReport {
    let mut report = DeltaReport::default();
    let n = delta.changes.len();
    if n < MIN_CHANGES {
        report.violations.push(DeltaViolation::TooFewChanges { found: n });
    }
    if n > WARN_CHANGES {
        report.warnings.push(format!("{n} changes; policies usually touch at most {WARN_CHANGES} cells"));
    }

    let mut seen = BTreeSet::new();
    for &CellChange { need, action, delta: d } in &delta.changes {
        if !seen.insert((need, action)) {
            report.violations.push(DeltaViolation::DuplicateCell { need, action });
        }
        if !d.is_finite() {
            report.violations.push(DeltaViolation::NonFinite { need, action });
            continue;
        }
        let base_value = base.get(need, action);
        if d.abs() > MAX_ABS_DELTA {
            report.violations.push(DeltaViolation::CapExceeded { need, action, delta: d });
        } else if base_value == 0.0 && d.abs() > MAX_ABS_DELTA_ZERO_CELL {
            report.violations.push(DeltaViolation::ZeroCellCapExceeded { need, action, delta: d });
        }
        let value = (base_value + d).clamp(0.0, 1.0);
        if !(0.0..=1.0).contains(&value) {
            report.violations.push(DeltaViolation::OutOfRangeAfterApply { need, action, value });
        }
    }
    report
}

/// Returns `base + delta` (clamped to `[0, 1]`) when the predicate holds for
/// `agent`, otherwise `base` unchanged. An invalid delta is never applied.
pub fn apply_policy<A: AgentAttributes + ?Sized>(
    base: &SatMatrix,
    delta: &PolicyDelta,
    agent: &A,
) -> Result<SatMatrix, PolicyError> {
    let report = validate_delta(delta, base);
    if !report.is_ok() {
        return Err(PolicyError::Unvalidated(report));
    }
    if !delta.predicate.matches(agent) {
        return Ok(*base);
    }
    let mut out = *base;
    for c in &delta.changes {
        out.set_clamped(c.need, c.action, base.get(c.need, c.action) + c.delta);
    }
    Ok(out)
}

fn micro(v: f64) -> i64 {
    (v * DIFF_SCALE).round() as i64
}

/// Cells where `proposed` differs from `base` after rounding both to six
/// decimals. The result targets homeless agents and is tagged as
/// LLM-generated.
pub fn diff_matrices(base: &SatMatrix, proposed: &[Vec<f64>]) -> Result<PolicyDelta, PolicyError> {
    if proposed.len() != N_NEEDS || proposed.iter().any(|r| r.len() != N_ACTIONS) {
        return Err(PolicyError::ShapeMismatch(crate::model::validate_matrix(proposed)));
    }
    let mut changes = Vec::new();
    for need in Need::ALL {
        for action in Action::ALL {
            let b = micro(base.get(need, action));
            let p = micro(proposed[need.index()][action.index()]);
            if p != b {
                changes.push(CellChange { need, action, delta: (p - b) as f64 / DIFF_SCALE });
            }
        }
    }
    Ok(PolicyDelta {
        label: String::new(),
        predicate: Predicate::homeless(),
        changes,
        provenance: Provenance::LlmGenerated,
        source_text: String::new(),
    })
}

/// [`diff_matrices`] for an already-validated matrix.
pub fn diff_sat(base: &SatMatrix, proposed: &SatMatrix) -> PolicyDelta {
    diff_matrices(base, &proposed.to_rows()).expect("SatMatrix is always 14x11")
}
