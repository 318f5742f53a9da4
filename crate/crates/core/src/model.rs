//! Fixed vocabularies (needs, categories, actions, statuses, capabilities)
//! and the 14×11 satisfaction-action transition (SAT) matrix.
//!
//! Need and action order is frozen: every serialized matrix is positional
//! against [`Need::ALL`] and [`Action::ALL`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_NEEDS: usize = 14;
pub const N_ACTIONS: usize = 11;
pub const N_CATEGORIES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown {kind} name `{name}`")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
}

/// Maslow need category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NeedCategory {
    Physiological,
    Safety,
    Belonging,
    Esteem,
}

impl NeedCategory {
    pub const ALL: [NeedCategory; N_CATEGORIES] =
        [NeedCategory::Physiological, NeedCategory::Safety, NeedCategory::Belonging, NeedCategory::Esteem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NeedCategory::Physiological => "Physiological",
            NeedCategory::Safety => "Safety",
            NeedCategory::Belonging => "Belonging",
            NeedCategory::Esteem => "Esteem",
        }
    }

    /// Needs in this category, in canonical order.
    pub fn needs(self) -> &'static [Need] {
        let range = match self {
            NeedCategory::Physiological => 0..4,
            NeedCategory::Safety => 4..8,
            NeedCategory::Belonging => 8..11,
            NeedCategory::Esteem => 11..14,
        };
        &Need::ALL[range]
    }
}

impl fmt::Display for NeedCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One of the 14 needs. The discriminant is the SAT-matrix row.
///
/// `Need::Status` is a need (social standing) and is unrelated to
/// [`AgentStatus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Need {
    Food,
    Shelter,
    Sleep,
    Health,
    Clothing,
    FinancialSecurity,
    Employment,
    Education,
    Family,
    Friendship,
    Intimacy,
    Freedom,
    Status,
    SelfEsteem,
}

impl Need {
    pub const ALL: [Need; N_NEEDS] = [
        Need::Food,
        Need::Shelter,
        Need::Sleep,
        Need::Health,
        Need::Clothing,
        Need::FinancialSecurity,
        Need::Employment,
        Need::Education,
        Need::Family,
        Need::Friendship,
        Need::Intimacy,
        Need::Freedom,
        Need::Status,
        Need::SelfEsteem,
    ];

    pub const NAMES: [&'static str; N_NEEDS] = [
        "food",
        "shelter",
        "sleep",
        "health",
        "clothing",
        "financial security",
        "employment",
        "education",
        "family",
        "friendship",
        "intimacy",
        "freedom",
        "status",
        "self-esteem",
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Need> {
        Need::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        Need::NAMES[self.index()]
    }

    pub fn category(self) -> NeedCategory {
        category_of(self)
    }
}

/// Category membership: rows 0–3 physiological, 4–7 safety, 8–10 belonging,
/// 11–13 esteem.
pub fn category_of(need: Need) -> NeedCategory {
    match need.index() {
        0..=3 => NeedCategory::Physiological,
        4..=7 => NeedCategory::Safety,
        8..=10 => NeedCategory::Belonging,
        _ => NeedCategory::Esteem,
    }
}

impl fmt::Display for Need {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Need {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Need::NAMES
            .iter()
            .position(|n| *n == s)
            .map(|i| Need::ALL[i])
            .ok_or_else(|| UnknownName { kind: "need", name: s.to_string() })
    }
}

/// One of the 11 actions. The discriminant is the SAT-matrix column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    GoGrocery,
    GoHospital,
    GoShopping,
    GoLeisure,
    InvestEducation,
    SleepStreet,
    Beg,
    StealFood,
    StealClothes,
    GoReceptionCenter,
    GoPrison,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [
        Action::GoGrocery,
        Action::GoHospital,
        Action::GoShopping,
        Action::GoLeisure,
        Action::InvestEducation,
        Action::SleepStreet,
        Action::Beg,
        Action::StealFood,
        Action::StealClothes,
        Action::GoReceptionCenter,
        Action::GoPrison,
    ];

    pub const NAMES: [&'static str; N_ACTIONS] = [
        "go_grocery",
        "go_hospital",
        "go_shopping",
        "go_leisure",
        "invest_education",
        "sleep_street",
        "beg",
        "steal_food",
        "steal_clothes",
        "go_reception_center",
        "go_prison",
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        Action::NAMES[self.index()]
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::NAMES
            .iter()
            .position(|n| *n == s)
            .map(|i| Action::ALL[i])
            .ok_or_else(|| UnknownName { kind: "action", name: s.to_string() })
    }
}

macro_rules! serde_by_name {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_by_name!(Need);
serde_by_name!(Action);

/// Agent status. Fixed for the duration of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentStatus {
    Homeless,
    Employed,
    Unemployed,
}

impl AgentStatus {
    pub const ALL: [AgentStatus; 3] = [AgentStatus::Homeless, AgentStatus::Employed, AgentStatus::Unemployed];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentStatus::Homeless => "homeless",
            AgentStatus::Employed => "employed",
            AgentStatus::Unemployed => "unemployed",
        }
    }
}

impl fmt::Display for AgentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentStatus {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentStatus::ALL
            .iter()
            .copied()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownName { kind: "status", name: s.to_string() })
    }
}

/// Nussbaum's ten central human capabilities, numbered 1–10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Capability {
    Life = 1,
    BodilyHealth,
    BodilyIntegrity,
    SensesImaginationThought,
    Emotions,
    PracticalReason,
    Affiliation,
    OtherSpecies,
    Play,
    ControlOverEnvironment,
}

impl Capability {
    pub const ALL: [Capability; 10] = [
        Capability::Life,
        Capability::BodilyHealth,
        Capability::BodilyIntegrity,
        Capability::SensesImaginationThought,
        Capability::Emotions,
        Capability::PracticalReason,
        Capability::Affiliation,
        Capability::OtherSpecies,
        Capability::Play,
        Capability::ControlOverEnvironment,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Capability> {
        Capability::ALL.iter().copied().find(|c| c.id() == id)
    }

    /// Canonical annotation key.
    pub fn name(self) -> &'static str {
        match self {
            Capability::Life => "Life",
            Capability::BodilyHealth => "Bodily Health",
            Capability::BodilyIntegrity => "Bodily Integrity",
            Capability::SensesImaginationThought => "Senses, Imagination and Thought",
            Capability::Emotions => "Emotions",
            Capability::PracticalReason => "Practical Reason",
            Capability::Affiliation => "Affiliation",
            Capability::OtherSpecies => "Other Species",
            Capability::Play => "Play",
            Capability::ControlOverEnvironment => "Control Over One's Environment",
        }
    }

    /// Parses a capability name. Case, punctuation and apostrophe style are
    /// ignored, so "Senses, Imagination, and Thought" and
    /// "control over one’s environment" both resolve.
    pub fn parse_name(s: &str) -> Option<Capability> {
        let key = normalize_capability(s);
        Capability::ALL.iter().copied().find(|c| normalize_capability(c.name()) == key)
    }
}

fn normalize_capability(s: &str) -> String {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| w != "and" && w != "s")
        .collect::<Vec<_>>()
        .join(" ")
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Capability {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Capability::parse_name(s).ok_or_else(|| UnknownName { kind: "capability", name: s.to_string() })
    }
}

serde_by_name!(Capability);

/// Satisfaction coefficients indexed `[need][action]`. Always 14×11 with
/// every cell in `[0, 1]`.
#[derive(Clone, Copy, PartialEq)]
pub struct SatMatrix {
    cells: [[f64; N_ACTIONS]; N_NEEDS],
}

const BASE_MATRIX: [[f64; N_ACTIONS]; N_NEEDS] = [
    [1.0, 0.0, 0.0, 0.4, 0.0, 0.0, 0.15, 0.7, 0.0, 0.5, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.7, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.3, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.8, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.3, 0.0],
    [0.0, 0.0, 0.0, 0.3, 0.4, 0.0, 0.4, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.7, 0.6, 0.0, 0.6, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.6, 0.5, 0.0, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0],
];

/// The homeless-agent SAT matrix the pipeline hands to the LLM.
pub fn base_sat_matrix() -> SatMatrix {
    SatMatrix { cells: BASE_MATRIX }
}

impl SatMatrix {
    pub fn zeros() -> SatMatrix {
        SatMatrix { cells: [[0.0; N_ACTIONS]; N_NEEDS] }
    }

    /// Builds a matrix from an array, rejecting out-of-range or non-finite cells.
    pub fn from_array(cells: [[f64; N_ACTIONS]; N_NEEDS]) -> Result<SatMatrix, MatrixReport> {
        let report = validate_cells(cells.iter().map(|r| r.as_slice()));
        if report.is_ok() {
            Ok(SatMatrix { cells })
        } else {
            Err(report)
        }
    }

    /// Builds a matrix from nested rows, checking shape and range.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<SatMatrix, MatrixReport> {
        let report = validate_matrix(rows);
        if !report.is_ok() {
            return Err(report);
        }
        let mut cells = [[0.0; N_ACTIONS]; N_NEEDS];
        for (dst, src) in cells.iter_mut().zip(rows) {
            dst.copy_from_slice(src);
        }
        Ok(SatMatrix { cells })
    }

    #[inline]
    pub fn get(&self, need: Need, action: Action) -> f64 {
        self.cells[need.index()][action.index()]
    }

    /// Sets a cell, clamping into `[0, 1]`. NaN is stored as 0.
    pub fn set_clamped(&mut self, need: Need, action: Action, value: f64) {
        let v = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
        self.cells[need.index()][action.index()] = v;
    }

    #[inline]
    pub fn row(&self, need: Need) -> &[f64; N_ACTIONS] {
        &self.cells[need.index()]
    }

    pub fn rows(&self) -> &[[f64; N_ACTIONS]; N_NEEDS] {
        &self.cells
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.cells.iter().map(|r| r.to_vec()).collect()
    }

    pub fn column_sum(&self, action: Action) -> f64 {
        self.cells.iter().map(|r| r[action.index()]).sum()
    }

    pub fn to_json(&self) -> MatrixJson {
        MatrixJson {
            actions: Action::NAMES.iter().map(|s| s.to_string()).collect(),
            needs: Need::NAMES.iter().map(|s| s.to_string()).collect(),
            matrix: self.to_rows(),
        }
    }

    /// Canonical JSON text, one matrix row per line.
    pub fn to_pretty_json(&self) -> String {
        let quote = |names: &[&str]| names.iter().map(|n| format!("\"{n}\"")).collect::<Vec<_>>().join(", ");
        let rows = self
            .cells
            .iter()
            .map(|r| {
                let vals = r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ");
                format!("    [{vals}]")
            })
            .collect::<Vec<_>>()
            .join(",\n");
        format!(
            "{{\n  \"actions\": [{}],\n  \"needs\": [{}],\n  \"matrix\": [\n{}\n  ]\n}}",
            quote(&Action::NAMES),
            quote(&Need::NAMES),
            rows
        )
    }
}

impl fmt::Debug for SatMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.cells.iter()).finish()
    }
}

impl Default for SatMatrix {
    fn default() -> Self {
        base_sat_matrix()
    }
}

impl Serialize for SatMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SatMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(d)?;
        raw.into_matrix().map_err(serde::de::Error::custom)
    }
}

/// Wire form of a SAT matrix: positional names plus nested rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub actions: Vec<String>,
    pub needs: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixJsonError {
    #[error("`actions` does not match the canonical action list")]
    ActionNames,
    #[error("`needs` does not match the canonical need list")]
    NeedNames,
    #[error("invalid matrix: {0}")]
    Invalid(MatrixReport),
}

impl MatrixJson {
    pub fn check_names(&self) -> Result<(), MatrixJsonError> {
        if self.actions.iter().map(String::as_str).ne(Action::NAMES.iter().copied()) {
            return Err(MatrixJsonError::ActionNames);
        }
        if self.needs.iter().map(String::as_str).ne(Need::NAMES.iter().copied()) {
            return Err(MatrixJsonError::NeedNames);
        }
        Ok(())
    }

    pub fn into_matrix(self) -> Result<SatMatrix, MatrixJsonError> {
        self.check_names()?;
        SatMatrix::from_rows(&self.matrix).map_err(MatrixJsonError::Invalid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixViolation {
    RowCount { found: usize },
    RowLength { row: usize, found: usize },
    OutOfRange { row: usize, col: usize, value: f64 },
}

impl fmt::Display for MatrixViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixViolation::RowCount { found } => {
                write!(f, "expected {N_NEEDS} rows, found {found}")
            }
            MatrixViolation::RowLength { row, found } => {
                write!(f, "row {row}: expected {N_ACTIONS} columns, found {found}")
            }
            MatrixViolation::OutOfRange { row, col, value } => {
                write!(f, "cell [{row}][{col}] = {value} outside [0, 1]")
            }
        }
    }
}

/// Result of [`validate_matrix`]; violations are data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub violations: Vec<MatrixViolation>,
}

impl MatrixReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_shape_violation(&self) -> bool {
        self.violations.iter().any(|v| !matches!(v, MatrixViolation::OutOfRange { .. }))
    }
}

impl fmt::Display for MatrixReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks shape (14×11) and range (`[0, 1]`, finite) of raw rows.
pub fn validate_matrix(rows: &[Vec<f64>]) -> MatrixReport {
    validate_cells(rows.iter().map(Vec::as_slice))
}

fn validate_cells<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>) -> MatrixReport {
    let mut violations = Vec::new();
    if rows.len() != N_NEEDS {
        violations.push(MatrixViolation::RowCount { found: rows.len() });
    }
    for (r, row) in rows.enumerate() {
        if row.len() != N_ACTIONS {
            violations.push(MatrixViolation::RowLength { row: r, found: row.len() });
        }
        for (c, &value) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                violations.push(MatrixViolation::OutOfRange { row: r, col: c, value });
            }
        }
    }
    MatrixReport { violations }
}
