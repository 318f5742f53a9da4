//! Benchmark scenarios and expert annotations: loading, validation and
//! indexing.
//!
//! The scenario file is a JSON array. Each object may use either the
//! internal field names or the published ones:
//!
//! | internal                 | published                     |
//! |--------------------------|-------------------------------|
//! | `title`                  | `Scenario`                    |
//! | `context`                | `Context`                     |
//! | `options`                | `Policy_Options`              |
//! | `capability_annotations` | `Main_capability_restoration` |
//!
//! `location` is required; `id` is synthesized as `{location}-{ordinal}`
//! when absent.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{Capability, UnknownName};

pub const OPTIONS_PER_SCENARIO: usize = 4;
pub const MIN_CONTEXT_WORDS: usize = 80;
pub const MIN_OPTION_WORDS: usize = 35;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RankingError {
    #[error("ranking {0:?} is not a permutation of 1..=n")]
    NotAPermutation(Vec<u32>),
    #[error("ranking has {found} entries, expected {expected}")]
    WrongArity { expected: usize, found: usize },
}

/// Strict preference order over option indices, most preferred first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Ranking(Vec<u8>);

impl Ranking {
    /// Accepts any permutation of `1..=n`.
    pub fn new(order: Vec<u32>) -> Result<Ranking, RankingError> {
        let n = order.len();
        let mut seen = vec![false; n + 1];
        for &x in &order {
            let i = x as usize;
            if i == 0 || i > n || seen[i] {
                return Err(RankingError::NotAPermutation(order));
            }
            seen[i] = true;
        }
        if n == 0 || n > u8::MAX as usize {
            return Err(RankingError::NotAPermutation(order));
        }
        Ok(Ranking(order.into_iter().map(|x| x as u8).collect()))
    }

    /// A permutation of `1..=4`.
    pub fn of_four(order: Vec<u32>) -> Result<Ranking, RankingError> {
        if order.len() != OPTIONS_PER_SCENARIO {
            return Err(RankingError::WrongArity { expected: OPTIONS_PER_SCENARIO, found: order.len() });
        }
        Ranking::new(order)
    }

    pub fn order(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn top(&self) -> u8 {
        self.0[0]
    }

    pub fn reversed(&self) -> Ranking {
        Ranking(self.0.iter().rev().copied().collect())
    }

    /// 0-based position of each item: `positions()[item - 1]`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.0.len()];
        for (p, &item) in self.0.iter().enumerate() {
            pos[item as usize - 1] = p;
        }
        pos
    }
}

impl<'de> Deserialize<'de> for Ranking {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<u32>::deserialize(d)?;
        Ranking::new(v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Ranking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| format!("[{i}]")).collect();
        f.write_str(&parts.join(" > "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Location {
    Barcelona,
    Johannesburg,
    SouthBend,
    Macau,
    Universal,
}

impl Location {
    pub const ALL: [Location; 5] =
        [Location::Barcelona, Location::Johannesburg, Location::SouthBend, Location::Macau, Location::Universal];

    pub fn slug(self) -> &'static str {
        match self {
            Location::Barcelona => "barcelona",
            Location::Johannesburg => "johannesburg",
            Location::SouthBend => "south-bend",
            Location::Macau => "macau",
            Location::Universal => "universal",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Location::Barcelona => "Barcelona",
            Location::Johannesburg => "Johannesburg",
            Location::SouthBend => "South Bend",
            Location::Macau => "Macau",
            Location::Universal => "Universal",
        }
    }

    pub fn country(self) -> Option<&'static str> {
        match self {
            Location::Barcelona => Some("Spain"),
            Location::Johannesburg => Some("South Africa"),
            Location::SouthBend => Some("the United States"),
            Location::Macau => Some("China"),
            Location::Universal => None,
        }
    }

    /// Scenario count per location in the full benchmark.
    pub fn expected_count(self) -> usize {
        match self {
            Location::Universal => 10,
            _ => 40,
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Location {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect();
        let loc = match key.as_str() {
            "barcelona" | "bcn" => Location::Barcelona,
            "johannesburg" | "jhb" => Location::Johannesburg,
            "southbend" | "sb" => Location::SouthBend,
            "macau" | "macao" | "macausar" => Location::Macau,
            "universal" => Location::Universal,
            _ => return Err(UnknownName { kind: "location", name: s.to_string() }),
        };
        Ok(loc)
    }
}

impl Serialize for Location {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.display_name())
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyOption {
    pub index: u8,
    pub title: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub location: Location,
    pub title: String,
    pub context: String,
    pub options: Vec<PolicyOption>,
    /// One capability list per option, in option order.
    pub capability_annotations: Vec<Vec<Capability>>,
}

impl Scenario {
    pub fn option(&self, index: u8) -> Option<&PolicyOption> {
        self.options.iter().find(|o| o.index == index)
    }

    pub fn capabilities_of(&self, index: u8) -> Option<&[Capability]> {
        let pos = self.options.iter().position(|o| o.index == index)?;
        self.capability_annotations.get(pos).map(Vec::as_slice)
    }

    /// Every rule this scenario breaks.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.title.trim().is_empty() {
            out.push("title is empty".to_string());
        }
        let words = word_count(&self.context);
        if words < MIN_CONTEXT_WORDS {
            out.push(format!("context has {words} words (min {MIN_CONTEXT_WORDS})"));
        }
        if self.options.len() != OPTIONS_PER_SCENARIO {
            out.push(format!("{} policy options (expected {OPTIONS_PER_SCENARIO})", self.options.len()));
        }
        let indices: BTreeSet<u8> = self.options.iter().map(|o| o.index).collect();
        let expected: BTreeSet<u8> = (1..=self.options.len() as u8).collect();
        if indices != expected || indices.len() != self.options.len() {
            out.push("option indices must be 1..4, each once".to_string());
        }
        for o in &self.options {
            if o.title.trim().is_empty() {
                out.push(format!("option {} has an empty title", o.index));
            }
            let words = word_count(&o.description);
            if words < MIN_OPTION_WORDS {
                out.push(format!("option {} description has {words} words (min {MIN_OPTION_WORDS})", o.index));
            }
        }
        if self.capability_annotations.len() != self.options.len() {
            out.push(format!(
                "{} capability lists for {} options",
                self.capability_annotations.len(),
                self.options.len()
            ));
        }
        for (i, caps) in self.capability_annotations.iter().enumerate() {
            if caps.is_empty() {
                out.push(format!("option {} has no capability annotation", i + 1));
            }
        }
        out
    }
}

/// Whitespace-separated word count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioProblem {
    /// Position in the input array.
    pub position: usize,
    pub id: Option<String>,
    pub problems: Vec<String>,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{} invalid scenario(s): {}", .0.len(), summarize_problems(.0))]
    Validation(Vec<ScenarioProblem>),
    #[error("annotation {position}: unknown scenario id `{scenario_id}`")]
    UnknownScenario { position: usize, scenario_id: String },
    #[error("annotation {position}: invalid ranking: {source}")]
    InvalidRanking {
        position: usize,
        #[source]
        source: RankingError,
    },
}

fn summarize_problems(ps: &[ScenarioProblem]) -> String {
    ps.iter()
        .map(|p| format!("#{} ({}): {}", p.position, p.id.as_deref().unwrap_or("no id"), p.problems.join(", ")))
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<serde_json::Error> for DataError {
    fn from(e: serde_json::Error) -> Self {
        DataError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

#[derive(Debug, Deserialize)]
struct RawOption {
    #[serde(default, alias = "Index", alias = "number")]
    index: Option<u8>,
    #[serde(default, alias = "Title", alias = "name", alias = "Name")]
    title: String,
    #[serde(default, alias = "Description")]
    description: String,
    #[serde(default, alias = "capabilities", alias = "Capabilities")]
    capability: Option<Value>,
}

#[derive(Debug, Deserialize)]
struct RawScenario {
    #[serde(default, alias = "Id", alias = "ID")]
    id: Option<String>,
    #[serde(alias = "Location", alias = "city", alias = "City")]
    location: Location,
    #[serde(default, alias = "Scenario")]
    title: String,
    #[serde(default, alias = "Context")]
    context: String,
    #[serde(default, alias = "Policy_Options")]
    options: Vec<RawOption>,
    #[serde(default, alias = "Main_capability_restoration")]
    capability_annotations: Option<Value>,
}

fn parse_capability_list(v: &Value) -> Result<Vec<Capability>, String> {
    let one = |s: &str| Capability::parse_name(s).ok_or_else(|| format!("unknown capability `{s}`"));
    match v {
        Value::String(s) => s.split([';', '/']).map(str::trim).filter(|s| !s.is_empty()).map(one).collect(),
        Value::Array(items) => items
            .iter()
            .map(|x| match x {
                Value::String(s) => one(s),
                Value::Number(n) => n
                    .as_u64()
                    .and_then(|id| u8::try_from(id).ok())
                    .and_then(Capability::from_id)
                    .ok_or_else(|| format!("unknown capability id {n}")),
                other => Err(format!("capability must be a string, found {other}")),
            })
            .collect(),
        other => Err(format!("capability list must be an array, found {other}")),
    }
}

impl RawScenario {
    fn into_scenario(self, id: String) -> Result<Scenario, Vec<String>> {
        let mut problems = Vec::new();
        let mut options = Vec::new();
        let mut per_option_caps = Vec::new();
        for (i, o) in self.options.into_iter().enumerate() {
            options.push(PolicyOption {
                index: o.index.unwrap_or(i as u8 + 1),
                title: o.title,
                description: o.description,
            });
            per_option_caps.push(o.capability);
        }

        let annotations: Vec<Vec<Capability>> = match self.capability_annotations {
            Some(Value::Array(items)) if items.iter().all(Value::is_array) => items
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    parse_capability_list(v).unwrap_or_else(|e| {
                        problems.push(format!("option {}: {e}", i + 1));
                        Vec::new()
                    })
                })
                .collect(),
            // Flat fallback: one capability (or a `;`-separated string) per option.
            Some(Value::Array(items)) if items.len() == options.len() => items
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    parse_capability_list(v).unwrap_or_else(|e| {
                        problems.push(format!("option {}: {e}", i + 1));
                        Vec::new()
                    })
                })
                .collect(),
            Some(Value::Array(items)) => {
                problems.push(format!(
                    "flat capability list has {} entries for {} options",
                    items.len(),
                    options.len()
                ));
                Vec::new()
            }
            Some(other) => {
                problems.push(format!("capability annotations must be an array, found {other}"));
                Vec::new()
            }
            None => per_option_caps
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Some(v) => parse_capability_list(v).unwrap_or_else(|e| {
                        problems.push(format!("option {}: {e}", i + 1));
                        Vec::new()
                    }),
                    None => Vec::new(),
                })
                .collect(),
        };

        let scenario = Scenario {
            id,
            location: self.location,
            title: self.title,
            context: self.context,
            options,
            capability_annotations: annotations,
        };
        problems.extend(scenario.problems());
        if problems.is_empty() {
            Ok(scenario)
        } else {
            Err(problems)
        }
    }
}

/// Validated scenarios indexed by id and location.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    scenarios: Vec<Scenario>,
    by_id: HashMap<String, usize>,
    by_location: BTreeMap<Location, Vec<usize>>,
}

impl Benchmark {
    /// Validates and indexes a list of scenarios.
    pub fn new(scenarios: Vec<Scenario>) -> Result<Benchmark, DataError> {
        let mut failures = Vec::new();
        let mut by_id = HashMap::new();
        let mut by_location: BTreeMap<Location, Vec<usize>> = BTreeMap::new();
        for (i, s) in scenarios.iter().enumerate() {
            let mut problems = s.problems();
            if by_id.insert(s.id.clone(), i).is_some() {
                problems.push(format!("duplicate id `{}`", s.id));
            }
            if !problems.is_empty() {
                failures.push(ScenarioProblem { position: i, id: Some(s.id.clone()), problems });
            }
            by_location.entry(s.location).or_default().push(i);
        }
        if !failures.is_empty() {
            return Err(DataError::Validation(failures));
        }
        Ok(Benchmark { scenarios, by_id, by_location })
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Benchmark, DataError> {
        let raw: Vec<Value> = serde_json::from_slice(bytes)?;
        let mut ordinals: BTreeMap<Location, usize> = BTreeMap::new();
        let mut scenarios = Vec::with_capacity(raw.len());
        let mut failures = Vec::new();
        for (i, v) in raw.into_iter().enumerate() {
            let raw: RawScenario = match serde_json::from_value(v) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(ScenarioProblem { position: i, id: None, problems: vec![e.to_string()] });
                    continue;
                }
            };
            let ordinal = ordinals.entry(raw.location).or_insert(0);
            *ordinal += 1;
            let id = raw.id.clone().unwrap_or_else(|| format!("{}-{}", raw.location.slug(), ordinal));
            match raw.into_scenario(id.clone()) {
                Ok(s) => scenarios.push(s),
                Err(problems) => failures.push(ScenarioProblem { position: i, id: Some(id), problems }),
            }
        }
        if !failures.is_empty() {
            return Err(DataError::Validation(failures));
        }
        Benchmark::new(scenarios)
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Scenario> {
        self.by_id.get(id).map(|&i| &self.scenarios[i])
    }

    pub fn at_location(&self, loc: Location) -> impl Iterator<Item = &Scenario> {
        self.by_location.get(&loc).into_iter().flatten().map(move |&i| &self.scenarios[i])
    }

    pub fn counts_by_location(&self) -> BTreeMap<Location, usize> {
        self.by_location.iter().map(|(l, v)| (*l, v.len())).collect()
    }

    /// True when every location holds its full-benchmark count.
    pub fn is_full(&self) -> bool {
        let counts = self.counts_by_location();
        Location::ALL.iter().all(|l| counts.get(l).copied().unwrap_or(0) == l.expected_count())
    }

    /// Capability annotation frequencies across all options.
    pub fn capability_counts(&self) -> BTreeMap<Capability, usize> {
        let mut out = BTreeMap::new();
        for s in &self.scenarios {
            for caps in &s.capability_annotations {
                for c in caps {
                    *out.entry(*c).or_insert(0) += 1;
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.scenarios).expect("scenarios serialize")
    }
}

pub fn load_benchmark(path: impl AsRef<Path>) -> Result<Benchmark, DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    Benchmark::from_json_bytes(&bytes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertAnnotation {
    pub scenario_id: String,
    pub annotator_id: String,
    pub ranking: Ranking,
}

#[derive(Debug, Deserialize)]
struct RawAnnotation {
    scenario_id: String,
    annotator_id: String,
    ranking: Vec<u32>,
}

/// Annotations grouped by annotator, then by scenario location.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    pub annotations: Vec<ExpertAnnotation>,
    pub by_annotator: BTreeMap<String, BTreeMap<Location, Vec<usize>>>,
}

impl AnnotationSet {
    pub fn group_sizes(&self, annotator: &str) -> BTreeMap<Location, usize> {
        self.by_annotator.get(annotator).map(|m| m.iter().map(|(l, v)| (*l, v.len())).collect()).unwrap_or_default()
    }

    pub fn for_annotator<'a>(&'a self, annotator: &'a str) -> impl Iterator<Item = &'a ExpertAnnotation> {
        self.annotations.iter().filter(move |a| a.annotator_id == annotator)
    }
}

pub fn annotations_from_json_bytes(bytes: &[u8], benchmark: &Benchmark) -> Result<AnnotationSet, DataError> {
    let raw: Vec<RawAnnotation> = serde_json::from_slice(bytes)?;
    let mut set = AnnotationSet::default();
    for (position, r) in raw.into_iter().enumerate() {
        let Some(scenario) = benchmark.get(&r.scenario_id) else {
            return Err(DataError::UnknownScenario { position, scenario_id: r.scenario_id });
        };
        let ranking = Ranking::of_four(r.ranking).map_err(|source| DataError::InvalidRanking { position, source })?;
        set.by_annotator
            .entry(r.annotator_id.clone())
            .or_default()
            .entry(scenario.location)
            .or_default()
            .push(set.annotations.len());
        set.annotations.push(ExpertAnnotation { scenario_id: r.scenario_id, annotator_id: r.annotator_id, ranking });
    }
    Ok(set)
}

pub fn load_annotations(path: impl AsRef<Path>, benchmark: &Benchmark) -> Result<AnnotationSet, DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    annotations_from_json_bytes(&bytes, benchmark)
}
