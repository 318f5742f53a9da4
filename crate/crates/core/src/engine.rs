//! Discrete-time needs simulation.
//!
//! One tick is one simulated hour. Each tick, for every agent:
//!
//! 1. every need decays: `nsl[n] *= gamma[n][status]`;
//! 2. an action is chosen by the configured [`Strategy`];
//! 3. the dominant unmet need `n* = argmin nsl` receives
//!    `min(nsl[n*] + gain * M[n*, action], 1.0)`.
//!
//! All randomness is confined to initialization and is drawn from a
//! ChaCha stream seeded by the run seed, so a run is a pure function of
//! `(config, seed, policy)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    base_sat_matrix, Action, AgentStatus, Need, NeedCategory, SatMatrix, N_ACTIONS, N_CATEGORIES, N_NEEDS,
};
use crate::policy::{apply_policy, AgentAttributes, PolicyDelta, PolicyError};

pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_GAIN: f64 = 0.7;
pub const DEFAULT_AGENTS: usize = 80;
pub const DEFAULT_STEPS: usize = 1450;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid simulation config: {}", .0.join("; "))]
    ConfigInvalid(Vec<String>),
    #[error("no homeless agents to aggregate")]
    EmptyAggregate,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("batch needs at least one run")]
    NoRuns,
}

/// Per-(need, status) decay rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayTable {
    rates: [[f64; 3]; N_NEEDS],
}

impl DecayTable {
    pub fn uniform(rate: f64) -> DecayTable {
        DecayTable { rates: [[rate; 3]; N_NEEDS] }
    }

    #[inline]
    pub fn get(&self, need: Need, status: AgentStatus) -> f64 {
        self.rates[need.index()][status.index()]
    }

    pub fn set(&mut self, need: Need, status: AgentStatus, rate: f64) {
        self.rates[need.index()][status.index()] = rate;
    }

    /// Rates for one status, in need order.
    pub fn for_status(&self, status: AgentStatus) -> [f64; N_NEEDS] {
        std::array::from_fn(|n| self.rates[n][status.index()])
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for need in Need::ALL {
            for status in AgentStatus::ALL {
                let g = self.get(need, status);
                if !(0.0..=1.0).contains(&g) {
                    out.push(format!("decay({need}, {status}) = {g} outside [0, 1]"));
                }
            }
        }
        out
    }
}

impl Default for DecayTable {
    fn default() -> Self {
        DecayTable::uniform(DEFAULT_DECAY)
    }
}

// Serialized as `{ "homeless": [14 rates], "employed": [...], "unemployed": [...] }`.
impl Serialize for DecayTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<AgentStatus, Vec<f64>> =
            AgentStatus::ALL.iter().map(|&st| (st, self.for_status(st).to_vec())).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DecayTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Uniform(f64),
            PerStatus(BTreeMap<AgentStatus, Vec<f64>>),
        }
        match Repr::deserialize(d)? {
            Repr::Uniform(g) => Ok(DecayTable::uniform(g)),
            Repr::PerStatus(map) => {
                let mut table = DecayTable::default();
                for (status, rates) in map {
                    if rates.len() != N_NEEDS {
                        return Err(serde::de::Error::custom(format!(
                            "decay for {status}: expected {N_NEEDS} rates, found {}",
                            rates.len()
                        )));
                    }
                    for (need, g) in Need::ALL.iter().zip(rates) {
                        table.set(*need, status, g);
                    }
                }
                Ok(table)
            }
        }
    }
}

/// Category importance weights in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceProfile {
    weights: [f64; N_CATEGORIES],
}

impl ImportanceProfile {
    pub fn uniform(w: f64) -> ImportanceProfile {
        ImportanceProfile { weights: [w; N_CATEGORIES] }
    }

    pub fn new(weights: [f64; N_CATEGORIES]) -> ImportanceProfile {
        ImportanceProfile { weights }
    }

    #[inline]
    pub fn get(&self, category: NeedCategory) -> f64 {
        self.weights[category.index()]
    }

    pub fn scaled(&self, factor: f64) -> ImportanceProfile {
        ImportanceProfile { weights: self.weights.map(|w| w * factor) }
    }

    fn problems(&self) -> Vec<String> {
        NeedCategory::ALL
            .iter()
            .filter(|c| !(0.0..=1.0).contains(&self.get(**c)))
            .map(|c| format!("importance({c}) = {} outside [0, 1]", self.get(*c)))
            .collect()
    }
}

impl Default for ImportanceProfile {
    fn default() -> Self {
        ImportanceProfile::uniform(1.0)
    }
}

impl Serialize for ImportanceProfile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<NeedCategory, f64> = NeedCategory::ALL.iter().map(|&c| (c, self.get(c))).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ImportanceProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<NeedCategory, f64>::deserialize(d)?;
        let mut p = ImportanceProfile::default();
        for (c, w) in map {
            p.weights[c.index()] = w;
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: usize,
    pub status: AgentStatus,
    pub nsl: [f64; N_NEEDS],
    pub importance: ImportanceProfile,
    pub matrix: SatMatrix,
}

impl AgentAttributes for Agent {
    fn status(&self) -> AgentStatus {
        self.status
    }
}

impl Agent {
    pub fn new(id: usize, status: AgentStatus, nsl: [f64; N_NEEDS], matrix: SatMatrix) -> Agent {
        Agent { id, status, nsl, importance: ImportanceProfile::default(), matrix }
    }

    pub fn nsl_of(&self, need: Need) -> f64 {
        self.nsl[need.index()]
    }
}

/// Multiplies every need level by its decay rate for the agent's status.
#[inline]
pub fn decay_tick(agent: &mut Agent, decay: &DecayTable) {
    let col = agent.status.index();
    for (level, rates) in agent.nsl.iter_mut().zip(decay.rates.iter()) {
        *level *= rates[col];
    }
}

/// Need with the lowest satisfaction level; lowest index wins ties.
#[inline]
pub fn dominant_need(agent: &Agent) -> Need {
    let mut best = 0;
    for (i, &v) in agent.nsl.iter().enumerate().skip(1) {
        if v < agent.nsl[best] {
            best = i;
        }
    }
    Need::ALL[best]
}

#[inline]
fn argmax(scores: &[f64; N_ACTIONS]) -> Action {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

/// Action maximizing `sum_c Imp(c) * sum_{n in c} M[n, a] * (1 - nsl[n])`.
/// Ties go to the lowest action index.
pub fn select_action_deficit_weighted(agent: &Agent) -> Action {
    argmax(&deficit_scores(agent))
}

/// Score of every action under the deficit-weighted rule.
pub fn deficit_scores(agent: &Agent) -> [f64; N_ACTIONS] {
    let mut scores = [0.0; N_ACTIONS];
    for need in Need::ALL {
        let w = (1.0 - agent.nsl[need.index()]) * agent.importance.get(need.category());
        if w == 0.0 {
            continue;
        }
        for (s, &m) in scores.iter_mut().zip(agent.matrix.row(need)) {
            *s += m * w;
        }
    }
    scores
}

/// Best action for the dominant unmet need: argmax over its matrix row,
/// lowest action index on ties.
pub fn select_action_dominant_need(agent: &Agent) -> Action {
    argmax(agent.matrix.row(dominant_need(agent)))
}

/// `nsl[target] = min(nsl[target] + gain * M[target, action], 1.0)`.
#[inline]
pub fn apply_action(agent: &mut Agent, action: Action, target: Need, gain: f64) {
    let i = target.index();
    agent.nsl[i] = (agent.nsl[i] + gain * agent.matrix.get(target, action)).min(1.0);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    DeficitWeighted,
    DominantNeed,
}

impl Strategy {
    pub fn select(self, agent: &Agent) -> Action {
        match self {
            Strategy::DeficitWeighted => select_action_deficit_weighted(agent),
            Strategy::DominantNeed => select_action_dominant_need(agent),
        }
    }
}

/// Fractions of agents per status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatusMix {
    #[serde(default)]
    pub homeless: f64,
    #[serde(default)]
    pub employed: f64,
    #[serde(default)]
    pub unemployed: f64,
}

impl Default for StatusMix {
    fn default() -> Self {
        StatusMix { homeless: 1.0, employed: 0.0, unemployed: 0.0 }
    }
}

impl StatusMix {
    fn fractions(&self) -> [f64; 3] {
        [self.homeless, self.employed, self.unemployed]
    }

    /// Agent counts per status by largest remainder; ties go to the
    /// earlier status.
    pub fn counts(&self, n_agents: usize) -> [usize; 3] {
        let f = self.fractions();
        let exact = f.map(|x| x * n_agents as f64);
        let mut counts = exact.map(|x| x.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &i in order.iter().take(n_agents.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

fn default_matrices() -> BTreeMap<AgentStatus, SatMatrix> {
    AgentStatus::ALL.iter().map(|&s| (s, base_sat_matrix())).collect()
}

fn is_default_matrices(m: &BTreeMap<AgentStatus, SatMatrix>) -> bool {
    *m == default_matrices()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_agents: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub gain: f64,
    pub decay: DecayTable,
    pub initial_nsl_range: [f64; 2],
    pub status_mix: StatusMix,
    pub importance: ImportanceProfile,
    /// SAT matrix per status before any policy. Defaults to the base matrix
    /// for every status.
    #[serde(skip_serializing_if = "is_default_matrices")]
    pub matrices: BTreeMap<AgentStatus, SatMatrix>,
    /// Keep every agent's final need vector in the result.
    pub record_agents: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_agents: DEFAULT_AGENTS,
            n_steps: DEFAULT_STEPS,
            seed: 0,
            strategy: Strategy::default(),
            gain: DEFAULT_GAIN,
            decay: DecayTable::default(),
            initial_nsl_range: [0.4, 0.8],
            status_mix: StatusMix::default(),
            importance: ImportanceProfile::default(),
            matrices: default_matrices(),
            record_agents: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let mut problems = Vec::new();
        if self.n_agents == 0 {
            problems.push("n_agents must be at least 1".to_string());
        }
        if self.n_steps == 0 {
            problems.push("n_steps must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.gain) {
            problems.push(format!("gain {} outside [0, 1]", self.gain));
        }
        let [lo, hi] = self.initial_nsl_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            problems.push(format!("initial_nsl_range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"));
        }
        let f = self.status_mix.fractions();
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            problems.push(format!("status_mix {f:?} must be non-negative and sum to 1"));
        }
        problems.extend(self.decay.problems());
        problems.extend(self.importance.problems());
        if problems.is_empty() {
            Ok(())
        } else {
            Err(EngineError::ConfigInvalid(problems))
        }
    }

    pub fn matrix_for(&self, status: AgentStatus) -> SatMatrix {
        self.matrices.get(&status).copied().unwrap_or_else(base_sat_matrix)
    }
}

/// What one agent did in one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub agent: usize,
    pub target: Need,
    pub action: Action,
    /// Level of the target need after decay, before the bonus.
    pub target_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub homeless_agents: usize,
    pub final_category_means: BTreeMap<NeedCategory, f64>,
    /// Mean final level of every need over homeless agents.
    pub final_need_means: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_agent_final_nsl: Option<Vec<Vec<f64>>>,
    pub action_counts: BTreeMap<Action, u64>,
}

impl RunResult {
    pub fn category_mean(&self, c: NeedCategory) -> f64 {
        self.final_category_means.get(&c).copied().unwrap_or(f64::NAN)
    }

    pub fn need_mean(&self, n: Need) -> f64 {
        self.final_need_means[n.index()]
    }
}

/// A single run in progress.
pub struct Simulation {
    strategy: Strategy,
    gain: f64,
    decay: DecayTable,
    n_steps: usize,
    seed: u64,
    record_agents: bool,
    tick: usize,
    agents: Vec<Agent>,
    action_counts: [u64; N_ACTIONS],
}

impl Simulation {
    /// Validates the config, seeds the population and applies `policy` to
    /// the matrices of agents its predicate selects.
    pub fn new(cfg: &SimConfig, policy: Option<&PolicyDelta>) -> Result<Simulation, EngineError> {
        cfg.validate()?;
        let counts = cfg.status_mix.counts(cfg.n_agents);
        if counts[AgentStatus::Homeless.index()] == 0 {
            return Err(EngineError::EmptyAggregate);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let [lo, hi] = cfg.initial_nsl_range;
        let mut agents = Vec::with_capacity(cfg.n_agents);
        for status in AgentStatus::ALL {
            let base = cfg.matrix_for(status);
            let matrix = match policy {
                Some(p) => apply_policy(&base, p, &status)?,
                None => base,
            };
            for _ in 0..counts[status.index()] {
                let nsl = std::array::from_fn(|_| rng.random_range(lo..=hi));
                agents.push(Agent { id: agents.len(), status, nsl, importance: cfg.importance, matrix });
            }
        }

        Ok(Simulation {
            strategy: cfg.strategy,
            gain: cfg.gain,
            decay: cfg.decay,
            n_steps: cfg.n_steps,
            seed: cfg.seed,
            record_agents: cfg.record_agents,
            tick: 0,
            agents,
            action_counts: [0; N_ACTIONS],
        })
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.n_steps
    }

    #[inline]
    fn tick_agent(&mut self, i: usize) -> Decision {
        let agent = &mut self.agents[i];
        decay_tick(agent, &self.decay);
        let action = self.strategy.select(agent);
        let target = dominant_need(agent);
        let target_level = agent.nsl[target.index()];
        apply_action(agent, action, target, self.gain);
        self.action_counts[action.index()] += 1;
        Decision { agent: i, target, action, target_level }
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        for i in 0..self.agents.len() {
            self.tick_agent(i);
        }
        self.tick += 1;
    }

    /// Advances one tick, appending every agent's decision to `out`.
    pub fn step_traced(&mut self, out: &mut Vec<Decision>) {
        for i in 0..self.agents.len() {
            let d = self.tick_agent(i);
            out.push(d);
        }
        self.tick += 1;
    }

    /// Runs the remaining ticks and aggregates over homeless agents.
    pub fn finish(mut self) -> RunResult {
        while !self.is_finished() {
            self.step();
        }
        self.summarize()
    }

    pub fn summarize(&self) -> RunResult {
        let homeless: Vec<&Agent> = self.agents.iter().filter(|a| a.status == AgentStatus::Homeless).collect();
        let count = homeless.len() as f64;
        let final_need_means: Vec<f64> =
            (0..N_NEEDS).map(|n| homeless.iter().map(|a| a.nsl[n]).sum::<f64>() / count).collect();
        let final_category_means = NeedCategory::ALL
            .iter()
            .map(|&c| {
                let needs = c.needs();
                let m = needs.iter().map(|n| final_need_means[n.index()]).sum::<f64>() / needs.len() as f64;
                (c, m)
            })
            .collect();
        let per_agent_final_nsl = self.record_agents.then(|| homeless.iter().map(|a| a.nsl.to_vec()).collect());
        RunResult {
            seed: self.seed,
            homeless_agents: homeless.len(),
            final_category_means,
            final_need_means,
            per_agent_final_nsl,
            action_counts: Action::ALL.iter().map(|&a| (a, self.action_counts[a.index()])).collect(),
        }
    }
}

/// One full run.
pub fn run_simulation(cfg: &SimConfig, policy: Option<&PolicyDelta>) -> Result<RunResult, EngineError> {
    Ok(Simulation::new(cfg, policy)?.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Serial,
}

/// Runs seeds `cfg.seed, cfg.seed + 1, ...`; results are in seed order.
pub fn run_batch(cfg: &SimConfig, n_runs: usize, policy: Option<&PolicyDelta>) -> Result<Vec<RunResult>, EngineError> {
    run_batch_with(cfg, n_runs, policy, Execution::Parallel)
}

pub fn run_batch_with(
    cfg: &SimConfig,
    n_runs: usize,
    policy: Option<&PolicyDelta>,
    execution: Execution,
) -> Result<Vec<RunResult>, EngineError> {
    if n_runs == 0 {
        return Err(EngineError::NoRuns);
    }
    cfg.validate()?;
    let one = |i: usize| {
        let cfg = SimConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
        run_simulation(&cfg, policy)
    };
    match execution {
        Execution::Parallel => (0..n_runs).into_par_iter().map(one).collect(),
        Execution::Serial => (0..n_runs).map(one).collect(),
    }
}
