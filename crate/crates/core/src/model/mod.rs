//! Robust MDP data model: states, actions, rewards, policies, transition
//! functions, and per-state uncertainty sets.

mod evaluate;
mod io;
mod uncertainty;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use evaluate::{evaluate_policy_exact, induced_matrix, induced_rewards};
pub use io::{load_model, load_policy, save_model, save_policy, save_values};
pub use uncertainty::{interval_to_polytope, IntervalSet, PolytopeSet, UncertaintySet};
pub(crate) use uncertainty::CompiledSet;

/// Tolerance for simplex sums and nonnegativity on loaded data.
pub const PROB_TOL: f64 = 1e-12;

/// Whether the agent maximizes or minimizes expected discounted reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "max")]
    Maximize,
    #[serde(rename = "min")]
    Minimize,
}

impl Sense {
    /// Direction the agent optimizes in.
    pub fn agent(self) -> Extremum {
        match self {
            Sense::Maximize => Extremum::Max,
            Sense::Minimize => Extremum::Min,
        }
    }

    /// Direction of the adversarial (worst-case) environment.
    pub fn adversary(self) -> Extremum {
        self.agent().opposite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    Min,
    Max,
}

impl Extremum {
    pub fn opposite(self) -> Self {
        match self {
            Extremum::Min => Extremum::Max,
            Extremum::Max => Extremum::Min,
        }
    }

    /// True when `a` is strictly better than `b` in this direction.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Extremum::Min => a < b,
            Extremum::Max => a > b,
        }
    }

    pub fn pick(self, a: f64, b: f64) -> f64 {
        if self.better(b, a) {
            b
        } else {
            a
        }
    }

    /// Neutral starting value for a fold in this direction.
    pub fn worst(self) -> f64 {
        match self {
            Extremum::Min => f64::INFINITY,
            Extremum::Max => f64::NEG_INFINITY,
        }
    }
}

impl std::str::FromStr for Extremum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Extremum::Min),
            "max" => Ok(Extremum::Max),
            other => Err(Error::Config(format!("expected `min` or `max`, got `{other}`"))),
        }
    }
}

fn check_distribution(v: &[f64], what: impl Fn() -> String) -> Result<()> {
    if v.iter().any(|x| !x.is_finite() || *x < -PROB_TOL) {
        return Err(invalid(format!("{} has a negative or non-finite entry", what())));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(invalid(format!("{} sums to {sum}, expected 1", what())));
    }
    Ok(())
}

/// Transition probabilities out of one state: an `|A| x |S|` row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTransition {
    n_actions: usize,
    n_states: usize,
    probs: Vec<f64>,
}

impl StateTransition {
    pub fn new(n_actions: usize, n_states: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_actions * n_states {
            return Err(invalid(format!(
                "state transition has {} entries, expected {n_actions}x{n_states}",
                probs.len()
            )));
        }
        let t = StateTransition { n_actions, n_states, probs };
        for a in 0..n_actions {
            check_distribution(t.row(a), || format!("transition row for action {a}"))?;
        }
        Ok(t)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_states = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_states) {
            return Err(invalid("ragged transition rows"));
        }
        Self::new(rows.len(), n_states, rows.concat())
    }

    /// Builds from a stacked vector, clipping round-off negatives and
    /// renormalizing each row.
    pub(crate) fn from_stacked_clean(n_actions: usize, n_states: usize, mut probs: Vec<f64>) -> Self {
        for row in probs.chunks_mut(n_states.max(1)) {
            for p in row.iter_mut() {
                debug_assert!(*p > -1e-6, "probability {p} far below zero");
                if *p < 0.0 {
                    *p = 0.0;
                }
            }
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
        StateTransition { n_actions, n_states, probs }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.probs[a * self.n_states..(a + 1) * self.n_states]
    }

    pub fn get(&self, a: usize, s: usize) -> f64 {
        self.probs[a * self.n_states + s]
    }

    /// Stacked row-major vector of length `|A|·|S|`.
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// `lambda * self + (1 - lambda) * other`.
    pub fn lerp(&self, other: &StateTransition, lambda: f64) -> StateTransition {
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| lambda * p + (1.0 - lambda) * q)
            .collect();
        StateTransition { n_actions: self.n_actions, n_states: self.n_states, probs }
    }

    /// Expected next value under action `a`.
    pub fn expect(&self, a: usize, v: &[f64]) -> f64 {
        self.row(a).iter().zip(v).map(|(p, x)| p * x).sum()
    }

    /// Largest absolute entrywise difference.
    pub fn distance(&self, other: &StateTransition) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    }
}

/// A full transition function: one [`StateTransition`] per state.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionFunction(pub Vec<StateTransition>);

impl TransitionFunction {
    pub fn state(&self, s: usize) -> &StateTransition {
        &self.0[s]
    }

    pub fn n_states(&self) -> usize {
        self.0.len()
    }

    pub fn replace(&self, s: usize, t: StateTransition) -> TransitionFunction {
        let mut out = self.clone();
        out.0[s] = t;
        out
    }
}

/// Transition function with one state's transitions left open.
#[derive(Clone, Debug, PartialEq)]
pub struct IncompleteTransition {
    missing_state: usize,
    rows: Vec<StateTransition>,
}

impl IncompleteTransition {
    /// `rows` lists every state except `missing_state`, in state order.
    pub fn new(missing_state: usize, rows: Vec<StateTransition>) -> Result<Self> {
        if missing_state > rows.len() {
            return Err(invalid(format!(
                "missing state {missing_state} out of range for {} states",
                rows.len() + 1
            )));
        }
        let n = rows.len() + 1;
        if rows.iter().any(|r| r.n_states() != n) {
            return Err(invalid("incomplete transition rows disagree on state count"));
        }
        Ok(IncompleteTransition { missing_state, rows })
    }

    pub fn from_full(p: &TransitionFunction, missing_state: usize) -> Self {
        let rows = p
            .0
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != missing_state)
            .map(|(_, t)| t.clone())
            .collect();
        IncompleteTransition { missing_state, rows }
    }

    pub fn missing_state(&self) -> usize {
        self.missing_state
    }

    pub fn n_states(&self) -> usize {
        self.rows.len() + 1
    }

    pub fn get(&self, s: usize) -> Option<&StateTransition> {
        match s.cmp(&self.missing_state) {
            std::cmp::Ordering::Less => self.rows.get(s),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => self.rows.get(s - 1),
        }
    }

    pub fn complete(&self, p_missing: StateTransition) -> TransitionFunction {
        let mut rows = self.rows.clone();
        rows.insert(self.missing_state, p_missing);
        TransitionFunction(rows)
    }
}

/// Per-state action distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    #[serde(rename = "policy")]
    dist: Vec<Vec<f64>>,
}

impl Policy {
    pub fn new(dist: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in dist.iter().enumerate() {
            check_distribution(row, || format!("policy at state {s}"))?;
        }
        Ok(Policy { dist })
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let dist = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Policy { dist }
    }

    pub fn n_states(&self) -> usize {
        self.dist.len()
    }

    pub fn at(&self, s: usize) -> &[f64] {
        &self.dist[s]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.dist[s][a]
    }

    pub fn is_deterministic(&self) -> bool {
        self.dist.iter().all(|row| row.iter().filter(|&&p| p == 1.0).count() == 1)
    }

    /// Chosen action per state, if deterministic.
    pub fn actions(&self) -> Option<Vec<usize>> {
        self.dist
            .iter()
            .map(|row| row.iter().position(|&p| p == 1.0))
            .collect()
    }

    pub fn with_action(&self, s: usize, a: usize) -> Policy {
        let mut out = self.clone();
        out.dist[s].iter_mut().for_each(|p| *p = 0.0);
        out.dist[s][a] = 1.0;
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn new(values: Vec<f64>) -> Self {
        ValueFunction { values }
    }

    /// `<initial, V>`.
    pub fn expected_return(&self, initial: &[f64]) -> f64 {
        initial.iter().zip(&self.values).map(|(p, v)| p * v).sum()
    }

    pub fn max_abs_diff(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Generator metadata attached to benchmark models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub be_actions: Vec<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    pub start: usize,
    pub goal: usize,
    pub obstacles: Vec<usize>,
}

/// A validated robust MDP. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Rmdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    sense: Sense,
    initial: Vec<f64>,
    rewards: Vec<Vec<f64>>,
    enabled: Vec<Vec<bool>>,
    uncertainty: Vec<UncertaintySet>,
    compiled: Vec<CompiledSet>,
    meta: Option<ModelMeta>,
}

impl PartialEq for Rmdp {
    fn eq(&self, other: &Self) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.gamma == other.gamma
            && self.sense == other.sense
            && self.initial == other.initial
            && self.rewards == other.rewards
            && self.enabled == other.enabled
            && self.uncertainty == other.uncertainty
            && self.meta == other.meta
    }
}

/// Unvalidated model parts; [`Rmdp::new`] checks every invariant.
#[derive(Clone, Debug)]
pub struct RmdpParts {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub sense: Sense,
    pub initial: Vec<f64>,
    pub rewards: Vec<Vec<f64>>,
    pub enabled: Option<Vec<Vec<bool>>>,
    pub uncertainty: Vec<UncertaintySet>,
    pub meta: Option<ModelMeta>,
}

impl Rmdp {
    pub fn new(parts: RmdpParts) -> Result<Self> {
        let RmdpParts { n_states, n_actions, gamma, sense, initial, rewards, enabled, uncertainty, meta } =
            parts;
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("model needs at least one state and one action"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid(format!("discount {gamma} outside (0, 1)")));
        }
        if initial.len() != n_states {
            return Err(invalid(format!("initial has {} entries, expected {n_states}", initial.len())));
        }
        check_distribution(&initial, || "initial distribution".into())?;
        if rewards.len() != n_states {
            return Err(invalid(format!("rewards has {} rows, expected {n_states}", rewards.len())));
        }
        for (s, row) in rewards.iter().enumerate() {
            if row.len() != n_actions {
                return Err(invalid(format!("rewards[{s}] has {} entries, expected {n_actions}", row.len())));
            }
            if let Some(a) = row.iter().position(|r| !r.is_finite() || *r < 0.0) {
                return Err(invalid(format!("reward at state {s}, action {a} is negative or non-finite")));
            }
        }
        let enabled = enabled.unwrap_or_else(|| vec![vec![true; n_actions]; n_states]);
        if enabled.len() != n_states || enabled.iter().any(|r| r.len() != n_actions) {
            return Err(invalid(format!("enabled mask must be {n_states}x{n_actions}")));
        }
        if let Some(s) = enabled.iter().position(|r| !r.iter().any(|&e| e)) {
            return Err(invalid(format!("state {s} has no enabled action")));
        }
        if uncertainty.len() != n_states {
            return Err(invalid(format!(
                "uncertainty has {} entries, expected {n_states}",
                uncertainty.len()
            )));
        }
        if let Some(meta) = &meta {
            if meta.be_actions.len() != n_states || meta.be_actions.iter().any(|r| r.len() != n_actions) {
                return Err(invalid(format!("meta.be_actions must be {n_states}x{n_actions}")));
            }
            if meta.start >= n_states || meta.goal >= n_states || meta.obstacles.iter().any(|&o| o >= n_states) {
                return Err(invalid("meta refers to a state out of range"));
            }
        }
        let compiled = uncertainty
            .iter()
            .enumerate()
            .map(|(s, u)| u.compile(s, n_actions, n_states))
            .collect::<Result<Vec<_>>>()?;
        Ok(Rmdp { n_states, n_actions, gamma, sense, initial, rewards, enabled, uncertainty, compiled, meta })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s][a]
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn is_enabled(&self, s: usize, a: usize) -> bool {
        self.enabled[s][a]
    }

    pub fn enabled_actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_actions).filter(move |&a| self.enabled[s][a])
    }

    pub fn enabled_mask(&self) -> &[Vec<bool>] {
        &self.enabled
    }

    pub fn uncertainty(&self, s: usize) -> &UncertaintySet {
        &self.uncertainty[s]
    }

    pub(crate) fn compiled(&self, s: usize) -> &CompiledSet {
        &self.compiled[s]
    }

    pub fn meta(&self) -> Option<&ModelMeta> {
        self.meta.as_ref()
    }

    /// Copy of this model with a different uncertainty set at every state.
    pub fn with_uncertainty(&self, uncertainty: Vec<UncertaintySet>) -> Result<Rmdp> {
        let mut parts = self.to_parts();
        parts.uncertainty = uncertainty;
        Rmdp::new(parts)
    }

    pub fn to_parts(&self) -> RmdpParts {
        RmdpParts {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            sense: self.sense,
            initial: self.initial.clone(),
            rewards: self.rewards.clone(),
            enabled: Some(self.enabled.clone()),
            uncertainty: self.uncertainty.clone(),
            meta: self.meta.clone(),
        }
    }

    /// A feasible interior (or relative-interior) point of every state's set.
    pub fn center_transition(&self) -> TransitionFunction {
        TransitionFunction(self.compiled.iter().map(CompiledSet::center).collect())
    }

    /// Number of deterministic policies over enabled actions.
    pub fn policy_space_size(&self) -> u128 {
        self.enabled.iter().fold(1u128, |acc, row| {
            acc.saturating_mul(row.iter().filter(|&&e| e).count() as u128)
        })
    }

    pub fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.n_states() != self.n_states {
            return Err(invalid(format!("policy covers {} states, model has {}", pi.n_states(), self.n_states)));
        }
        for s in 0..self.n_states {
            let row = pi.at(s);
            if row.len() != self.n_actions {
                return Err(invalid(format!("policy at state {s} has {} actions, expected {}", row.len(), self.n_actions)));
            }
            if let Some(a) = (0..self.n_actions).find(|&a| row[a] > 0.0 && !self.enabled[s][a]) {
                return Err(invalid(format!("policy uses disabled action {a} at state {s}")));
            }
        }
        Ok(())
    }

    pub fn check_transition(&self, p: &TransitionFunction) -> Result<()> {
        if p.n_states() != self.n_states {
            return Err(invalid("transition function has the wrong number of states"));
        }
        if p.0.iter().any(|t| t.n_actions() != self.n_actions || t.n_states() != self.n_states) {
            return Err(invalid("transition function has the wrong shape"));
        }
        Ok(())
    }

    /// True if `t` lies in the uncertainty set of `s` within `tol`.
    pub fn contains(&self, s: usize, t: &StateTransition, tol: f64) -> bool {
        self.uncertainty[s].contains(t, tol)
    }
}
