//! Staged refinement of optimal robust policies to optimal-robust best-effort
//! (ORBE) policies.
//!
//! 1. Keep the actions that are optimal against the adversary.
//! 2. Among them, keep those optimal under the most favourable transitions.
//! 3. Fix a surviving reference policy, its worst-case transitions `P̌` and
//!    best-case transitions `P̂`. At every state, keep the actions whose value
//!    improves fastest when moving from `P̌` toward `P̂`.
//! 4. Among those, keep the actions whose value degrades slowest at `P̂` along
//!    the same direction.
//!
//! For minimizing models every max/min above is swapped.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{
    evaluate_policy_exact, induced_rewards, Extremum, Policy, Rmdp, StateTransition, TransitionFunction, UncertaintySet,
    ValueFunction,
};
use crate::model::CompiledSet;
use crate::polytope::{ReducedPolytope, FEAS_TOL};
use crate::rational::{directional_derivative, Direction, RationalBatch, SparseChain};
use crate::solver::{
    extreme_transition, greedy_action_set, optimal_action_set, robust_policy_evaluation,
    robust_value_iteration, robust_value_iteration_from, RobustSolution, SolverConfig,
};

/// Per-state sets of allowed actions; the product is a policy set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    sets: Vec<Vec<usize>>,
}

impl CandidateSet {
    pub fn new(mut sets: Vec<Vec<usize>>) -> Result<Self> {
        for (s, set) in sets.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                return Err(invalid(format!("candidate set at state {s} is empty")));
            }
        }
        Ok(CandidateSet { sets })
    }

    /// Every enabled action.
    pub fn full(m: &Rmdp) -> Self {
        CandidateSet { sets: (0..m.n_states()).map(|s| m.enabled_actions(s).collect()).collect() }
    }

    /// The single action of a deterministic policy at each state.
    pub fn from_policy(pi: &Policy) -> Result<Self> {
        let acts = pi.actions().ok_or_else(|| invalid("policy is not deterministic"))?;
        Ok(CandidateSet { sets: acts.into_iter().map(|a| vec![a]).collect() })
    }

    pub fn at(&self, s: usize) -> &[usize] {
        &self.sets[s]
    }

    pub fn contains(&self, s: usize, a: usize) -> bool {
        self.sets[s].binary_search(&a).is_ok()
    }

    pub fn n_states(&self) -> usize {
        self.sets.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    pub fn is_singleton(&self) -> bool {
        self.sets.iter().all(|s| s.len() == 1)
    }

    /// The member choosing the smallest action index everywhere.
    pub fn first_member(&self, n_actions: usize) -> Policy {
        let acts: Vec<usize> = self.sets.iter().map(|s| s[0]).collect();
        Policy::deterministic(&acts, n_actions)
    }

    pub fn is_subset_of(&self, other: &CandidateSet) -> bool {
        self.sets.iter().enumerate().all(|(s, set)| set.iter().all(|&a| other.contains(s, a)))
    }

    pub(crate) fn check_against(&self, m: &Rmdp) -> Result<()> {
        if self.sets.len() != m.n_states() {
            return Err(invalid("restriction covers the wrong number of states"));
        }
        for (s, set) in self.sets.iter().enumerate() {
            if set.iter().any(|&a| a >= m.n_actions() || !m.is_enabled(s, a)) {
                return Err(invalid(format!("restriction at state {s} names a disabled or unknown action")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    MaxminUnique,
    MaxmaxUnique,
    DerivMax,
    DerivMin,
}

/// Outcome of [`interior_condition`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteriorClass {
    Interior,
    Covering,
    Violated,
}

/// Per-state interior status recorded in the report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteriorStatus {
    Interior,
    Covering,
    Perturbed,
}

/// Worst- and best-case transition functions of a reference policy.
#[derive(Clone, Debug)]
pub struct WorstBestPair {
    pub worst: TransitionFunction,
    pub best: TransitionFunction,
    pub worst_value: f64,
    pub best_value: f64,
}

impl WorstBestPair {
    /// `P̂_s - P̌_s`.
    pub fn direction(&self, s: usize) -> Direction {
        Direction::between(self.worst.state(s), self.best.state(s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Anchor {
    Worst,
    Best,
}

#[derive(Clone, Debug)]
pub struct OrbeConfig {
    pub solver: SolverConfig,
    /// Optimal-action tolerance; `None` means ten times the solver epsilon.
    pub action_tol: Option<f64>,
    /// Relative tolerance for derivative ties: `deriv_tol_rel * (1 + |best|)`.
    pub deriv_tol_rel: f64,
    /// Largest step taken off a facet when perturbing the best-case point.
    pub perturbation_step: f64,
    pub allow_nonconverged: bool,
}

impl Default for OrbeConfig {
    fn default() -> Self {
        OrbeConfig {
            solver: SolverConfig::default(),
            action_tol: None,
            deriv_tol_rel: 1e-7,
            perturbation_step: 0.01,
            allow_nonconverged: false,
        }
    }
}

impl OrbeConfig {
    pub fn action_tol(&self) -> f64 {
        self.action_tol.unwrap_or(10.0 * self.solver.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.action_tol() >= 0.0) || !(self.deriv_tol_rel >= 0.0) {
            return Err(Error::Config("tolerances must be nonnegative".into()));
        }
        if !(self.perturbation_step > 0.0) {
            return Err(Error::Config("perturbation step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub maxmin_s: f64,
    pub maxmax_s: f64,
    pub deriv_max_s: f64,
    pub deriv_min_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub stage: Stage,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbeReport {
    pub stage_reached: Stage,
    pub candidate_counts: Vec<StageCounts>,
    #[serde(flatten)]
    pub policy: Policy,
    /// Robust return of the returned policy.
    pub robust_value: f64,
    /// Robust return of the first-stage optimum.
    pub optimal_robust_value: f64,
    /// `None` where no derivative comparison was needed.
    pub interior_condition: Vec<Option<InteriorStatus>>,
    /// Set when the worst- and best-case points coincide and the derivative
    /// stages had nothing to compare.
    pub derivatives_skipped: bool,
    pub iterations: Vec<usize>,
    pub timings: StageTimings,
}

fn require_converged(sol: &RobustSolution, cfg: &OrbeConfig) -> Result<()> {
    if cfg.allow_nonconverged {
        Ok(())
    } else {
        sol.ensure_converged()
    }
}

/// Transition functions at which the reference policy attains its worst- and
/// best-case returns, given the corresponding value functions.
pub fn worst_best_pair(
    m: &Rmdp,
    reference: &Policy,
    worst_values: &ValueFunction,
    best_values: &ValueFunction,
    ties: &CandidateSet,
) -> Result<WorstBestPair> {
    let sense = m.sense();
    let worst = extreme_transition(m, worst_values, reference, Some(ties), sense.adversary())?;
    let best = extreme_transition(m, best_values, reference, Some(ties), sense.agent())?;
    let worst_value = evaluate_policy_exact(m, reference, &worst)?.expected_return(m.initial());
    let best_value = evaluate_policy_exact(m, reference, &best)?.expected_return(m.initial());
    Ok(WorstBestPair { worst, best, worst_value, best_value })
}

/// Classifies the segment between two points of one state's set.
pub fn interior_condition(u: &UncertaintySet, p_worst: &StateTransition, p_best: &StateTransition) -> Result<InteriorClass> {
    let set = u.compile(0, p_worst.n_actions(), p_worst.n_states())?;
    Ok(classify(&set, p_worst, p_best))
}

fn classify(set: &CompiledSet, p_worst: &StateTransition, p_best: &StateTransition) -> InteriorClass {
    let poly = set.polytope();
    let r = poly.reduced();
    if r.dim() == 0 {
        return InteriorClass::Covering;
    }
    let y1 = r.to_y(&poly.to_x(p_worst));
    let y2 = r.to_y(&poly.to_x(p_best));
    let gap = y1.iter().zip(&y2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if r.dim() == 1 && gap > FEAS_TOL {
        return InteriorClass::Covering;
    }
    if best_segment_slack(r, &y1, &y2) > FEAS_TOL {
        InteriorClass::Interior
    } else {
        InteriorClass::Violated
    }
}

/// `max_{lambda in [0,1]} min_i slack_i(lambda y1 + (1 - lambda) y2)`.
fn best_segment_slack(r: &ReducedPolytope, y1: &[f64], y2: &[f64]) -> f64 {
    let s1 = r.slacks(y1);
    let s2 = r.slacks(y2);
    let at = |l: f64| s1.iter().zip(&s2).map(|(a, b)| l * a + (1.0 - l) * b).fold(f64::INFINITY, f64::min);
    let mut cands = vec![0.0, 1.0];
    // The minimum of the slack lines is concave; its peak sits at an endpoint
    // or at a crossing of two lines.
    for i in 0..s1.len() {
        for j in (i + 1)..s1.len() {
            let (di, dj) = (s1[i] - s2[i], s1[j] - s2[j]);
            if (di - dj).abs() > 1e-15 {
                let l = (s2[j] - s2[i]) / (di - dj);
                if l > 0.0 && l < 1.0 {
                    cands.push(l);
                }
            }
        }
    }
    cands.into_iter().map(at).fold(f64::NEG_INFINITY, f64::max)
}

/// Moves `p_best` toward the set's center until it clears every facet it
/// touches by `min(step, half the smallest center slack)`.
pub fn perturb_best_point(
    u: &UncertaintySet,
    p_worst: &StateTransition,
    p_best: &StateTransition,
    step: f64,
) -> Result<StateTransition> {
    let set = u.compile(0, p_worst.n_actions(), p_worst.n_states())?;
    perturb(&set, p_worst, p_best, step)
}

fn perturb(set: &CompiledSet, p_worst: &StateTransition, p_best: &StateTransition, step: f64) -> Result<StateTransition> {
    if classify(set, p_worst, p_best) != InteriorClass::Violated {
        return Ok(p_best.clone());
    }
    let poly = set.polytope();
    let r = poly.reduced();
    let center = r.center();
    let center_slacks = r.slacks(center);
    let min_center = center_slacks.iter().copied().fold(f64::INFINITY, f64::min);
    if r.dim() == 0 || min_center <= FEAS_TOL {
        return Err(Error::Numeric("no relative interior point to perturb toward".into()));
    }
    let delta = step.min(0.5 * min_center);
    let y = r.to_y(&poly.to_x(p_best));
    let tight = r
        .slacks(&y)
        .iter()
        .zip(&center_slacks)
        .filter(|(s, _)| **s <= FEAS_TOL)
        .map(|(_, c)| *c)
        .fold(f64::INFINITY, f64::min);
    let tau = if tight.is_finite() { (delta / tight).min(1.0) } else { 0.0 };
    let moved: Vec<f64> = y.iter().zip(center).map(|(a, c)| a + tau * (c - a)).collect();
    Ok(poly.to_transition(&r.to_x(&moved)))
}

/// Per-candidate quantities for enclosing `sign * dZ_a` without the hitting
/// quantities `h` of the reference policy.
///
/// With `D = 1 - gamma h.P(a)` and the Q-gap `delta = Q_a - V(s)`, the
/// derivative along `v` is `gamma (V.v + delta h.v / D) / D`. `err` bounds the
/// sup-norm error of the values behind `v_dot` and `delta`.
struct Screen {
    v_dot: f64,
    l1: f64,
    delta: f64,
}

impl Screen {
    /// Uses only `D` in `[1 - gamma, 1]` and `|h.v| <= |v|_1 / 2`.
    fn coarse(&self, gamma: f64, err: f64, sign: f64) -> (f64, f64) {
        if self.l1 == 0.0 {
            return (0.0, 0.0);
        }
        let floor = 1.0 - gamma;
        let rad = (self.delta.abs() + 2.0 * err) * 0.5 * self.l1 / floor + err * self.l1;
        let (lo, hi) = (self.v_dot - rad, self.v_dot + rad);
        orient(gamma * lo.min(lo / floor), gamma * hi.max(hi / floor), sign)
    }

    /// With `D` and `h.v` known exactly.
    fn exact(&self, gamma: f64, err: f64, sign: f64, d: f64, hv: f64) -> (f64, f64) {
        let t1 = (self.delta - 2.0 * err) * hv / d;
        let t2 = (self.delta + 2.0 * err) * hv / d;
        let lo = self.v_dot - err * self.l1 + t1.min(t2);
        let hi = self.v_dot + err * self.l1 + t1.max(t2);
        orient(gamma * lo / d, gamma * hi / d, sign)
    }
}

fn orient(lo: f64, hi: f64, sign: f64) -> (f64, f64) {
    if sign > 0.0 {
        (lo, hi)
    } else {
        (-hi, -lo)
    }
}

/// The keep set when every candidate is provably in or out of the tolerance
/// band around the best derivative; `None` otherwise.
fn decide_by_bounds(set: &[usize], bounds: &[(f64, f64)], rel: f64) -> Option<Vec<usize>> {
    let b_lo = bounds.iter().map(|b| b.0).fold(f64::NEG_INFINITY, f64::max);
    let b_hi = bounds.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
    let min_abs = if b_lo <= 0.0 && b_hi >= 0.0 { 0.0 } else { b_lo.abs().min(b_hi.abs()) };
    let (t_lo, t_hi) = (rel * (1.0 + min_abs), rel * (1.0 + b_lo.abs().max(b_hi.abs())));
    let mut kept = Vec::new();
    for (i, (&a, &(lo, hi))) in set.iter().zip(bounds).enumerate() {
        // The best is this candidate or another; only the others can push it away.
        let others_hi = bounds.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| b.1).fold(f64::NEG_INFINITY, f64::max);
        if others_hi - lo <= t_lo {
            kept.push(a);
        } else if b_lo - hi <= t_hi {
            return None;
        }
    }
    Some(kept)
}

/// Keeps, per state, the candidates with the best (at `P̌`) or worst (at `P̂`)
/// directional derivative along `P̂ - P̌`, from the agent's point of view.
///
/// Other states follow the candidate set's first member.
pub fn derivative_stage(
    m: &Rmdp,
    candidates: &CandidateSet,
    pair: &WorstBestPair,
    at: Anchor,
    deriv_tol_rel: f64,
) -> Result<CandidateSet> {
    let point = match at {
        Anchor::Worst => &pair.worst,
        Anchor::Best => &pair.best,
    };
    let keep = match at {
        Anchor::Worst => m.sense().agent(),
        Anchor::Best => m.sense().agent().opposite(),
    };
    let delta = |s: usize, a: usize| {
        let (b, w) = (pair.best.state(s).row(a), pair.worst.state(s).row(a));
        (0..b.len()).filter(|&t| b[t] != w[t]).map(|t| (t, b[t] - w[t])).collect()
    };
    let point_row = |s: usize, a: usize| {
        point.state(s).row(a).iter().enumerate().filter(|(_, p)| **p != 0.0).map(|(t, &p)| (t, p)).collect()
    };
    keep_by_derivative(m, candidates, point, point_row, delta, keep, deriv_tol_rel)
}

/// The worst-anchored derivative stage with each state's interior anchor
/// (the center of its set) standing in for the best case.
///
/// Only the direction rows of candidate actions are formed, so no full
/// transition function is built for the anchor. `worst` must be a member of
/// the sets; its rows are read on each action's support only.
pub fn derivative_toward_center(
    m: &Rmdp,
    candidates: &CandidateSet,
    worst: &TransitionFunction,
    deriv_tol_rel: f64,
) -> Result<CandidateSet> {
    m.check_transition(worst)?;
    let point_row = |s: usize, a: usize| -> Vec<(usize, f64)> {
        let t = worst.state(s);
        m.compiled(s).support(a).iter().map(|&x| (x, t.get(a, x))).filter(|e| e.1 != 0.0).collect()
    };
    let delta = |s: usize, a: usize| {
        let mut d = m.compiled(s).center_row(a);
        for (t, w) in point_row(s, a) {
            match d.iter_mut().find(|e| e.0 == t) {
                Some(e) => e.1 -= w,
                None => d.push((t, -w)),
            }
        }
        d.retain(|e| e.1 != 0.0);
        d
    };
    keep_by_derivative(m, candidates, worst, point_row, delta, m.sense().agent(), deriv_tol_rel)
}

/// Shared core of the derivative stages. `point_row(s, a)` and `delta(s, a)`
/// are the nonzero parts of row `a` at state `s` of the anchor point and of the
/// direction; `keep` is the direction in which derivatives are preferred.
///
/// Most states are settled by enclosures of the derivatives that need only
/// sparse dot products. The rest use one dense inverse of `I - gamma P^pi`.
fn keep_by_derivative(
    m: &Rmdp,
    candidates: &CandidateSet,
    point: &TransitionFunction,
    point_row: impl Fn(usize, usize) -> Vec<(usize, f64)>,
    delta: impl Fn(usize, usize) -> Vec<(usize, f64)>,
    keep: Extremum,
    deriv_tol_rel: f64,
) -> Result<CandidateSet> {
    if candidates.is_singleton() {
        return Ok(candidates.clone());
    }
    let reference = candidates.first_member(m.n_actions());
    let sign = if keep == Extremum::Max { 1.0 } else { -1.0 };
    let gamma = m.gamma();
    let chain = SparseChain::new(&reference, point);
    let (values, err) = chain.values(&induced_rewards(m, &reference), gamma, 20 * m.n_states().max(100));
    let mut sets: Vec<Option<Vec<usize>>> = (0..m.n_states())
        .map(|s| {
            let set = candidates.at(s);
            if set.len() == 1 {
                return Some(set.to_vec());
            }
            if !err.is_finite() {
                return None;
            }
            let at_rows: Vec<Vec<(usize, f64)>> = set.iter().map(|&a| point_row(s, a)).collect();
            let rows: Vec<Vec<(usize, f64)>> = set.iter().map(|&a| delta(s, a)).collect();
            let dot = |r: &[(usize, f64)]| -> f64 { r.iter().map(|&(t, x)| values[t] * x).sum() };
            let parts: Vec<Screen> = set
                .iter()
                .zip(rows.iter().zip(&at_rows))
                .map(|(&a, (d, p))| Screen {
                    v_dot: dot(d),
                    l1: d.iter().map(|e| e.1.abs()).sum(),
                    delta: m.reward(s, a) + gamma * dot(p) - values[s],
                })
                .collect();
            let coarse: Vec<(f64, f64)> = parts.iter().map(|q| q.coarse(gamma, err, sign)).collect();
            if let Some(kept) = decide_by_bounds(set, &coarse, deriv_tol_rel) {
                return Some(kept);
            }
            // h is 1 at s and 0 wherever s is unreachable, so it is known
            // exactly on the candidates' rows unless one of them leads back.
            let support: Vec<usize> = rows.iter().chain(&at_rows).flatten().map(|e| e.0).collect();
            if chain.reaches(&support, s) {
                return None;
            }
            let at_s = |r: &[(usize, f64)]| r.iter().find(|e| e.0 == s).map_or(0.0, |e| e.1);
            let fine: Vec<(f64, f64)> = rows
                .iter()
                .zip(&at_rows)
                .zip(&parts)
                .map(|((d, p), q)| q.exact(gamma, err, sign, 1.0 - gamma * at_s(p), at_s(d)))
                .collect();
            decide_by_bounds(set, &fine, deriv_tol_rel)
        })
        .collect();
    if sets.iter().any(Option::is_none) {
        let batch = RationalBatch::new(m, &reference, point)?;
        let (na, ns) = (m.n_actions(), m.n_states());
        for (s, slot) in sets.iter_mut().enumerate().filter(|(_, x)| x.is_none()) {
            let set = candidates.at(s);
            let derivs: Vec<f64> = set
                .iter()
                .map(|&a| {
                    let mut stacked = vec![0.0; na * ns];
                    for (t, x) in delta(s, a) {
                        stacked[a * ns + t] = x;
                    }
                    let v = Direction::new(na, ns, stacked)?;
                    let mut pi_s = vec![0.0; na];
                    pi_s[a] = 1.0;
                    Ok(directional_derivative(&batch.form_with(s, &pi_s), point.state(s), &v))
                })
                .collect::<Result<_>>()?;
            let best = derivs.iter().copied().fold(keep.worst(), |acc, x| keep.pick(acc, x));
            let tol = deriv_tol_rel * (1.0 + best.abs());
            *slot = Some(
                set.iter()
                    .zip(&derivs)
                    .filter(|(_, d)| (**d - best).abs() <= tol)
                    .map(|(&a, _)| a)
                    .collect(),
            );
        }
    }
    let sets = sets.into_iter().map(|x| x.expect("every state decided")).collect();
    CandidateSet::new(sets)
}

/// Fixed-transition value iteration over the allowed actions, in the agent's direction.
fn nominal_values(m: &Rmdp, p: &TransitionFunction, allowed: &CandidateSet, cfg: &SolverConfig, init: &ValueFunction) -> ValueFunction {
    let agent = m.sense().agent();
    let mut v = init.values.clone();
    for _ in 0..cfg.max_iterations {
        let next: Vec<f64> = (0..m.n_states())
            .map(|s| {
                allowed
                    .at(s)
                    .iter()
                    .map(|&a| m.reward(s, a) + m.gamma() * p.state(s).expect(a, &v))
                    .fold(agent.worst(), |acc, x| agent.pick(acc, x))
            })
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta <= cfg.epsilon {
            break;
        }
    }
    ValueFunction::new(v)
}

fn nominal_action_set(m: &Rmdp, p: &TransitionFunction, allowed: &CandidateSet, v: &ValueFunction, tol: f64) -> Result<CandidateSet> {
    let agent = m.sense().agent();
    let sets = (0..m.n_states())
        .map(|s| {
            let q: Vec<(usize, f64)> = allowed
                .at(s)
                .iter()
                .map(|&a| (a, m.reward(s, a) + m.gamma() * p.state(s).expect(a, &v.values)))
                .collect();
            let best = q.iter().map(|x| x.1).fold(agent.worst(), |acc, x| agent.pick(acc, x));
            q.into_iter().filter(|(_, x)| (x - best).abs() <= tol).map(|(a, _)| a).collect()
        })
        .collect();
    CandidateSet::new(sets)
}

/// Runs the full refinement.
pub fn compute_orbe(m: &Rmdp, cfg: &OrbeConfig) -> Result<OrbeReport> {
    cfg.validate()?;
    let sense = m.sense();
    let tol = cfg.action_tol();
    let mut timings = StageTimings::default();
    let mut counts = Vec::new();
    let mut iterations = Vec::new();
    let n = m.n_states();

    let t0 = Instant::now();
    let sol1 = robust_value_iteration(m, &cfg.solver, None, sense.adversary())?;
    require_converged(&sol1, cfg)?;
    let stage1 = optimal_action_set(m, &sol1, tol)?;
    timings.maxmin_s = t0.elapsed().as_secs_f64();
    iterations.push(sol1.iterations);
    counts.push(StageCounts { stage: Stage::MaxminUnique, counts: stage1.counts() });
    let optimal_robust_value = sol1.robust_return(m);

    let finish = |stage: Stage,
                  set: &CandidateSet,
                  counts: Vec<StageCounts>,
                  interior: Vec<Option<InteriorStatus>>,
                  skipped: bool,
                  iterations: Vec<usize>,
                  timings: StageTimings|
     -> Result<OrbeReport> {
        let policy = set.first_member(m.n_actions());
        let robust = robust_policy_evaluation(m, &policy, &cfg.solver, sense.adversary())?;
        Ok(OrbeReport {
            stage_reached: stage,
            candidate_counts: counts,
            robust_value: robust.robust_return(m),
            policy,
            optimal_robust_value,
            interior_condition: interior,
            derivatives_skipped: skipped,
            iterations,
            timings,
        })
    };

    if stage1.is_singleton() {
        return finish(Stage::MaxminUnique, &stage1, counts, vec![None; n], false, iterations, timings);
    }

    let t1 = Instant::now();
    let sol2 = robust_value_iteration_from(m, &cfg.solver, Some(&stage1), sense.agent(), Some(&sol1.value))?;
    require_converged(&sol2, cfg)?;
    let mut stage2 = greedy_action_set(m, &sol2.value, sense.agent(), Some(&stage1), tol)?;
    timings.maxmax_s = t1.elapsed().as_secs_f64();
    iterations.push(sol2.iterations);

    if stage2.is_singleton() {
        counts.push(StageCounts { stage: Stage::MaxmaxUnique, counts: stage2.counts() });
        return finish(Stage::MaxmaxUnique, &stage2, counts, vec![None; n], false, iterations, timings);
    }

    let t2 = Instant::now();
    let mut reference = stage2.first_member(m.n_actions());
    let mut pair = worst_best_pair(m, &reference, &sol1.value, &sol2.value, &stage2)?;

    // Interior condition on every state that still has a choice to make.
    let mut interior = vec![None; n];
    let mut perturbed = false;
    for s in 0..n {
        if stage2.at(s).len() < 2 {
            continue;
        }
        let set = m.compiled(s);
        let (pw, pb) = (pair.worst.state(s), pair.best.state(s));
        interior[s] = Some(match classify(set, pw, pb) {
            InteriorClass::Interior => InteriorStatus::Interior,
            InteriorClass::Covering => InteriorStatus::Covering,
            InteriorClass::Violated => {
                let moved = perturb(set, pw, pb, cfg.perturbation_step)?;
                pair.best.0[s] = moved;
                perturbed = true;
                InteriorStatus::Perturbed
            }
        });
    }
    if perturbed {
        // Re-anchor the best-case selection at the perturbed point.
        let v_plus = nominal_values(m, &pair.best, &stage1, &cfg.solver, &sol2.value);
        stage2 = nominal_action_set(m, &pair.best, &stage1, &v_plus, tol)?;
        let new_ref = stage2.first_member(m.n_actions());
        if new_ref != reference {
            reference = new_ref;
            pair.worst = extreme_transition(m, &sol1.value, &reference, Some(&stage2), sense.adversary())?;
        }
        pair.worst_value = evaluate_policy_exact(m, &reference, &pair.worst)?.expected_return(m.initial());
        pair.best_value = evaluate_policy_exact(m, &reference, &pair.best)?.expected_return(m.initial());
    }
    counts.push(StageCounts { stage: Stage::MaxmaxUnique, counts: stage2.counts() });
    if stage2.is_singleton() {
        timings.maxmax_s += t2.elapsed().as_secs_f64();
        return finish(Stage::MaxmaxUnique, &stage2, counts, interior, false, iterations, timings);
    }

    let skipped = (0..n).all(|s| pair.worst.state(s).distance(pair.best.state(s)) <= 1e-12);
    if skipped {
        log::info!("worst- and best-case transitions coincide; derivative stages skipped");
        return finish(Stage::DerivMin, &stage2, counts, interior, true, iterations, timings);
    }

    let stage3 = derivative_stage(m, &stage2, &pair, Anchor::Worst, cfg.deriv_tol_rel)?;
    timings.deriv_max_s = t2.elapsed().as_secs_f64();
    counts.push(StageCounts { stage: Stage::DerivMax, counts: stage3.counts() });
    if stage3.is_singleton() {
        return finish(Stage::DerivMax, &stage3, counts, interior, false, iterations, timings);
    }

    let t3 = Instant::now();
    let stage4 = derivative_stage(m, &stage3, &pair, Anchor::Best, cfg.deriv_tol_rel)?;
    timings.deriv_min_s = t3.elapsed().as_secs_f64();
    counts.push(StageCounts { stage: Stage::DerivMin, counts: stage4.counts() });
    finish(Stage::DerivMin, &stage4, counts, interior, false, iterations, timings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IntervalSet;

    #[test]
    fn candidate_set_basics() {
        let c = CandidateSet::new(vec![vec![2, 0, 2], vec![1]]).unwrap();
        assert_eq!(c.at(0), &[0, 2]);
        assert!(!c.is_singleton());
        assert_eq!(c.first_member(3).actions(), Some(vec![0, 1]));
        assert!(CandidateSet::new(vec![vec![]]).is_err());
    }

    #[test]
    fn identical_interior_points_are_interior() {
        let u = UncertaintySet::Interval(IntervalSet {
            lower: vec![vec![0.1, 0.1, 0.1]],
            upper: vec![vec![0.8, 0.8, 0.8]],
        });
        let p = StateTransition::from_rows(&[vec![1.0 / 3.0; 3]]).unwrap();
        assert_eq!(interior_condition(&u, &p, &p).unwrap(), InteriorClass::Interior);
        assert_eq!(perturb_best_point(&u, &p, &p, 0.01).unwrap(), p);
    }

    #[test]
    fn triangle_edge_is_violated_then_fixed() {
        let u = UncertaintySet::Interval(IntervalSet { lower: vec![vec![0.0; 3]], upper: vec![vec![1.0; 3]] });
        let pw = StateTransition::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let pb = StateTransition::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(interior_condition(&u, &pw, &pb).unwrap(), InteriorClass::Violated);
        let moved = perturb_best_point(&u, &pw, &pb, 0.01).unwrap();
        assert!(moved.get(0, 2) > 0.0);
        assert_eq!(interior_condition(&u, &pw, &moved).unwrap(), InteriorClass::Interior);
    }
}
