//! Robust value iteration for s-rectangular RMDPs.
//!
//! Each sweep evaluates, for every state and allowed action, the robust
//! Q-value `R(s,a) + gamma * ext_{P in P_s} P(a) . V` against the previous
//! sweep's values, then takes the greedy action. Sweeps are Jacobi-style so
//! the per-state work is independent and the result does not depend on the
//! thread schedule.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Extremum, Policy, Rmdp, StateTransition, TransitionFunction, ValueFunction};
use crate::orbe::CandidateSet;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub inner_lp_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { epsilon: 1e-4, max_iterations: 1000, inner_lp_tolerance: 1e-9 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.inner_lp_tolerance >= 0.0) {
            return Err(Error::Config("inner_lp_tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RobustSolution {
    pub value: ValueFunction,
    pub policy: Policy,
    pub worst_transition: TransitionFunction,
    pub iterations: usize,
    pub converged: bool,
    pub adversary: Extremum,
    /// `max |V_{n+1} - V_n|` per sweep.
    pub residuals: Vec<f64>,
}

impl RobustSolution {
    /// `<initial, V>`.
    pub fn robust_return(&self, m: &Rmdp) -> f64 {
        self.value.expected_return(m.initial())
    }

    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                residual: self.residuals.last().copied().unwrap_or(f64::INFINITY),
            })
        }
    }
}

/// Absolute tolerance under which two Q-values count as tied.
pub(crate) fn tie_tol(x: f64) -> f64 {
    1e-9 * (1.0 + x.abs())
}

fn allowed(m: &Rmdp, restriction: Option<&CandidateSet>, s: usize, a: usize) -> bool {
    m.is_enabled(s, a) && restriction.is_none_or(|r| r.contains(s, a))
}

/// Robust Q-values of every allowed action at one state.
fn state_q(
    m: &Rmdp,
    s: usize,
    v: &[f64],
    adversary: Extremum,
    restriction: Option<&CandidateSet>,
) -> Result<Vec<Option<f64>>> {
    let set = m.compiled(s);
    (0..m.n_actions())
        .map(|a| {
            if !allowed(m, restriction, s, a) {
                return Ok(None);
            }
            let ev = set.action_value(a, v, adversary)?;
            Ok(Some(m.reward(s, a) + m.gamma() * ev))
        })
        .collect()
}

/// Robust Q-values for all states; `None` marks disallowed actions.
pub fn robust_q_values(
    m: &Rmdp,
    v: &ValueFunction,
    adversary: Extremum,
    restriction: Option<&CandidateSet>,
) -> Result<Vec<Vec<Option<f64>>>> {
    (0..m.n_states())
        .into_par_iter()
        .map(|s| state_q(m, s, &v.values, adversary, restriction))
        .collect()
}

/// Best value and the first action (in declared order) attaining it up to ties.
fn greedy(q: &[Option<f64>], agent: Extremum) -> (usize, f64) {
    let best = q.iter().flatten().copied().fold(agent.worst(), |acc, x| agent.pick(acc, x));
    let a = q
        .iter()
        .position(|x| x.is_some_and(|x| (x - best).abs() <= tie_tol(best)))
        .expect("every state has an allowed action");
    (a, best)
}

/// Actions within `tol` of the best robust Q-value, per state.
pub fn greedy_action_set(
    m: &Rmdp,
    v: &ValueFunction,
    adversary: Extremum,
    restriction: Option<&CandidateSet>,
    tol: f64,
) -> Result<CandidateSet> {
    let agent = m.sense().agent();
    let q = robust_q_values(m, v, adversary, restriction)?;
    let sets = q
        .iter()
        .map(|row| {
            let (_, best) = greedy(row, agent);
            (0..row.len())
                .filter(|&a| row[a].is_some_and(|x| (x - best).abs() <= tol))
                .collect()
        })
        .collect();
    CandidateSet::new(sets)
}

/// The optimal robust action sets of a stage-1 solution.
pub fn optimal_action_set(m: &Rmdp, sol: &RobustSolution, tol: f64) -> Result<CandidateSet> {
    greedy_action_set(m, &sol.value, sol.adversary, None, tol)
}

/// Optimizes `R^pi(s) + gamma * sum_a pi(s,a) P(a) . v` over the set of `s`.
pub fn inner_optimize_state(
    m: &Rmdp,
    s: usize,
    pi_s: &[f64],
    v: &ValueFunction,
    direction: Extremum,
) -> Result<(StateTransition, f64)> {
    let t = m.compiled(s).optimize(pi_s, &v.values, direction, None)?;
    Ok((t.clone(), q_of(m, s, pi_s, &t, &v.values)))
}

fn q_of(m: &Rmdp, s: usize, pi_s: &[f64], t: &StateTransition, v: &[f64]) -> f64 {
    pi_s.iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(a, &w)| w * (m.reward(s, a) + m.gamma() * t.expect(a, v)))
        .sum()
}

/// Extreme transition function at `v` for a deterministic `policy`.
///
/// The policy's own action is optimized first; among its optimizers, the
/// summed expectation of the `secondary` actions is optimized next. This
/// picks, for example, the corner where tied twin actions also see the
/// extreme outcome.
pub fn extreme_transition(
    m: &Rmdp,
    v: &ValueFunction,
    policy: &Policy,
    secondary: Option<&CandidateSet>,
    dir: Extremum,
) -> Result<TransitionFunction> {
    let rows = (0..m.n_states())
        .into_par_iter()
        .map(|s| {
            let sec: Option<Vec<f64>> = secondary.map(|c| {
                (0..m.n_actions()).map(|a| if c.contains(s, a) { 1.0 } else { 0.0 }).collect()
            });
            m.compiled(s).optimize(policy.at(s), &v.values, dir, sec.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransitionFunction(rows))
}

pub fn robust_value_iteration(
    m: &Rmdp,
    cfg: &SolverConfig,
    restriction: Option<&CandidateSet>,
    adversary: Extremum,
) -> Result<RobustSolution> {
    robust_value_iteration_from(m, cfg, restriction, adversary, None)
}

/// Robust value iteration starting from `init` (zeros when absent).
pub fn robust_value_iteration_from(
    m: &Rmdp,
    cfg: &SolverConfig,
    restriction: Option<&CandidateSet>,
    adversary: Extremum,
    init: Option<&ValueFunction>,
) -> Result<RobustSolution> {
    cfg.validate()?;
    if let Some(r) = restriction {
        r.check_against(m)?;
    }
    let agent = m.sense().agent();
    let n = m.n_states();
    let mut v = init.map_or_else(|| vec![0.0; n], |v| v.values.clone());
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut warned = false;
    for _ in 0..cfg.max_iterations {
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|s| state_q(m, s, &v, adversary, restriction).map(|q| greedy(&q, agent).1))
            .collect::<Result<_>>()?;
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if let Some(&prev) = residuals.last() {
            if !warned && delta > m.gamma() * prev + 1e-9 {
                log::warn!("value iteration residual grew from {prev:e} to {delta:e}; the scheme may be oscillating");
                warned = true;
            }
        }
        residuals.push(delta);
        v = next;
        if delta <= cfg.epsilon {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "robust value iteration stopped after {} sweeps with residual {:e}",
            cfg.max_iterations,
            residuals.last().copied().unwrap_or(f64::NAN)
        );
    }
    let value = ValueFunction::new(v);
    let q = robust_q_values(m, &value, adversary, restriction)?;
    let actions: Vec<usize> = q.iter().map(|row| greedy(row, agent).0).collect();
    let policy = Policy::deterministic(&actions, m.n_actions());
    let ties = greedy_action_set(m, &value, adversary, restriction, 10.0 * cfg.epsilon)?;
    let worst_transition = extreme_transition(m, &value, &policy, Some(&ties), adversary)?;
    Ok(RobustSolution {
        value,
        policy,
        worst_transition,
        iterations: residuals.len(),
        converged,
        adversary,
        residuals,
    })
}

/// Robust value of a fixed policy: iterates `V <- R^pi + gamma ext_P P^pi V`.
pub fn robust_policy_evaluation(
    m: &Rmdp,
    pi: &Policy,
    cfg: &SolverConfig,
    adversary: Extremum,
) -> Result<RobustSolution> {
    cfg.validate()?;
    m.check_policy(pi)?;
    let n = m.n_states();
    let det = pi.actions();
    let sweep = |v: &[f64]| -> Result<Vec<f64>> {
        (0..n)
            .into_par_iter()
            .map(|s| match &det {
                Some(acts) => {
                    let a = acts[s];
                    Ok(m.reward(s, a) + m.gamma() * m.compiled(s).action_value(a, v, adversary)?)
                }
                None => {
                    let t = m.compiled(s).optimize(pi.at(s), v, adversary, None)?;
                    Ok(q_of(m, s, pi.at(s), &t, v))
                }
            })
            .collect()
    };
    let mut v = vec![0.0; n];
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        let next = sweep(&v)?;
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        residuals.push(delta);
        v = next;
        if delta <= cfg.epsilon {
            converged = true;
            break;
        }
    }
    let value = ValueFunction::new(v);
    let worst_transition = extreme_transition(m, &value, pi, None, adversary)?;
    Ok(RobustSolution {
        value,
        policy: pi.clone(),
        worst_transition,
        iterations: residuals.len(),
        converged,
        adversary,
        residuals,
    })
}
