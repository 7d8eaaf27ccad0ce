//! The value at one state as a degree-one rational function of that state's
//! transition probabilities, and its directional derivatives.
//!
//! Fix a policy and every state's transitions except those of `s̄`. Let `h(s')`
//! be the expected discount factor at the first visit to `s̄` from `s'` and
//! `u(s')` the expected discounted reward collected before that visit (with
//! `h(s̄) = 1`, `u(s̄) = 0`). Then `V(s') = u(s') + h(s') V(s̄)` and solving the
//! Bellman equation at `s̄` gives
//!
//! ```text
//! Z(P) = (r0 + sum_a alpha_a . P(a)) / (1 - sum_a beta_a . P(a))
//! alpha_a = gamma pi(s̄,a) u,  beta_a = gamma pi(s̄,a) h,  r0 = R^pi(s̄)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::model::{
    induced_matrix, induced_rewards, IncompleteTransition, Policy, Rmdp, StateTransition,
    TransitionFunction,
};

#[derive(Clone, Debug, PartialEq)]
pub struct RationalValueForm {
    pub base_reward: f64,
    /// Stacked `[action][successor]`, row-major.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub missing_state: usize,
    n_states: usize,
}

/// A feasible direction at one state: per-action rows summing to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    n_actions: usize,
    n_states: usize,
    delta: Vec<f64>,
}

impl Direction {
    pub fn new(n_actions: usize, n_states: usize, delta: Vec<f64>) -> Result<Self> {
        if delta.len() != n_actions * n_states {
            return Err(invalid("direction has the wrong shape"));
        }
        for row in delta.chunks(n_states.max(1)) {
            let scale = row.iter().map(|x| x.abs()).fold(1.0, f64::max);
            if row.iter().sum::<f64>().abs() > 1e-9 * scale {
                return Err(invalid("direction rows must sum to zero"));
            }
        }
        Ok(Direction { n_actions, n_states, delta })
    }

    /// `to - from`.
    pub fn between(from: &StateTransition, to: &StateTransition) -> Self {
        let delta = to.as_slice().iter().zip(from.as_slice()).map(|(p, q)| p - q).collect();
        Direction { n_actions: from.n_actions(), n_states: from.n_states(), delta }
    }

    pub fn zero(n_actions: usize, n_states: usize) -> Self {
        Direction { n_actions, n_states, delta: vec![0.0; n_actions * n_states] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.delta
    }

    pub fn is_zero(&self) -> bool {
        self.delta.iter().all(|&x| x == 0.0)
    }

    /// `at + t * self`, without feasibility checks.
    pub fn step(&self, at: &StateTransition, t: f64) -> StateTransition {
        let probs: Vec<f64> = at.as_slice().iter().zip(&self.delta).map(|(p, d)| p + t * d).collect();
        StateTransition::new(self.n_actions, self.n_states, probs.clone())
            .unwrap_or_else(|_| StateTransition::from_stacked_clean(self.n_actions, self.n_states, probs))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

impl RationalValueForm {
    pub fn new(base_reward: f64, alpha: Vec<f64>, beta: Vec<f64>, missing_state: usize, n_states: usize) -> Result<Self> {
        if alpha.len() != beta.len() || n_states == 0 || !alpha.len().is_multiple_of(n_states) {
            return Err(invalid("rational form coefficients have mismatched shapes"));
        }
        Ok(RationalValueForm { base_reward, alpha, beta, missing_state, n_states })
    }

    fn from_hitting(pi_s: &[f64], r0: f64, gamma: f64, u: &[f64], h: &[f64], missing: usize) -> Self {
        let n_states = u.len();
        let mut alpha = Vec::with_capacity(pi_s.len() * n_states);
        let mut beta = Vec::with_capacity(pi_s.len() * n_states);
        for &w in pi_s {
            alpha.extend(u.iter().map(|x| gamma * w * x));
            beta.extend(h.iter().map(|x| gamma * w * x));
        }
        RationalValueForm { base_reward: r0, alpha, beta, missing_state: missing, n_states }
    }

    pub fn numerator(&self, p: &StateTransition) -> f64 {
        self.base_reward + dot(&self.alpha, p.as_slice())
    }

    pub fn denominator(&self, p: &StateTransition) -> f64 {
        1.0 - dot(&self.beta, p.as_slice())
    }

    pub fn value(&self, p: &StateTransition) -> f64 {
        self.numerator(p) / self.denominator(p)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
}

/// `(N' D + N D') / D^2` with `N' = alpha . v`, `D' = -beta . v`.
pub fn directional_derivative(form: &RationalValueForm, at: &StateTransition, v: &Direction) -> f64 {
    if v.is_zero() {
        return 0.0;
    }
    let n = form.numerator(at);
    let d = form.denominator(at);
    let dn = dot(&form.alpha, v.as_slice());
    let dd = dot(&form.beta, v.as_slice());
    (dn * d + n * dd) / (d * d)
}

/// Coefficients through the `(|S|-1)`-dimensional hitting-time systems.
pub fn rational_coefficients(
    m: &Rmdp,
    pi: &Policy,
    p_incomplete: &IncompleteTransition,
) -> Result<RationalValueForm> {
    m.check_policy(pi)?;
    let n = m.n_states();
    if p_incomplete.n_states() != n {
        return Err(invalid("incomplete transition has the wrong number of states"));
    }
    let sbar = p_incomplete.missing_state();
    let gamma = m.gamma();
    let r = induced_rewards(m, pi);
    let others: Vec<usize> = (0..n).filter(|&s| s != sbar).collect();
    let k = others.len();

    // Rows of P^pi for every state but s̄.
    let row = |s: usize| -> Vec<f64> {
        let t = p_incomplete.get(s).expect("state other than the missing one");
        let mut out = vec![0.0; n];
        for (a, &w) in pi.at(s).iter().enumerate() {
            if w > 0.0 {
                for (s2, q) in t.row(a).iter().enumerate() {
                    out[s2] += w * q;
                }
            }
        }
        out
    };
    if k == 0 {
        return Ok(RationalValueForm::from_hitting(pi.at(sbar), r[sbar], gamma, &[0.0], &[1.0], sbar));
    }
    let rows: Vec<Vec<f64>> = others.iter().map(|&s| row(s)).collect();
    let a = DMatrix::from_fn(k, k, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * rows[i][others[j]]
    });
    let mut rhs = DMatrix::zeros(k, 2);
    for (i, &s) in others.iter().enumerate() {
        rhs[(i, 0)] = r[s];
        rhs[(i, 1)] = gamma * rows[i][sbar];
    }
    let sol = a
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular hitting-time system".into()))?;
    let resid = (&a * &sol - &rhs).amax();
    if resid > 1e-9 * sol.amax().max(1.0) {
        return Err(Error::Numeric(format!("hitting-time residual {resid:e}")));
    }
    let mut u = vec![0.0; n];
    let mut h = vec![0.0; n];
    h[sbar] = 1.0;
    for (i, &s) in others.iter().enumerate() {
        u[s] = sol[(i, 0)];
        h[s] = sol[(i, 1)];
    }
    Ok(RationalValueForm::from_hitting(pi.at(sbar), r[sbar], gamma, &u, &h, sbar))
}

/// Rational forms for every state from one inverse of `I - gamma P^pi`.
///
/// With `G = (I - gamma P^pi)^{-1}` and `V = G R^pi`, the hitting quantities
/// for `s̄` are `h(s') = G(s', s̄) / G(s̄, s̄)` and `u(s') = V(s') - h(s') V(s̄)`.
/// Neither depends on the transitions out of `s̄`, so each form is valid for
/// every completion and for any action substituted at `s̄`.
pub struct RationalBatch {
    g: DMatrix<f64>,
    values: Vec<f64>,
    gamma: f64,
    rewards: Vec<Vec<f64>>,
    pi: Policy,
}

impl RationalBatch {
    pub fn new(m: &Rmdp, pi: &Policy, p: &TransitionFunction) -> Result<Self> {
        m.check_policy(pi)?;
        m.check_transition(p)?;
        let n = m.n_states();
        let a = DMatrix::identity(n, n) - induced_matrix(pi, p) * m.gamma();
        let g = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numeric("singular policy evaluation system".into()))?;
        let r = DVector::from_vec(induced_rewards(m, pi));
        let v = &g * &r;
        let resid = (&a * &v - &r).amax();
        if resid > 1e-9 * v.amax().max(1.0) {
            return Err(Error::Numeric(format!("policy evaluation residual {resid:e}")));
        }
        Ok(RationalBatch {
            g,
            values: v.iter().copied().collect(),
            gamma: m.gamma(),
            rewards: m.rewards().to_vec(),
            pi: pi.clone(),
        })
    }

    /// Values of the policy at the transition function used to build the batch.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn hitting(&self, sbar: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.values.len();
        let diag = self.g[(sbar, sbar)];
        let mut h: Vec<f64> = (0..n).map(|s| self.g[(s, sbar)] / diag).collect();
        h[sbar] = 1.0;
        let mut u: Vec<f64> = (0..n).map(|s| self.values[s] - h[s] * self.values[sbar]).collect();
        u[sbar] = 0.0;
        (u, h)
    }

    /// Form at `sbar` for the batch policy.
    pub fn form(&self, sbar: usize) -> RationalValueForm {
        self.form_with(sbar, self.pi.at(sbar))
    }

    /// Form at `sbar` with the policy's choice there replaced by `pi_s`.
    pub fn form_with(&self, sbar: usize, pi_s: &[f64]) -> RationalValueForm {
        let (u, h) = self.hitting(sbar);
        let r0 = pi_s.iter().enumerate().map(|(a, w)| w * self.rewards[sbar][a]).sum();
        RationalValueForm::from_hitting(pi_s, r0, self.gamma, &u, &h, sbar)
    }
}

/// The nonzero transitions of `P^pi`, row by row.
pub struct SparseChain {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseChain {
    pub fn new(pi: &Policy, p: &TransitionFunction) -> Self {
        let rows = (0..p.n_states())
            .map(|s| {
                let mut row: Vec<(usize, f64)> = Vec::new();
                for (a, &w) in pi.at(s).iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (t, &q) in p.state(s).row(a).iter().enumerate() {
                        if q == 0.0 {
                            continue;
                        }
                        match row.iter_mut().find(|e| e.0 == t) {
                            Some(e) => e.1 += w * q,
                            None => row.push((t, w * q)),
                        }
                    }
                }
                row
            })
            .collect();
        SparseChain { rows }
    }

    /// Policy values from Gauss-Seidel sweeps, with a bound on their sup-norm
    /// error: `|(I - gamma P^pi) V - R^pi|_inf / (1 - gamma)`, valid for any `V`.
    pub fn values(&self, rewards: &[f64], gamma: f64, max_sweeps: usize) -> (Vec<f64>, f64) {
        let n = self.rows.len();
        let mut v = vec![0.0; n];
        let mut err = f64::INFINITY;
        for sweep in 0..max_sweeps {
            for s in 0..n {
                let (mut acc, mut self_p) = (0.0, 0.0);
                for &(t, q) in &self.rows[s] {
                    if t == s {
                        self_p += q;
                    } else {
                        acc += q * v[t];
                    }
                }
                v[s] = (rewards[s] + gamma * acc) / (1.0 - gamma * self_p);
            }
            // The residual costs one more pass; check it only every few sweeps.
            if sweep % 8 == 7 || sweep + 1 == max_sweeps {
                let resid = (0..n)
                    .map(|s| {
                        let pv: f64 = self.rows[s].iter().map(|&(t, q)| q * v[t]).sum();
                        (v[s] - rewards[s] - gamma * pv).abs()
                    })
                    .fold(0.0, f64::max);
                err = resid / (1.0 - gamma);
                if err <= 1e-12 * v.iter().fold(1.0_f64, |acc, x| acc.max(x.abs())) {
                    break;
                }
            }
        }
        (v, err)
    }

    /// True iff `target` is reachable from some state in `from` other than
    /// `target` itself. Where it is not, the hitting quantity `h` for `target` is 0.
    pub fn reaches(&self, from: &[usize], target: usize) -> bool {
        let mut seen = vec![false; self.rows.len()];
        seen[target] = true;
        let mut stack: Vec<usize> = from.iter().copied().filter(|&t| t != target).collect();
        for &t in &stack {
            seen[t] = true;
        }
        while let Some(x) = stack.pop() {
            for &(y, _) in &self.rows[x] {
                if y == target {
                    return true;
                }
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        false
    }
}

/// True iff both forms agree in value and in derivative along `p2 - p1` at both ends.
pub fn segment_equivalence_check(
    form_a: &RationalValueForm,
    form_b: &RationalValueForm,
    p1: &StateTransition,
    p2: &StateTransition,
    tol: f64,
) -> bool {
    let v = Direction::between(p1, p2);
    [p1, p2].iter().all(|p| {
        (form_a.value(p) - form_b.value(p)).abs() <= tol
            && (directional_derivative(form_a, p, &v) - directional_derivative(form_b, p, &v)).abs() <= tol
    })
}
