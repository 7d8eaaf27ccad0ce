use nalgebra::{DMatrix, DVector};

use super::{Policy, Rmdp, TransitionFunction, ValueFunction};
use crate::error::{Error, Result};

/// `P^pi` as a dense `|S| x |S|` matrix.
pub fn induced_matrix(pi: &Policy, p: &TransitionFunction) -> DMatrix<f64> {
    let n = p.n_states();
    let mut m = DMatrix::zeros(n, n);
    for s in 0..n {
        let t = p.state(s);
        for (a, &w) in pi.at(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (s2, &q) in t.row(a).iter().enumerate() {
                m[(s, s2)] += w * q;
            }
        }
    }
    m
}

/// `R^pi` per state.
pub fn induced_rewards(m: &Rmdp, pi: &Policy) -> Vec<f64> {
    (0..m.n_states())
        .map(|s| pi.at(s).iter().enumerate().map(|(a, w)| w * m.reward(s, a)).sum())
        .collect()
}

/// Solves `(I - gamma P^pi) V = R^pi`.
pub fn evaluate_policy_exact(m: &Rmdp, pi: &Policy, p: &TransitionFunction) -> Result<ValueFunction> {
    m.check_policy(pi)?;
    m.check_transition(p)?;
    let n = m.n_states();
    let a = DMatrix::identity(n, n) - induced_matrix(pi, p) * m.gamma();
    let r = DVector::from_vec(induced_rewards(m, pi));
    let v = a
        .clone()
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Numeric("singular policy evaluation system".into()))?;
    let resid = (&a * &v - &r).amax();
    if resid > 1e-9 * v.amax().max(1.0) {
        return Err(Error::Numeric(format!("policy evaluation residual {resid:e}")));
    }
    Ok(ValueFunction::new(v.iter().copied().collect()))
}
