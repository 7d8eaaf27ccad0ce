use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Extremum, StateTransition, PROB_TOL};
use crate::error::{invalid, Error, Result};
use crate::polytope::ReducedPolytope;

/// Per-(action, successor) probability bounds; `[action][successor]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

/// Linear constraints `A x <= b` over the stacked row-major transition matrix.
///
/// With `support` present, action `a` may only move to `support[a]` and the
/// columns of `A` index the supported entries, action by action. Without it
/// every action has full support and `A` has `|A|·|S|` columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolytopeSet {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum UncertaintySet {
    Interval(IntervalSet),
    Polytope(PolytopeSet),
}

impl UncertaintySet {
    /// The singleton set containing `t`.
    pub fn point(t: &StateTransition) -> Self {
        let rows: Vec<Vec<f64>> = (0..t.n_actions()).map(|a| t.row(a).to_vec()).collect();
        UncertaintySet::Interval(IntervalSet { lower: rows.clone(), upper: rows })
    }

    pub fn contains(&self, t: &StateTransition, tol: f64) -> bool {
        let rows_ok = (0..t.n_actions()).all(|a| {
            let row = t.row(a);
            row.iter().all(|&p| p >= -tol) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        });
        if !rows_ok {
            return false;
        }
        match self {
            UncertaintySet::Interval(iv) => (0..t.n_actions()).all(|a| {
                t.row(a)
                    .iter()
                    .enumerate()
                    .all(|(s, &p)| p >= iv.lower[a][s] - tol && p <= iv.upper[a][s] + tol)
            }),
            UncertaintySet::Polytope(poly) => {
                let support = poly.support_or_full(t.n_actions(), t.n_states());
                let mut x = Vec::new();
                for (a, succ) in support.iter().enumerate() {
                    let covered: f64 = succ.iter().map(|&s| t.get(a, s)).sum();
                    if covered < 1.0 - tol {
                        return false;
                    }
                    x.extend(succ.iter().map(|&s| t.get(a, s)));
                }
                poly.a.iter().zip(&poly.b).all(|(row, &rhs)| {
                    row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() <= rhs + tol
                })
            }
        }
    }

    pub(crate) fn compile(&self, state: usize, n_actions: usize, n_states: usize) -> Result<CompiledSet> {
        let infeasible = || Error::InfeasibleUncertainty { state };
        match self {
            UncertaintySet::Interval(iv) => {
                check_interval_shape(iv, state, n_actions, n_states)?;
                let mut rows = Vec::with_capacity(n_actions);
                for a in 0..n_actions {
                    let (lo, hi) = (&iv.lower[a], &iv.upper[a]);
                    if lo.iter().zip(hi).any(|(l, h)| l > h) {
                        return Err(infeasible());
                    }
                    let lo_sum: f64 = lo.iter().sum();
                    let hi_sum: f64 = hi.iter().sum();
                    if lo_sum > 1.0 + PROB_TOL || hi_sum < 1.0 - PROB_TOL {
                        return Err(infeasible());
                    }
                    let succ: Vec<usize> = (0..n_states).filter(|&s| hi[s] > 0.0).collect();
                    rows.push(IntervalRow {
                        lo: succ.iter().map(|&s| lo[s]).collect(),
                        hi: succ.iter().map(|&s| hi[s]).collect(),
                        succ,
                    });
                }
                let UncertaintySet::Polytope(poly) = interval_to_polytope(self) else { unreachable!() };
                let poly = CompiledPolytope::compile(&poly, n_actions, n_states)?.ok_or_else(infeasible)?;
                Ok(CompiledSet { interval: Some(rows), poly })
            }
            UncertaintySet::Polytope(p) => {
                check_polytope_shape(p, state, n_actions, n_states)?;
                let poly = CompiledPolytope::compile(p, n_actions, n_states)?.ok_or_else(infeasible)?;
                Ok(CompiledSet { interval: None, poly })
            }
        }
    }
}

impl PolytopeSet {
    pub fn support_or_full(&self, n_actions: usize, n_states: usize) -> Vec<Vec<usize>> {
        self.support
            .clone()
            .unwrap_or_else(|| vec![(0..n_states).collect(); n_actions])
    }
}

fn check_interval_shape(iv: &IntervalSet, state: usize, n_actions: usize, n_states: usize) -> Result<()> {
    let shape_ok = |m: &Vec<Vec<f64>>| m.len() == n_actions && m.iter().all(|r| r.len() == n_states);
    if !shape_ok(&iv.lower) || !shape_ok(&iv.upper) {
        return Err(invalid(format!(
            "interval bounds at state {state} must be {n_actions}x{n_states}"
        )));
    }
    let bad = |x: &f64| !x.is_finite() || *x < 0.0 || *x > 1.0;
    if iv.lower.iter().chain(&iv.upper).flatten().any(bad) {
        return Err(invalid(format!("interval bound at state {state} outside [0, 1]")));
    }
    Ok(())
}

fn check_polytope_shape(p: &PolytopeSet, state: usize, n_actions: usize, n_states: usize) -> Result<()> {
    if let Some(support) = &p.support {
        if support.len() != n_actions {
            return Err(invalid(format!("support at state {state} must list {n_actions} actions")));
        }
        for (a, succ) in support.iter().enumerate() {
            if succ.is_empty() || succ.windows(2).any(|w| w[0] >= w[1]) || succ.iter().any(|&s| s >= n_states) {
                return Err(invalid(format!(
                    "support at state {state}, action {a} must be nonempty, strictly increasing, and in range"
                )));
            }
        }
    }
    let n_vars: usize = p.support_or_full(n_actions, n_states).iter().map(Vec::len).sum();
    if p.a.len() != p.b.len() {
        return Err(invalid(format!("polytope at state {state}: {} rows in A but {} in b", p.a.len(), p.b.len())));
    }
    if let Some(i) = p.a.iter().position(|r| r.len() != n_vars) {
        return Err(invalid(format!("polytope at state {state}: row {i} has wrong width, expected {n_vars}")));
    }
    if p.a.iter().flatten().chain(&p.b).any(|x| !x.is_finite()) {
        return Err(invalid(format!("polytope at state {state} has a non-finite coefficient")));
    }
    Ok(())
}

/// Rewrites an interval set as an equivalent polytope.
///
/// Successors with upper bound 0 are left out of the support; vacuous bounds
/// are dropped; point bounds become opposite inequality pairs.
///
/// # Panics
/// If `u` is not an interval set.
pub fn interval_to_polytope(u: &UncertaintySet) -> UncertaintySet {
    let UncertaintySet::Interval(iv) = u else {
        panic!("interval_to_polytope expects an interval set");
    };
    let n_states = iv.lower.first().map_or(0, Vec::len);
    let support: Vec<Vec<usize>> = iv
        .upper
        .iter()
        .map(|hi| (0..n_states).filter(|&s| hi[s] > 0.0).collect())
        .collect();
    let n_vars: usize = support.iter().map(Vec::len).sum();
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut col = 0;
    for (act, succ) in support.iter().enumerate() {
        for &s in succ {
            let (lo, hi) = (iv.lower[act][s], iv.upper[act][s]);
            if hi < 1.0 {
                let mut row = vec![0.0; n_vars];
                row[col] = 1.0;
                a.push(row);
                b.push(hi);
            }
            if lo > 0.0 {
                let mut row = vec![0.0; n_vars];
                row[col] = -1.0;
                a.push(row);
                b.push(-lo);
            }
            col += 1;
        }
    }
    let full = support.iter().all(|s| s.len() == n_states);
    UncertaintySet::Polytope(PolytopeSet { a, b, support: (!full).then_some(support) })
}

#[derive(Clone, Debug)]
pub(crate) struct IntervalRow {
    succ: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl IntervalRow {
    /// Sort-and-saturate: start from the lower bounds and pour the remaining
    /// mass into successors in order of preference.
    fn saturate(&self, c: impl Fn(usize) -> f64, dir: Extremum) -> Vec<f64> {
        let mut order: Vec<usize> = (0..self.succ.len()).collect();
        let key: Vec<f64> = self.succ.iter().map(|&s| c(s)).collect();
        order.sort_by(|&i, &j| {
            let o = key[i].total_cmp(&key[j]);
            match dir {
                Extremum::Min => o,
                Extremum::Max => o.reverse(),
            }
            .then(i.cmp(&j))
        });
        let mut x = self.lo.clone();
        let mut mass = 1.0 - self.lo.iter().sum::<f64>();
        for i in order {
            if mass <= 0.0 {
                break;
            }
            let add = (self.hi[i] - self.lo[i]).min(mass);
            x[i] += add;
            mass -= add;
        }
        x
    }
}

/// A polytope over the supported entries, compiled to hull coordinates.
#[derive(Clone, Debug)]
pub(crate) struct CompiledPolytope {
    n_actions: usize,
    n_states: usize,
    support: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    reduced: ReducedPolytope,
    fixed: Vec<bool>,
}

impl CompiledPolytope {
    fn compile(p: &PolytopeSet, n_actions: usize, n_states: usize) -> Result<Option<Self>> {
        let support = p.support_or_full(n_actions, n_states);
        let mut offsets = vec![0];
        for succ in &support {
            offsets.push(offsets.last().unwrap() + succ.len());
        }
        let blocks: Vec<Range<usize>> = (0..n_actions).map(|a| offsets[a]..offsets[a + 1]).collect();
        let n = offsets[n_actions];
        let Some(reduced) = ReducedPolytope::compile(n, &blocks, &p.a, &p.b)? else {
            return Ok(None);
        };
        let fixed = blocks
            .iter()
            .map(|blk| {
                let probe = blk.clone().map(|j| {
                    let mut e = vec![0.0; blk.len()];
                    e[j - blk.start] = 1.0;
                    let (_, cy) = reduced.project_block(blk.clone(), &e);
                    cy.iter().map(|v| v.abs()).fold(0.0, f64::max)
                });
                probe.fold(0.0, f64::max) <= 1e-12
            })
            .collect();
        Ok(Some(CompiledPolytope { n_actions, n_states, support, offsets, reduced, fixed }))
    }

    pub fn reduced(&self) -> &ReducedPolytope {
        &self.reduced
    }

    pub fn block(&self, a: usize) -> Range<usize> {
        self.offsets[a]..self.offsets[a + 1]
    }

    pub fn to_transition(&self, x: &[f64]) -> StateTransition {
        let mut probs = vec![0.0; self.n_actions * self.n_states];
        for (a, succ) in self.support.iter().enumerate() {
            let row = &mut probs[a * self.n_states..(a + 1) * self.n_states];
            scatter_clean(row, succ, &x[self.block(a)]);
        }
        StateTransition { n_actions: self.n_actions, n_states: self.n_states, probs }
    }

    pub fn to_x(&self, t: &StateTransition) -> Vec<f64> {
        self.support
            .iter()
            .enumerate()
            .flat_map(|(a, succ)| succ.iter().map(move |&s| t.get(a, s)))
            .collect()
    }

    /// Objective `sum_a w_a P(a) . v` as a stacked vector over supported entries.
    fn stacked(&self, weights: &[f64], v: &[f64]) -> Vec<f64> {
        self.support
            .iter()
            .zip(weights)
            .flat_map(|(succ, &w)| succ.iter().map(move |&s| w * v[s]))
            .collect()
    }

    fn optimize(&self, c: &[f64], dir: Extremum, secondary: Option<&[f64]>) -> Result<StateTransition> {
        let (_, cy) = self.reduced.project(c);
        let sy = secondary.map(|s| self.reduced.project(s).1);
        let y = self.reduced.optimize(&cy, dir, sy.as_deref())?;
        Ok(self.to_transition(&self.reduced.to_x(&y)))
    }

    fn action_value(&self, a: usize, v: &[f64], dir: Extremum) -> Result<f64> {
        let blk = self.block(a);
        let c: Vec<f64> = self.support[a].iter().map(|&s| v[s]).collect();
        let (c0, cy) = self.reduced.project_block(blk, &c);
        if self.fixed[a] {
            return Ok(c0);
        }
        let y = self.reduced.optimize(&cy, dir, None)?;
        Ok(c0 + cy.iter().zip(&y).map(|(p, q)| p * q).sum::<f64>())
    }
}

/// An uncertainty set prepared for repeated optimization.
#[derive(Clone, Debug)]
pub(crate) struct CompiledSet {
    interval: Option<Vec<IntervalRow>>,
    poly: CompiledPolytope,
}

impl CompiledSet {
    pub fn polytope(&self) -> &CompiledPolytope {
        &self.poly
    }

    /// `ext_{P in set} P(a) . v`.
    pub fn action_value(&self, a: usize, v: &[f64], dir: Extremum) -> Result<f64> {
        match &self.interval {
            Some(rows) => {
                let row = &rows[a];
                let x = row.saturate(|s| v[s], dir);
                Ok(row.succ.iter().zip(&x).map(|(&s, p)| p * v[s]).sum())
            }
            None => self.poly.action_value(a, v, dir),
        }
    }

    /// Optimizer of `sum_a w_a P(a) . v`, ties broken by the secondary weights.
    ///
    /// Weights must be nonnegative.
    pub fn optimize(
        &self,
        weights: &[f64],
        v: &[f64],
        dir: Extremum,
        secondary: Option<&[f64]>,
    ) -> Result<StateTransition> {
        match &self.interval {
            // Rows are independent; optimizing each one serves any nonnegative weighting.
            Some(_) => Ok(self.optimize_rows(|_, s| v[s], dir)),
            None => {
                let c = self.poly.stacked(weights, v);
                let sec = secondary.map(|w| self.poly.stacked(w, v));
                self.poly.optimize(&c, dir, sec.as_deref())
            }
        }
    }

    /// Same as [`optimize`](Self::optimize) but always through the LP path.
    #[cfg(test)]
    pub fn optimize_lp(&self, weights: &[f64], v: &[f64], dir: Extremum) -> Result<StateTransition> {
        let c = self.poly.stacked(weights, v);
        self.poly.optimize(&c, dir, None)
    }

    /// Optimizer of a general linear objective `c[a][s]` over the set.
    pub fn optimize_linear(&self, c: &[Vec<f64>], dir: Extremum) -> Result<StateTransition> {
        match &self.interval {
            Some(_) => Ok(self.optimize_rows(|a, s| c[a][s], dir)),
            None => {
                let stacked: Vec<f64> = self
                    .poly
                    .support
                    .iter()
                    .enumerate()
                    .flat_map(|(a, succ)| succ.iter().map(move |&s| c[a][s]))
                    .collect();
                self.poly.optimize(&stacked, dir, None)
            }
        }
    }

    fn optimize_rows(&self, c: impl Fn(usize, usize) -> f64, dir: Extremum) -> StateTransition {
        let rows = self.interval.as_ref().expect("interval rows");
        let (na, ns) = (self.poly.n_actions, self.poly.n_states);
        let mut probs = vec![0.0; na * ns];
        for (a, row) in rows.iter().enumerate() {
            let x = row.saturate(|s| c(a, s), dir);
            scatter_clean(&mut probs[a * ns..(a + 1) * ns], &row.succ, &x);
        }
        StateTransition { n_actions: na, n_states: ns, probs }
    }

    /// A point in the relative interior.
    pub fn center(&self) -> StateTransition {
        let r = &self.poly.reduced;
        self.poly.to_transition(&r.to_x(r.center()))
    }

    /// Successors that action `a` may reach; every member vanishes elsewhere.
    pub fn support(&self, a: usize) -> &[usize] {
        &self.poly.support[a]
    }

    /// Row `a` of `center()` as `(successor, probability)` pairs.
    pub fn center_row(&self, a: usize) -> Vec<(usize, f64)> {
        let r = &self.poly.reduced;
        let x = r.to_x(r.center());
        let vals = &x[self.poly.block(a)];
        let sum: f64 = vals.iter().map(|p| p.max(0.0)).sum();
        let scale = if sum > 0.0 { 1.0 / sum } else { 1.0 };
        self.poly.support[a]
            .iter()
            .zip(vals)
            .map(|(&t, p)| (t, p.max(0.0) * scale))
            .filter(|e| e.1 != 0.0)
            .collect()
    }
}

/// Writes support values into a dense row, clipping round-off negatives and
/// renormalizing over the support only.
fn scatter_clean(row: &mut [f64], succ: &[usize], vals: &[f64]) {
    let sum: f64 = vals.iter().map(|p| p.max(0.0)).sum();
    let scale = if sum > 0.0 { 1.0 / sum } else { 1.0 };
    for (&s, &p) in succ.iter().zip(vals) {
        debug_assert!(p > -1e-6, "probability {p} far below zero");
        row[s] = p.max(0.0) * scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box2(lo: [f64; 2], hi: [f64; 2]) -> UncertaintySet {
        UncertaintySet::Interval(IntervalSet { lower: vec![lo.to_vec()], upper: vec![hi.to_vec()] })
    }

    #[test]
    fn vacuous_interval_becomes_full_simplex() {
        let p = interval_to_polytope(&box2([0.0, 0.0], [1.0, 1.0]));
        let UncertaintySet::Polytope(p) = p else { panic!() };
        assert!(p.a.is_empty() && p.support.is_none());
        let c = UncertaintySet::Polytope(p).compile(0, 1, 2).unwrap();
        assert_eq!(c.poly.reduced.dim(), 1);
    }

    #[test]
    fn point_interval_compiles_to_a_point() {
        let u = box2([0.3, 0.7], [0.3, 0.7]);
        let c = u.compile(0, 1, 2).unwrap();
        assert_eq!(c.poly.reduced.dim(), 0);
        let t = c.center();
        assert!((t.get(0, 0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn infeasible_interval_names_the_state() {
        let err = box2([0.0, 0.0], [0.4, 0.4]).compile(3, 1, 2).unwrap_err();
        assert_eq!(err.to_string(), "infeasible uncertainty set at state 3");
    }

    #[test]
    fn saturate_matches_lp() {
        let u = UncertaintySet::Interval(IntervalSet {
            lower: vec![vec![0.1, 0.0, 0.2, 0.0]],
            upper: vec![vec![0.5, 0.3, 0.6, 0.4]],
        });
        let c = u.compile(0, 1, 4).unwrap();
        let v = [3.0, -1.0, 2.0, 0.5];
        for dir in [Extremum::Min, Extremum::Max] {
            let fast = c.optimize(&[1.0], &v, dir, None).unwrap();
            let lp = c.optimize_lp(&[1.0], &v, dir).unwrap();
            assert!((fast.expect(0, &v) - lp.expect(0, &v)).abs() < 1e-9);
        }
    }

    #[test]
    fn support_restricts_successors() {
        let p = UncertaintySet::Polytope(PolytopeSet {
            a: vec![vec![1.0, 0.0]],
            b: vec![0.4],
            support: Some(vec![vec![1, 2]]),
        });
        let c = p.compile(0, 1, 3).unwrap();
        let t = c.optimize(&[1.0], &[0.0, 5.0, 1.0], Extremum::Max, None).unwrap();
        assert_eq!(t.get(0, 0), 0.0);
        assert!((t.get(0, 1) - 0.4).abs() < 1e-9);
        assert!(p.contains(&t, 1e-9));
    }
}
