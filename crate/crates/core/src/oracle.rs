//! Brute-force verifiers: vertex enumeration, sampling of uncertainty sets,
//! exhaustive deterministic policies, empirical dominance, finite
//! differences, classical value iteration, and random model corpora.
//!
//! Nothing here goes through the compiled polytopes or the rational form
//! except where noted; the point is to check those paths independently.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    interval_to_polytope, Extremum, IncompleteTransition, IntervalSet, Policy, Rmdp, RmdpParts, Sense,
    StateTransition, TransitionFunction, UncertaintySet, ValueFunction,
};
use crate::rational::{Direction, RationalValueForm};
use crate::solver::{robust_value_iteration, SolverConfig};

/// Largest number of free dimensions handled by [`enumerate_vertices`].
pub const MAX_VERTEX_DIMS: usize = 12;
const MAX_COMBINATIONS: u64 = 2_000_000;
const VERTEX_TOL: f64 = 1e-9;

/// Stacked `(support, A, b)` description over the supported entries.
struct HRep {
    support: Vec<Vec<usize>>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

fn h_rep(u: &UncertaintySet, n_actions: usize, n_states: usize) -> HRep {
    let poly = match u {
        UncertaintySet::Interval(_) => interval_to_polytope(u),
        UncertaintySet::Polytope(_) => u.clone(),
    };
    let UncertaintySet::Polytope(p) = poly else { unreachable!() };
    HRep { support: p.support_or_full(n_actions, n_states), a: p.a, b: p.b }
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc.saturating_mul((n - i) as u64) / (i as u64 + 1))
}

/// Vertices of one state's uncertainty set, by exhaustive active-set search.
///
/// When no constraint couples two actions the set is a product and each
/// action row is enumerated on its own. Errors when a searched block has more
/// than [`MAX_VERTEX_DIMS`] free dimensions or the search is too large.
pub fn enumerate_vertices(u: &UncertaintySet, n_actions: usize, n_states: usize) -> Result<Vec<StateTransition>> {
    let rep = h_rep(u, n_actions, n_states);
    let mut offsets = vec![0];
    for succ in &rep.support {
        offsets.push(offsets.last().unwrap() + succ.len());
    }
    let n = offsets[n_actions];
    let block_of = |j: usize| offsets.partition_point(|&o| o <= j) - 1;
    let touched = |row: &[f64]| -> Vec<usize> {
        let mut blocks: Vec<usize> = row.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(j, _)| block_of(j)).collect();
        blocks.dedup();
        blocks
    };
    let separable = rep.a.iter().all(|r| touched(r).len() <= 1);
    let points: Vec<Vec<f64>> = if separable {
        let mut per_block: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_actions);
        for a in 0..n_actions {
            let (lo, hi) = (offsets[a], offsets[a + 1]);
            let rows: Vec<(Vec<f64>, f64)> = rep
                .a
                .iter()
                .zip(&rep.b)
                .filter(|(r, _)| touched(r) == [a])
                .map(|(r, &b)| (r[lo..hi].to_vec(), b))
                .collect();
            // Rows touching no variable only matter through their sign.
            if rep.a.iter().zip(&rep.b).any(|(r, &b)| touched(r).is_empty() && b < -VERTEX_TOL) {
                return Ok(Vec::new());
            }
            per_block.push(enumerate_block(hi - lo, &[0..hi - lo], &rows)?);
        }
        let total = per_block.iter().fold(1u64, |acc, v| acc.saturating_mul(v.len() as u64));
        if total > MAX_COMBINATIONS {
            return Err(Error::Config(format!("{total} product vertices are too many to list")));
        }
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for block in &per_block {
            out = out
                .iter()
                .flat_map(|prefix| block.iter().map(move |x| [prefix.as_slice(), x.as_slice()].concat()))
                .collect();
        }
        out
    } else {
        let blocks: Vec<std::ops::Range<usize>> = (0..n_actions).map(|a| offsets[a]..offsets[a + 1]).collect();
        let rows: Vec<(Vec<f64>, f64)> = rep.a.iter().cloned().zip(rep.b.iter().copied()).collect();
        enumerate_block(n, &blocks, &rows)?
    };
    Ok(points.into_iter().map(|x| scatter(&rep.support, n_actions, n_states, &x)).collect())
}

/// Vertices of `{x in R^n : rows, x >= 0, each block sums to 1}`.
///
/// Opposite row pairs are equalities and stay active in every candidate
/// system, so only the remaining free dimensions are searched.
fn enumerate_block(n: usize, blocks: &[std::ops::Range<usize>], rows: &[(Vec<f64>, f64)]) -> Result<Vec<Vec<f64>>> {
    let mut eq_all: Vec<(Vec<f64>, f64)> = blocks
        .iter()
        .map(|b| ((0..n).map(|j| if b.contains(&j) { 1.0 } else { 0.0 }).collect(), 1.0))
        .collect();
    let mut paired = vec![false; rows.len()];
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            if !paired[i]
                && !paired[j]
                && rows[i].0.iter().zip(&rows[j].0).all(|(x, y)| *x == -*y)
                && (rows[i].1 + rows[j].1).abs() <= 1e-12
            {
                paired[i] = true;
                paired[j] = true;
                eq_all.push(rows[i].clone());
            }
        }
    }
    // Keep a linearly independent subset; the feasibility check below
    // catches any inconsistency among the dropped ones.
    let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in eq_all {
        let mut trial = eq.clone();
        trial.push(row.clone());
        let mat = DMatrix::from_fn(trial.len(), n, |i, j| trial[i].0[j]);
        if mat.rank(1e-10) == trial.len() {
            eq = trial;
        }
    }
    let n_eq = eq.len();
    let k = n - n_eq;
    if k > MAX_VERTEX_DIMS {
        return Err(Error::Config(format!("{k} free dimensions exceed the vertex enumeration limit")));
    }
    let eq_rows: Vec<Vec<f64>> = eq.iter().map(|(r, _)| r.clone()).collect();
    let eq_rhs: Vec<f64> = eq.iter().map(|(_, b)| *b).collect();
    let mut ineq: Vec<(Vec<f64>, f64)> = rows.iter().zip(&paired).filter(|(_, &p)| !p).map(|(r, _)| r.clone()).collect();
    for j in 0..n {
        let mut r = vec![0.0; n];
        r[j] = -1.0;
        ineq.push((r, 0.0));
    }
    let m = ineq.len();
    if m < k {
        return Ok(Vec::new());
    }
    if binomial(m, k) > MAX_COMBINATIONS {
        return Err(Error::Config(format!("vertex search over C({m}, {k}) active sets is too large")));
    }
    let feasible = |x: &[f64]| {
        rows.iter().all(|(r, rhs)| dot(r, x) <= rhs + VERTEX_TOL)
            && blocks.iter().all(|b| (x[b.clone()].iter().sum::<f64>() - 1.0).abs() <= VERTEX_TOL)
            && x.iter().all(|&v| v >= -VERTEX_TOL)
    };
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mat = DMatrix::from_fn(n, n, |i, j| if i < n_eq { eq_rows[i][j] } else { ineq[idx[i - n_eq]].0[j] });
        let rhs = DVector::from_fn(n, |i, _| if i < n_eq { eq_rhs[i] } else { ineq[idx[i - n_eq]].1 });
        if let Some(x) = mat.lu().solve(&rhs) {
            let x: Vec<f64> = x.iter().copied().collect();
            if x.iter().all(|v| v.is_finite())
                && feasible(&x)
                && !found.iter().any(|f| f.iter().zip(&x).all(|(p, q)| (p - q).abs() <= 1e-8))
            {
                found.push(x);
            }
        }
        // Next k-combination of 0..m.
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(found);
            }
            i -= 1;
            if idx[i] < m - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn scatter(support: &[Vec<usize>], n_actions: usize, n_states: usize, x: &[f64]) -> StateTransition {
    let mut probs = vec![0.0; n_actions * n_states];
    let mut off = 0;
    for (a, succ) in support.iter().enumerate() {
        for (k, &s) in succ.iter().enumerate() {
            probs[a * n_states + s] = x[off + k].max(0.0);
        }
        off += succ.len();
    }
    StateTransition::from_stacked_clean(n_actions, n_states, probs)
}

/// Random convex weights from normalized exponentials.
fn convex_weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|x| x / sum).collect()
}

fn combine(points: &[StateTransition], w: &[f64]) -> StateTransition {
    let mut probs = vec![0.0; points[0].as_slice().len()];
    for (p, &wi) in points.iter().zip(w) {
        for (acc, x) in probs.iter_mut().zip(p.as_slice()) {
            *acc += wi * x;
        }
    }
    StateTransition::from_stacked_clean(points[0].n_actions(), points[0].n_states(), probs)
}

/// Extreme points of a set: enumerated vertices when feasible, otherwise LP
/// optima for random objectives (through the compiled set).
fn extreme_points(m: &Rmdp, s: usize, rng: &mut ChaCha8Rng) -> Result<Vec<StateTransition>> {
    match enumerate_vertices(m.uncertainty(s), m.n_actions(), m.n_states()) {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => {
            let mut pts: Vec<StateTransition> = Vec::new();
            for _ in 0..32 {
                let c: Vec<Vec<f64>> = (0..m.n_actions())
                    .map(|_| (0..m.n_states()).map(|_| rng.random::<f64>() - 0.5).collect())
                    .collect();
                let p = m.compiled(s).optimize_linear(&c, Extremum::Min)?;
                if !pts.iter().any(|q| q.distance(&p) <= 1e-8) {
                    pts.push(p);
                }
            }
            Ok(pts)
        }
    }
}

/// `n` feasible points of one state's set: the vertices (when they fit in
/// half the budget) plus seeded convex combinations.
pub fn sample_uncertainty(m: &Rmdp, s: usize, n: usize, seed: u64) -> Result<Vec<StateTransition>> {
    if n == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verts = extreme_points(m, s, &mut rng)?;
    let mut out = Vec::with_capacity(n);
    if verts.len() <= n / 2 {
        out.extend(verts.iter().cloned());
    } else {
        verts.shuffle(&mut rng);
        out.extend(verts.iter().take(n / 2).cloned());
    }
    while out.len() < n {
        let w = convex_weights(&mut rng, verts.len());
        out.push(combine(&verts, &w));
    }
    Ok(out)
}

/// Transition functions covering every per-state vertex, padded with random
/// mixtures up to `n`. When the full vertex product has at most `n/2`
/// members it is included outright.
pub fn sample_transition_functions(m: &Rmdp, n: usize, seed: u64) -> Result<Vec<TransitionFunction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verts: Vec<Vec<StateTransition>> = (0..m.n_states())
        .map(|s| extreme_points(m, s, &mut rng))
        .collect::<Result<_>>()?;
    let product = verts.iter().fold(1u128, |acc, v| acc.saturating_mul(v.len() as u128));
    let mut out: Vec<TransitionFunction> = Vec::new();
    if product <= (n / 2) as u128 {
        let mut idx = vec![0usize; verts.len()];
        loop {
            out.push(TransitionFunction(idx.iter().zip(&verts).map(|(&i, v)| v[i].clone()).collect()));
            let mut s = 0;
            while s < idx.len() {
                idx[s] += 1;
                if idx[s] < verts[s].len() {
                    break;
                }
                idx[s] = 0;
                s += 1;
            }
            if s == idx.len() {
                break;
            }
        }
    } else {
        let widest = verts.iter().map(Vec::len).max().unwrap_or(1);
        for k in 0..widest {
            out.push(TransitionFunction(verts.iter().map(|v| v[k % v.len()].clone()).collect()));
        }
    }
    while out.len() < n {
        let rows = verts
            .iter()
            .map(|v| {
                if rng.random::<f64>() < 0.5 {
                    v[rng.random_range(0..v.len())].clone()
                } else {
                    combine(v, &convex_weights(&mut rng, v.len()))
                }
            })
            .collect();
        out.push(TransitionFunction(rows));
    }
    Ok(out)
}

/// Every deterministic policy over enabled actions.
pub fn enumerate_deterministic_policies(m: &Rmdp, cap: usize) -> Result<Vec<Policy>> {
    let size = m.policy_space_size();
    if size > cap as u128 {
        return Err(Error::PolicySpaceTooLarge { size, cap: cap as u128 });
    }
    let choices: Vec<Vec<usize>> = (0..m.n_states()).map(|s| m.enabled_actions(s).collect()).collect();
    let mut idx = vec![0usize; choices.len()];
    let mut out = Vec::with_capacity(size as usize);
    loop {
        let acts: Vec<usize> = idx.iter().zip(&choices).map(|(&i, c)| c[i]).collect();
        out.push(Policy::deterministic(&acts, m.n_actions()));
        let mut s = 0;
        while s < idx.len() {
            idx[s] += 1;
            if idx[s] < choices[s].len() {
                break;
            }
            idx[s] = 0;
            s += 1;
        }
        if s == idx.len() {
            return Ok(out);
        }
    }
}

/// `V = R^pi + gamma P^pi V` solved from raw (possibly off-simplex) rows.
fn direct_values(m: &Rmdp, pi: &Policy, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = m.n_states();
    let na = m.n_actions();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        for act in 0..na {
            let w = pi.prob(s, act);
            if w == 0.0 {
                continue;
            }
            r[s] += w * m.reward(s, act);
            for s2 in 0..n {
                a[(s, s2)] -= m.gamma() * w * rows[s][act * n + s2];
            }
        }
    }
    a.lu()
        .solve(&r)
        .map(|v| v.iter().copied().collect())
        .ok_or_else(|| Error::Numeric("singular evaluation system in oracle".into()))
}

/// Value at the missing state for the completion `at`, by a direct solve.
pub fn direct_incomplete_value(m: &Rmdp, pi: &Policy, p: &IncompleteTransition, at: &[f64]) -> Result<f64> {
    let sbar = p.missing_state();
    let rows: Vec<Vec<f64>> = (0..m.n_states())
        .map(|s| if s == sbar { at.to_vec() } else { p.get(s).unwrap().as_slice().to_vec() })
        .collect();
    Ok(direct_values(m, pi, &rows)?[sbar])
}

/// Central difference of the direct-solve value along `v`.
pub fn finite_difference(
    m: &Rmdp,
    pi: &Policy,
    p: &IncompleteTransition,
    at: &StateTransition,
    v: &Direction,
    step: f64,
) -> Result<f64> {
    let shift = |t: f64| -> Vec<f64> { at.as_slice().iter().zip(v.as_slice()).map(|(x, d)| x + t * d).collect() };
    let hi = direct_incomplete_value(m, pi, p, &shift(step))?;
    let lo = direct_incomplete_value(m, pi, p, &shift(-step))?;
    Ok((hi - lo) / (2.0 * step))
}

/// Central difference of a rational form along `v`, off-simplex allowed.
pub fn finite_difference_form(form: &RationalValueForm, at: &StateTransition, v: &Direction, step: f64) -> f64 {
    let eval = |t: f64| {
        let x: Vec<f64> = at.as_slice().iter().zip(v.as_slice()).map(|(p, d)| p + t * d).collect();
        (form.base_reward + dot(&form.alpha, &x)) / (1.0 - dot(&form.beta, &x))
    };
    (eval(step) - eval(-step)) / (2.0 * step)
}

/// A random rational form that agrees with `form` in value and in the
/// derivative along `p2 - p1` at both `p1` and `p2`, and nowhere else by
/// construction.
///
/// Writing `Z = N / D`, the four conditions are linear in the coefficients:
/// `N(p) - Z(p) D(p) = 0` and `N'(p) - Z'(p) D(p) - Z(p) D'(p) = 0`. A random
/// coefficient vector is projected onto their solution set.
pub fn matching_form(
    form: &RationalValueForm,
    p1: &StateTransition,
    p2: &StateTransition,
    seed: u64,
) -> Result<RationalValueForm> {
    let v = Direction::between(p1, p2);
    let k = form.alpha.len();
    // Unknowns: [r, alpha (k), beta (k)].
    let dim = 1 + 2 * k;
    let mut a = DMatrix::zeros(4, dim);
    let mut b = DVector::zeros(4);
    for (i, p) in [p1, p2].into_iter().enumerate() {
        let z = form.value(p);
        let dz = crate::rational::directional_derivative(form, p, &v);
        let x = p.as_slice();
        let d = v.as_slice();
        // r + alpha.x + z beta.x = z
        a[(2 * i, 0)] = 1.0;
        for j in 0..k {
            a[(2 * i, 1 + j)] = x[j];
            a[(2 * i, 1 + k + j)] = z * x[j];
        }
        b[2 * i] = z;
        // alpha.d + z beta.d + z' beta.x = z'
        for j in 0..k {
            a[(2 * i + 1, 1 + j)] = d[j];
            a[(2 * i + 1, 1 + k + j)] = z * d[j] + dz * x[j];
        }
        b[2 * i + 1] = dz;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = form.alpha.iter().chain(&form.beta).map(|x| x.abs()).fold(form.base_reward.abs(), f64::max).max(1e-3);
    let own: Vec<f64> = std::iter::once(form.base_reward).chain(form.alpha.iter().copied()).chain(form.beta.iter().copied()).collect();
    let floor = 0.5 * form.denominator(p1).min(form.denominator(p2));
    let gram = (&a * a.transpose()).lu();
    // Perturb the form itself, shrinking the perturbation until the new
    // denominator stays away from zero at both ends (and so on the segment).
    for attempt in 0..200 {
        let size = scale * 0.8_f64.powi(attempt);
        let theta0 = DVector::from_fn(dim, |i, _| own[i] + size * (rng.random::<f64>() - 0.5));
        let corr = gram
            .solve(&(&b - &a * &theta0))
            .ok_or_else(|| Error::Numeric("degenerate matching conditions".into()))?;
        let theta = theta0 + a.transpose() * corr;
        let resid = (&a * &theta - &b).amax();
        if resid > 1e-9 * b.amax().max(1.0) {
            return Err(Error::Numeric(format!("matching conditions residual {resid:e}")));
        }
        let other = RationalValueForm::new(
            theta[0],
            theta.rows(1, k).iter().copied().collect(),
            theta.rows(1 + k, k).iter().copied().collect(),
            form.missing_state,
            form.n_states(),
        )?;
        if other.denominator(p1) >= floor && other.denominator(p2) >= floor {
            return Ok(other);
        }
    }
    Err(Error::Numeric("no well-conditioned matching form found".into()))
}

/// Like [`matching_form`] but only the two values are matched, so the
/// forms generally differ between the endpoints. A control for tests.
pub fn value_matching_form(
    form: &RationalValueForm,
    p1: &StateTransition,
    p2: &StateTransition,
    seed: u64,
) -> Result<RationalValueForm> {
    let k = form.alpha.len();
    let dim = 1 + 2 * k;
    let mut a = DMatrix::zeros(2, dim);
    let mut b = DVector::zeros(2);
    for (i, p) in [p1, p2].into_iter().enumerate() {
        let z = form.value(p);
        let x = p.as_slice();
        a[(i, 0)] = 1.0;
        for j in 0..k {
            a[(i, 1 + j)] = x[j];
            a[(i, 1 + k + j)] = z * x[j];
        }
        b[i] = z;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta0 = DVector::from_fn(dim, |_, _| 0.1 * (rng.random::<f64>() - 0.5));
    let corr = (&a * a.transpose())
        .lu()
        .solve(&(&b - &a * &theta0))
        .ok_or_else(|| Error::Numeric("degenerate matching conditions".into()))?;
    let theta = theta0 + a.transpose() * corr;
    RationalValueForm::new(
        theta[0],
        theta.rows(1, k).iter().copied().collect(),
        theta.rows(1 + k, k).iter().copied().collect(),
        form.missing_state,
        form.n_states(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Equal,
    StrictlyDominates,
    StrictlyDominatedBy,
    Incomparable,
}

#[derive(Clone, Debug)]
pub struct DominanceVerdict {
    pub relation: Relation,
    /// A sample where the first policy is strictly better.
    pub witness_better: Option<TransitionFunction>,
    /// A sample where the first policy is strictly worse.
    pub witness_worse: Option<TransitionFunction>,
}

impl DominanceVerdict {
    /// Weak dominance of the first policy, not refuted on the samples.
    pub fn dominates(&self) -> bool {
        matches!(self.relation, Relation::Equal | Relation::StrictlyDominates)
    }
}

/// Default comparison slack: `1e-7 (1 + |rho|)`.
pub fn default_slack(rho: f64) -> f64 {
    1e-7 * (1.0 + rho.abs())
}

/// Compares two policies at every sample, from the agent's point of view.
pub fn dominance_check(
    m: &Rmdp,
    pi_a: &Policy,
    pi_b: &Policy,
    samples: &[TransitionFunction],
    slack: impl Fn(f64) -> f64,
) -> Result<DominanceVerdict> {
    let sign = match m.sense() {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let mut best: Option<(f64, &TransitionFunction)> = None;
    let mut worst: Option<(f64, &TransitionFunction)> = None;
    for p in samples {
        let rows: Vec<Vec<f64>> = p.0.iter().map(|t| t.as_slice().to_vec()).collect();
        let ra: f64 = dot(m.initial(), &direct_values(m, pi_a, &rows)?);
        let rb: f64 = dot(m.initial(), &direct_values(m, pi_b, &rows)?);
        let diff = sign * (ra - rb);
        let tol = slack(ra.abs().max(rb.abs()));
        if diff > tol && best.is_none_or(|(d, _)| diff > d) {
            best = Some((diff, p));
        }
        if diff < -tol && worst.is_none_or(|(d, _)| diff < d) {
            worst = Some((diff, p));
        }
    }
    let relation = match (best.is_some(), worst.is_some()) {
        (false, false) => Relation::Equal,
        (true, false) => Relation::StrictlyDominates,
        (false, true) => Relation::StrictlyDominatedBy,
        (true, true) => Relation::Incomparable,
    };
    Ok(DominanceVerdict {
        relation,
        witness_better: best.map(|(_, p)| p.clone()),
        witness_worse: worst.map(|(_, p)| p.clone()),
    })
}

/// Plain value iteration on a fixed transition function, stopping when a
/// sweep changes nothing by more than `epsilon`.
pub fn classical_value_iteration(m: &Rmdp, p: &TransitionFunction, epsilon: f64, max_iterations: usize) -> (ValueFunction, Policy) {
    let n = m.n_states();
    let agent = m.sense().agent();
    let q = |v: &[f64], s: usize, a: usize| m.reward(s, a) + m.gamma() * dot(p.state(s).row(a), v);
    let mut v = vec![0.0; n];
    for _ in 0..max_iterations {
        let next: Vec<f64> = (0..n)
            .map(|s| m.enabled_actions(s).map(|a| q(&v, s, a)).fold(agent.worst(), |x, y| agent.pick(x, y)))
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta <= epsilon {
            break;
        }
    }
    let acts: Vec<usize> = (0..n)
        .map(|s| {
            let mut best = None;
            for a in m.enabled_actions(s) {
                let x = q(&v, s, a);
                if best.is_none_or(|(_, b)| agent.better(x, b)) {
                    best = Some((a, x));
                }
            }
            best.unwrap().0
        })
        .collect();
    (ValueFunction::new(v), Policy::deterministic(&acts, m.n_actions()))
}

/// The single member of an all-point model, if every set is a point.
pub fn point_transition(m: &Rmdp) -> Option<TransitionFunction> {
    let rows: Option<Vec<StateTransition>> = (0..m.n_states())
        .map(|s| match m.uncertainty(s) {
            UncertaintySet::Interval(iv) if iv.lower == iv.upper => StateTransition::from_rows(&iv.lower).ok(),
            u => match enumerate_vertices(u, m.n_actions(), m.n_states()) {
                Ok(v) if v.len() == 1 => v.into_iter().next(),
                _ => None,
            },
        })
        .collect();
    rows.map(TransitionFunction)
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize, zero_prob: f64) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < zero_prob { 0.0 } else { -(1.0 - rng.random::<f64>()).ln() })
            .collect();
        let sum: f64 = w.iter().sum();
        if sum > 0.0 {
            return w.into_iter().map(|x| x / sum).collect();
        }
    }
}

/// Options for [`random_interval_rmdp`].
#[derive(Clone, Debug)]
pub struct RandomModelSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub sense: Sense,
    pub gamma: f64,
    /// Largest half-width of an interval around its nominal probability.
    pub max_width: f64,
    /// Probability that an action's set collapses to a point.
    pub point_prob: f64,
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        RandomModelSpec {
            n_states: 4,
            n_actions: 2,
            sense: Sense::Maximize,
            gamma: 0.9,
            max_width: 0.3,
            point_prob: 0.0,
        }
    }
}

pub fn random_interval_rmdp(spec: &RandomModelSpec, seed: u64) -> Result<Rmdp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, na) = (spec.n_states, spec.n_actions);
    let rewards = (0..n).map(|_| (0..na).map(|_| rng.random::<f64>()).collect()).collect();
    let uncertainty = (0..n)
        .map(|_| {
            let mut lower = Vec::with_capacity(na);
            let mut upper = Vec::with_capacity(na);
            for _ in 0..na {
                let c = random_distribution(&mut rng, n, 0.2);
                if rng.random::<f64>() < spec.point_prob {
                    lower.push(c.clone());
                    upper.push(c);
                    continue;
                }
                let w = spec.max_width;
                lower.push(c.iter().map(|&x| if x > 0.0 { (x - w * rng.random::<f64>()).max(0.0) } else { 0.0 }).collect());
                upper.push(c.iter().map(|&x| if x > 0.0 { (x + w * rng.random::<f64>()).min(1.0) } else { 0.0 }).collect());
            }
            UncertaintySet::Interval(IntervalSet { lower, upper })
        })
        .collect();
    let initial = random_distribution(&mut rng, n, 0.0);
    Rmdp::new(RmdpParts {
        n_states: n,
        n_actions: na,
        gamma: spec.gamma,
        sense: spec.sense,
        initial,
        rewards,
        enabled: None,
        uncertainty,
        meta: None,
    })
}

/// Random interval model with an extra action slot per state holding a
/// point-valued twin of the robust-optimal action, pinned at that action's
/// worst-case transitions. The twin ties in robust value but is dominated
/// whenever the original action's set is not a point. The twin's slot is
/// chosen at random per state.
pub fn random_model_with_twins(spec: &RandomModelSpec, seed: u64) -> Result<Rmdp> {
    let base = random_interval_rmdp(spec, seed)?;
    let cfg = SolverConfig { epsilon: 1e-12, max_iterations: 10_000, ..SolverConfig::default() };
    let sol = robust_value_iteration(&base, &cfg, None, base.sense().adversary())?;
    let acts = sol.policy.actions().expect("deterministic");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let (n, na) = (base.n_states(), base.n_actions() + 1);
    let mut rewards = Vec::with_capacity(n);
    let mut uncertainty = Vec::with_capacity(n);
    for s in 0..n {
        let UncertaintySet::Interval(iv) = base.uncertainty(s) else { unreachable!() };
        let slot = rng.random_range(0..na);
        let twin_row = sol.worst_transition.state(s).row(acts[s]).to_vec();
        let mut r = base.rewards()[s].clone();
        let mut lower = iv.lower.clone();
        let mut upper = iv.upper.clone();
        r.insert(slot, base.reward(s, acts[s]));
        lower.insert(slot, twin_row.clone());
        upper.insert(slot, twin_row);
        rewards.push(r);
        uncertainty.push(UncertaintySet::Interval(IntervalSet { lower, upper }));
    }
    Rmdp::new(RmdpParts {
        n_states: n,
        n_actions: na,
        gamma: base.gamma(),
        sense: base.sense(),
        initial: base.initial().to_vec(),
        rewards,
        enabled: None,
        uncertainty,
        meta: None,
    })
}

/// Random completion point and incomplete transition for a model: one
/// random member of each state's set.
pub fn random_member(m: &Rmdp, seed: u64) -> Result<TransitionFunction> {
    let rows = (0..m.n_states())
        .map(|s| sample_uncertainty(m, s, 4, seed.wrapping_add(s as u64)).map(|v| v[3].clone()))
        .collect::<Result<_>>()?;
    Ok(TransitionFunction(rows))
}

/// Random point of the per-action simplices (ignores the uncertainty set).
pub fn random_simplex_point(n_actions: usize, n_states: usize, rng: &mut ChaCha8Rng) -> StateTransition {
    let probs = (0..n_actions).flat_map(|_| random_distribution(rng, n_states, 0.0)).collect();
    StateTransition::new(n_actions, n_states, probs).expect("valid simplex point")
}

/// Random policy, randomized at every state.
pub fn random_policy(m: &Rmdp, rng: &mut ChaCha8Rng) -> Policy {
    let dist = (0..m.n_states())
        .map(|s| {
            let mut w: Vec<f64> = (0..m.n_actions())
                .map(|a| if m.is_enabled(s, a) { -(1.0 - rng.random::<f64>()).ln() } else { 0.0 })
                .collect();
            let sum: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= sum);
            w
        })
        .collect();
    Policy::new(dist).expect("normalized")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_counts() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(30, 0), 1);
    }

    #[test]
    fn triangle_has_three_vertices() {
        let u = UncertaintySet::Interval(IntervalSet { lower: vec![vec![0.0; 3]], upper: vec![vec![1.0; 3]] });
        assert_eq!(enumerate_vertices(&u, 1, 3).unwrap().len(), 3);
    }

    #[test]
    fn slipping_interval_vertices_are_its_corners() {
        let u = UncertaintySet::Interval(IntervalSet {
            lower: vec![vec![0.15, 0.75]],
            upper: vec![vec![0.25, 0.85]],
        });
        let mut v: Vec<f64> = enumerate_vertices(&u, 1, 2).unwrap().iter().map(|t| t.get(0, 0)).collect();
        v.sort_by(f64::total_cmp);
        assert_eq!(v.len(), 2);
        assert!((v[0] - 0.15).abs() < 1e-12 && (v[1] - 0.25).abs() < 1e-12);
    }
}
