//! H-polytopes restricted to products of probability simplices, reduced to
//! coordinates on their affine hull.
//!
//! A state's uncertainty set lives in the stacked space of its per-action
//! transition rows. Equalities (the simplex sums, opposite inequality pairs,
//! and any implicit equalities found by LP) are eliminated once at compile
//! time: every feasible point is written as `x = x0 + N y` with `N` an
//! orthonormal basis of the hull directions, and the remaining inequalities
//! become `G y <= h`. All later work (inner LPs, interior tests, vertex
//! search, perturbations) happens in the low-dimensional `y` space.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Extremum;

/// Absolute feasibility tolerance in the stacked probability space.
pub(crate) const FEAS_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;
const ZERO_ROW_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ReducedPolytope {
    n: usize,
    d: usize,
    x0: Vec<f64>,
    /// `n x d`, orthonormal columns.
    basis: DMatrix<f64>,
    /// `m x d`, rows normalized to unit length.
    g: DMatrix<f64>,
    h: Vec<f64>,
    center: Vec<f64>,
    center_slack: f64,
}

struct Equalities {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
}

impl ReducedPolytope {
    /// Compiles `{x : a x <= b, x >= 0, sum of each block = 1}`.
    ///
    /// `blocks` gives the variable range of each action row. Returns `Ok(None)`
    /// when the set is empty.
    pub fn compile(
        n: usize,
        blocks: &[std::ops::Range<usize>],
        a: &[Vec<f64>],
        b: &[f64],
    ) -> Result<Option<Self>> {
        let mut eq = Equalities { rows: Vec::new(), rhs: Vec::new() };
        for block in blocks {
            let mut row = vec![0.0; n];
            for j in block.clone() {
                row[j] = 1.0;
            }
            eq.rows.push(row);
            eq.rhs.push(1.0);
        }

        // Normalize the user rows; fold opposite pairs into equalities.
        let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
        for (row, &rhs) in a.iter().zip(b) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= ZERO_ROW_TOL {
                if rhs < -FEAS_TOL {
                    return Ok(None);
                }
                continue;
            }
            ineq.push((row.iter().map(|v| v / norm).collect(), rhs / norm));
        }
        let mut paired = vec![false; ineq.len()];
        for i in 0..ineq.len() {
            if paired[i] {
                continue;
            }
            for j in (i + 1)..ineq.len() {
                if paired[j] {
                    continue;
                }
                let opposite = ineq[i].0.iter().zip(&ineq[j].0).all(|(p, q)| (p + q).abs() <= 1e-12);
                if opposite && (ineq[i].1 + ineq[j].1).abs() <= 1e-12 {
                    paired[i] = true;
                    paired[j] = true;
                    eq.rows.push(ineq[i].0.clone());
                    eq.rhs.push(ineq[i].1);
                    break;
                }
            }
        }
        let mut rest: Vec<(Vec<f64>, f64)> = ineq
            .into_iter()
            .zip(paired)
            .filter_map(|(r, p)| (!p).then_some(r))
            .collect();
        for j in 0..n {
            let mut row = vec![0.0; n];
            row[j] = -1.0;
            rest.push((row, 0.0));
        }

        loop {
            let Some((x0, basis)) = affine_hull(n, &eq)? else {
                return Ok(None);
            };
            let d = basis.ncols();

            // Reduced inequalities G y <= h.
            let mut g_rows: Vec<Vec<f64>> = Vec::new();
            let mut h: Vec<f64> = Vec::new();
            let mut origin: Vec<usize> = Vec::new();
            for (idx, (row, rhs)) in rest.iter().enumerate() {
                let ax0: f64 = row.iter().zip(&x0).map(|(p, q)| p * q).sum();
                let gy: Vec<f64> = (0..d)
                    .map(|k| row.iter().enumerate().map(|(j, v)| v * basis[(j, k)]).sum())
                    .collect();
                let norm = gy.iter().map(|v| v * v).sum::<f64>().sqrt();
                let slack = rhs - ax0;
                if norm <= ZERO_ROW_TOL {
                    if slack < -FEAS_TOL {
                        return Ok(None);
                    }
                    continue;
                }
                g_rows.push(gy.iter().map(|v| v / norm).collect());
                h.push(slack / norm);
                origin.push(idx);
            }
            let g = DMatrix::from_fn(g_rows.len(), d, |i, k| g_rows[i][k]);

            if d == 0 {
                return Ok(Some(ReducedPolytope {
                    n,
                    d,
                    x0,
                    basis,
                    g,
                    h,
                    center: Vec::new(),
                    center_slack: 0.0,
                }));
            }

            let (center, t) = chebyshev_center(&g, &h)?;
            if t < -FEAS_TOL {
                return Ok(None);
            }
            if t > FEAS_TOL {
                return Ok(Some(ReducedPolytope { n, d, x0, basis, g, h, center, center_slack: t }));
            }

            // Flat in y: find rows that are tight everywhere and promote them.
            let mut promoted = Vec::new();
            for i in 0..g.nrows() {
                let row: Vec<f64> = g.row(i).iter().copied().collect();
                let y = lp_reduced(&g, &h, &row, Extremum::Min, None)?;
                let best = h[i] - dot(&row, &y);
                if best <= FEAS_TOL {
                    promoted.push(origin[i]);
                }
            }
            if promoted.is_empty() {
                // Numerically flat but no tight row identified; accept as is.
                return Ok(Some(ReducedPolytope { n, d, x0, basis, g, h, center, center_slack: t.max(0.0) }));
            }
            promoted.sort_unstable();
            for &idx in promoted.iter().rev() {
                let (row, rhs) = rest.remove(idx);
                eq.rows.push(row);
                eq.rhs.push(rhs);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn n_constraints(&self) -> usize {
        self.h.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Radius of the largest ball (in hull coordinates) around the center.
    pub fn center_slack(&self) -> f64 {
        self.center_slack
    }

    pub fn to_x(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.x0.clone();
        for (j, xj) in x.iter_mut().enumerate() {
            for (k, yk) in y.iter().enumerate() {
                *xj += self.basis[(j, k)] * yk;
            }
        }
        x
    }

    pub fn to_y(&self, x: &[f64]) -> Vec<f64> {
        (0..self.d)
            .map(|k| (0..self.n).map(|j| self.basis[(j, k)] * (x[j] - self.x0[j])).sum())
            .collect()
    }

    /// Distance of `x` from the affine hull.
    pub fn hull_residual(&self, x: &[f64]) -> f64 {
        let back = self.to_x(&self.to_y(x));
        back.iter().zip(x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }

    /// Normalized slack of every reduced inequality at `y`.
    pub fn slacks(&self, y: &[f64]) -> Vec<f64> {
        (0..self.h.len())
            .map(|i| self.h[i] - (0..self.d).map(|k| self.g[(i, k)] * y[k]).sum::<f64>())
            .collect()
    }

    pub fn min_slack(&self, y: &[f64]) -> f64 {
        self.slacks(y).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.hull_residual(x) <= tol && self.min_slack(&self.to_y(x)) >= -tol
    }

    /// Objective `c . x` split into its constant part and its reduced gradient.
    pub fn project(&self, c: &[f64]) -> (f64, Vec<f64>) {
        let c0 = dot(c, &self.x0);
        let cy = (0..self.d)
            .map(|k| c.iter().enumerate().map(|(j, v)| v * self.basis[(j, k)]).sum())
            .collect();
        (c0, cy)
    }

    /// Like [`project`](Self::project) but only over the variable range `vars`,
    /// with `c` indexed relative to the range start.
    pub fn project_block(&self, vars: std::ops::Range<usize>, c: &[f64]) -> (f64, Vec<f64>) {
        let start = vars.start;
        let c0 = vars.clone().map(|j| c[j - start] * self.x0[j]).sum();
        let cy = (0..self.d)
            .map(|k| vars.clone().map(|j| c[j - start] * self.basis[(j, k)]).sum())
            .collect();
        (c0, cy)
    }

    /// Optimizes `cy . y`, breaking ties by `secondary` in the same direction.
    pub fn optimize(&self, cy: &[f64], dir: Extremum, secondary: Option<&[f64]>) -> Result<Vec<f64>> {
        match self.d {
            0 => Ok(Vec::new()),
            1 => Ok(vec![self.optimize_1d(cy[0], dir, secondary.map(|s| s[0]))]),
            _ => lp_reduced(&self.g, &self.h, cy, dir, secondary),
        }
    }

    /// Feasible interval of the single hull coordinate.
    pub fn line_bounds(&self) -> (f64, f64) {
        debug_assert_eq!(self.d, 1);
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (i, &h) in self.h.iter().enumerate() {
            let g = self.g[(i, 0)];
            if g > 0.0 {
                hi = hi.min(h / g);
            } else if g < 0.0 {
                lo = lo.max(h / g);
            }
        }
        (lo, hi)
    }

    fn optimize_1d(&self, c: f64, dir: Extremum, secondary: Option<f64>) -> f64 {
        let (lo, hi) = self.line_bounds();
        let pick = |coef: f64| -> Option<f64> {
            let scale = (hi - lo).abs().max(1.0);
            if coef.abs() * scale <= 1e-13 {
                return None;
            }
            Some(match (dir, coef > 0.0) {
                (Extremum::Min, true) | (Extremum::Max, false) => lo,
                _ => hi,
            })
        };
        pick(c)
            .or_else(|| secondary.and_then(pick))
            .unwrap_or(self.center[0])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Particular solution and orthonormal null-space basis of the equalities.
fn affine_hull(n: usize, eq: &Equalities) -> Result<Option<(Vec<f64>, DMatrix<f64>)>> {
    let k = eq.rows.len();
    let rows = k.max(n);
    let e = DMatrix::from_fn(rows, n, |i, j| if i < k { eq.rows[i][j] } else { 0.0 });
    let rhs = DVector::from_fn(rows, |i, _| if i < k { eq.rhs[i] } else { 0.0 });
    let svd = e.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max).max(1.0);
    let tol = RANK_TOL * smax;
    let x0 = svd
        .solve(&rhs, tol)
        .map_err(|e| Error::Numeric(format!("affine hull solve: {e}")))?;
    let resid = (&e * &x0 - &rhs).amax();
    if resid > FEAS_TOL {
        return Ok(None);
    }
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let null: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= tol).collect();
    let basis = DMatrix::from_fn(n, null.len(), |j, c| v_t[(null[c], j)]);
    Ok(Some((x0.iter().copied().collect(), basis)))
}

/// Center and radius of the largest inscribed ball of `{y : g y <= h}`
/// (rows of `g` are unit length). The radius is capped at 1; a negative
/// radius means the set is empty.
fn chebyshev_center(g: &DMatrix<f64>, h: &[f64]) -> Result<(Vec<f64>, f64)> {
    let d = g.ncols();
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let ys: Vec<_> = (0..d)
        .map(|_| problem.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let t = problem.add_var(1.0, (-1.0, 1.0));
    for i in 0..g.nrows() {
        let mut expr = LinearExpr::empty();
        for (k, &y) in ys.iter().enumerate() {
            expr.add(y, g[(i, k)]);
        }
        expr.add(t, 1.0);
        problem.add_constraint(expr, ComparisonOp::Le, h[i]);
    }
    match problem.solve() {
        Ok(sol) => Ok((ys.iter().map(|&y| *sol.var_value(y)).collect(), *sol.var_value(t))),
        Err(minilp::Error::Infeasible) => Ok((vec![0.0; d], -1.0)),
        Err(e) => Err(Error::Numeric(format!("chebyshev LP: {e}"))),
    }
}

/// LP over the reduced inequalities with optional lexicographic tie-break.
fn lp_reduced(
    g: &DMatrix<f64>,
    h: &[f64],
    c: &[f64],
    dir: Extremum,
    secondary: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let d = g.ncols();
    let build = |obj: &[f64], cap: Option<(&[f64], f64)>| -> Result<Vec<f64>> {
        let direction = match dir {
            Extremum::Min => OptimizationDirection::Minimize,
            Extremum::Max => OptimizationDirection::Maximize,
        };
        let mut problem = Problem::new(direction);
        let ys: Vec<_> = obj
            .iter()
            .map(|&ck| problem.add_var(ck, (f64::NEG_INFINITY, f64::INFINITY)))
            .collect();
        for i in 0..g.nrows() {
            let mut expr = LinearExpr::empty();
            for (k, &y) in ys.iter().enumerate() {
                expr.add(y, g[(i, k)]);
            }
            problem.add_constraint(expr, ComparisonOp::Le, h[i] + 1e-12);
        }
        if let Some((row, bound)) = cap {
            let mut expr = LinearExpr::empty();
            for (k, &y) in ys.iter().enumerate() {
                expr.add(y, row[k]);
            }
            let op = match dir {
                Extremum::Min => ComparisonOp::Le,
                Extremum::Max => ComparisonOp::Ge,
            };
            problem.add_constraint(expr, op, bound);
        }
        let sol = problem
            .solve()
            .map_err(|e| Error::Numeric(format!("inner LP ({d} dims): {e}")))?;
        Ok(ys.iter().map(|&y| *sol.var_value(y)).collect())
    };
    let y = build(c, None)?;
    match secondary {
        None => Ok(y),
        Some(sec) => {
            let z = dot(c, &y);
            let slack = 1e-9 * (1.0 + z.abs());
            let bound = match dir {
                Extremum::Min => z + slack,
                Extremum::Max => z - slack,
            };
            build(sec, Some((c, bound))).or(Ok(y))
        }
    }
}
