//! The gridworld experiment: plain robust value iteration versus the two
//! cheap refinements (best-case re-solve and derivative tie-breaking).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::benchmarks::{be_action_fraction, gen_gridworld, GridworldConfig, Variant};
use crate::error::Result;
use crate::model::Rmdp;
use crate::orbe::derivative_toward_center;
use crate::solver::{
    optimal_action_set, robust_value_iteration, robust_value_iteration_from,
    SolverConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResultRow {
    pub size: usize,
    pub nu: f64,
    pub seed: u64,
    pub time_rvi_s: f64,
    pub be_rvi_pct: f64,
    pub time_bestcase_s: f64,
    pub be_bestcase_pct: f64,
    pub time_deriv_s: f64,
    pub be_deriv_pct: f64,
    #[serde(default)]
    pub error: Option<String>,
}

impl BenchResultRow {
    fn failed(size: usize, nu: f64, seed: u64, err: String) -> Self {
        BenchResultRow {
            size,
            nu,
            seed,
            time_rvi_s: f64::NAN,
            be_rvi_pct: f64::NAN,
            time_bestcase_s: f64::NAN,
            be_bestcase_pct: f64::NAN,
            time_deriv_s: f64::NAN,
            be_deriv_pct: f64::NAN,
            error: Some(err),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchCell {
    pub size: usize,
    pub nu: f64,
    pub seed: u64,
    pub variant: Variant,
    pub gamma: f64,
    pub p: f64,
    pub q_max: f64,
}

/// Outcome of the three pipelines on one model; times in seconds.
#[derive(Clone, Debug)]
pub struct PipelineTimes {
    pub rvi: f64,
    pub bestcase: f64,
    pub deriv: f64,
}

/// Runs plain RVI, RVI plus the best-case re-solve, and RVI plus derivative
/// tie-breaking on `m`, returning the three policies' BE percentages.
///
/// Each reported time includes the first RVI, so the ratios against the
/// plain time measure total overhead.
pub fn run_pipelines(m: &Rmdp, cfg: &SolverConfig) -> Result<(PipelineTimes, [f64; 3])> {
    let sense = m.sense();
    let tol = 10.0 * cfg.epsilon;

    let t0 = Instant::now();
    let sol = robust_value_iteration(m, cfg, None, sense.adversary())?;
    sol.ensure_converged()?;
    let rvi = t0.elapsed().as_secs_f64();
    let be_rvi = be_action_fraction(m, &sol.policy)?;

    let t1 = Instant::now();
    let optimal = optimal_action_set(m, &sol, tol)?;
    let best = robust_value_iteration_from(m, cfg, Some(&optimal), sense.agent(), Some(&sol.value))?;
    best.ensure_converged()?;
    let bestcase = rvi + t1.elapsed().as_secs_f64();
    let be_best = be_action_fraction(m, &best.policy)?;

    // Derivatives at the worst case toward each state's interior anchor.
    let t2 = Instant::now();
    let optimal = optimal_action_set(m, &sol, tol)?;
    let kept = derivative_toward_center(m, &optimal, &sol.worst_transition, 1e-7)?;
    let deriv = rvi + t2.elapsed().as_secs_f64();
    let be_deriv = be_action_fraction(m, &kept.first_member(m.n_actions()))?;

    Ok((PipelineTimes { rvi, bestcase, deriv }, [be_rvi, be_best, be_deriv]))
}

/// Generates the cell's gridworld and runs the pipelines. Failures are
/// recorded in the row rather than returned.
pub fn run_bench_cell(cell: &BenchCell, cfg: &SolverConfig) -> BenchResultRow {
    let attempt = || -> Result<BenchResultRow> {
        let grid = GridworldConfig {
            nu: cell.nu,
            seed: cell.seed,
            variant: cell.variant,
            gamma: cell.gamma,
            p: cell.p,
            q_max: cell.q_max,
            ..GridworldConfig::square(cell.size)?
        };
        let m = gen_gridworld(&grid)?;
        let (t, be) = run_pipelines(&m, cfg)?;
        Ok(BenchResultRow {
            size: cell.size,
            nu: cell.nu,
            seed: cell.seed,
            time_rvi_s: t.rvi,
            be_rvi_pct: be[0],
            time_bestcase_s: t.bestcase,
            be_bestcase_pct: be[1],
            time_deriv_s: t.deriv,
            be_deriv_pct: be[2],
            error: None,
        })
    };
    attempt().unwrap_or_else(|e| BenchResultRow::failed(cell.size, cell.nu, cell.seed, e.to_string()))
}
