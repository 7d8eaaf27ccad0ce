use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use orbe_core::benchmarks::{gen_gridworld, GridworldConfig, Variant};
use orbe_core::experiment::{run_bench_cell, BenchCell};
use orbe_core::solver::robust_policy_evaluation;
use orbe_core::{
    compute_orbe, load_model, load_policy, robust_value_iteration, save_model, save_policy, save_values, Error,
    Extremum, OrbeConfig, Result, SolverConfig,
};
use rayon::prelude::*;

use crate::args::{AdversaryArg, BenchArgs, EvaluateArgs, GenArgs, OrbeArgs, SolveArgs, SolverArgs, VariantArg};
use crate::bench::{cell_means, write_rows};

fn solver_config(a: &SolverArgs) -> SolverConfig {
    SolverConfig { epsilon: a.epsilon, max_iterations: a.max_iters, ..SolverConfig::default() }
}

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Imdp => Variant::Imdp,
        VariantArg::Srect => Variant::Srect,
    }
}

/// `<out_dir>/<model stem><suffix>` unless an explicit path was given.
fn output_path(explicit: &Option<PathBuf>, out_dir: &Path, model: &Path, suffix: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let stem = model.file_name().and_then(|s| s.to_str()).unwrap_or("model");
        let stem = stem.strip_suffix(".json").unwrap_or(stem);
        let stem = stem.strip_suffix(".rmdp").unwrap_or(stem);
        out_dir.join(format!("{stem}{suffix}"))
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

pub fn solve(a: &SolveArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let cfg = solver_config(&a.solver);
    let adversary = match a.adversary {
        Some(AdversaryArg::Min) => Extremum::Min,
        Some(AdversaryArg::Max) => Extremum::Max,
        None => m.sense().adversary(),
    };
    let sol = robust_value_iteration(&m, &cfg, None, adversary)?;
    if !a.solver.allow_nonconverged {
        sol.ensure_converged()?;
    }
    save_values(&sol.value, output_path(&a.values_out, &a.out_dir, &a.model, ".values.json"))?;
    save_policy(&sol.policy, output_path(&a.policy_out, &a.out_dir, &a.model, ".policy.json"))?;
    log::info!("{} iterations, converged: {}", sol.iterations, sol.converged);
    println!("robust_return {:.6}", sol.robust_return(&m));
    Ok(())
}

pub fn orbe(a: &OrbeArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let cfg = OrbeConfig {
        solver: solver_config(&a.solver),
        action_tol: a.tol,
        deriv_tol_rel: a.deriv_tol,
        allow_nonconverged: a.solver.allow_nonconverged,
        ..OrbeConfig::default()
    };
    let report = compute_orbe(&m, &cfg)?;
    save_policy(&report.policy, output_path(&a.policy_out, &a.out_dir, &a.model, ".policy.json"))?;
    write_json(&output_path(&a.report, &a.out_dir, &a.model, ".orbe.json"), &report)?;
    let stage = serde_json::to_value(report.stage_reached)?;
    println!("stage_reached {}", stage.as_str().unwrap_or_default());
    println!("robust_return {:.6}", report.robust_value);
    Ok(())
}

pub fn gen_gridworld_cmd(a: &GenArgs) -> Result<()> {
    let cfg = GridworldConfig {
        width: a.width,
        height: a.height,
        obstacles: a.obstacles,
        nu: a.nu,
        p: a.p,
        q_max: a.q_max,
        seed: a.seed,
        variant: variant(a.variant),
        gamma: a.gamma,
    };
    let m = gen_gridworld(&cfg)?;
    save_model(&m, &a.out)?;
    println!("states {}", m.n_states());
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let pi = load_policy(&a.policy)?;
    let cfg = solver_config(&a.solver);
    let sense = m.sense();
    let worst = robust_policy_evaluation(&m, &pi, &cfg, sense.adversary())?;
    let best = robust_policy_evaluation(&m, &pi, &cfg, sense.agent())?;
    if !a.solver.allow_nonconverged {
        worst.ensure_converged()?;
        best.ensure_converged()?;
    }
    println!("robust_return {:.6}", worst.robust_return(&m));
    println!("best_return {:.6}", best.robust_return(&m));
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    if a.jobs == 0 || a.seeds == 0 {
        return Err(Error::Config("--jobs and --seeds must be positive".into()));
    }
    for &size in &a.sizes {
        GridworldConfig::square(size)?;
    }
    let cfg = SolverConfig { epsilon: a.epsilon, max_iterations: a.max_iters, ..SolverConfig::default() };
    cfg.validate()?;
    let cells: Vec<BenchCell> = a
        .sizes
        .iter()
        .flat_map(|&size| {
            a.nus.iter().flat_map(move |&nu| {
                (0..a.seeds).map(move |k| BenchCell {
                    size,
                    nu,
                    seed: a.seed + k,
                    variant: variant(a.variant),
                    gamma: a.gamma,
                    p: a.p,
                    q_max: a.q_max,
                })
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    // Indexed collection keeps the rows in matrix order.
    let rows: Vec<_> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let row = run_bench_cell(c, &cfg);
                if let Some(e) = &row.error {
                    log::warn!("size {} nu {} seed {}: {e}", c.size, c.nu, c.seed);
                }
                row
            })
            .collect()
    });
    let file = File::create(&a.out).map_err(|source| Error::Io { path: a.out.clone(), source })?;
    write_rows(BufWriter::new(file), &rows)
        .map_err(|e| Error::Io { path: a.out.clone(), source: std::io::Error::other(e) })?;
    println!("size,nu,runs,failed,time_rvi_s,be_rvi_pct,time_bestcase_s,be_bestcase_pct,time_deriv_s,be_deriv_pct,bestcase_ratio,deriv_ratio");
    for c in cell_means(&rows) {
        println!(
            "{},{},{},{},{:.4},{:.1},{:.4},{:.1},{:.4},{:.1},{:.3},{:.3}",
            c.size,
            c.nu,
            c.runs,
            c.failed,
            c.time_rvi_s,
            c.be_rvi_pct,
            c.time_bestcase_s,
            c.be_bestcase_pct,
            c.time_deriv_s,
            c.be_deriv_pct,
            c.bestcase_ratio(),
            c.deriv_ratio()
        );
    }
    Ok(())
}
