//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::Instant;

use orbe_core::benchmarks::Variant;
use orbe_core::experiment::{run_bench_cell, BenchCell, BenchResultRow};
use orbe_core::oracle::{
    classical_value_iteration, direct_incomplete_value, dominance_check, enumerate_deterministic_policies,
    finite_difference, matching_form, point_transition, random_interval_rmdp, random_member,
    random_model_with_twins, random_policy, sample_transition_functions, sample_uncertainty, RandomModelSpec,
    Relation,
};
use orbe_core::rational::{directional_derivative, rational_coefficients, segment_equivalence_check, Direction};
use orbe_core::{
    compute_orbe, evaluate_policy_exact, load_model, robust_value_iteration, IncompleteTransition, OrbeConfig,
    Policy, Result, Rmdp, Sense, SolverConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<(bool, String), Box<dyn std::error::Error>>;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn tight() -> SolverConfig {
    SolverConfig { epsilon: 1e-11, max_iterations: 20_000, ..SolverConfig::default() }
}

/// Robust value 0, both actions optimal at s1 after stage one, a2 kept, under a second.
fn fig1_pipeline() -> Outcome {
    let dir = tempfile::tempdir()?;
    let model = fixture("fig1.rmdp.json");
    let t = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_orbe"))
        .args(["orbe", model.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()])
        .output()?;
    let elapsed = t.elapsed().as_secs_f64();
    if !out.status.success() {
        return Ok((false, format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))));
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("fig1.orbe.json"))?)?;
    let value = report["robust_value"].as_f64().unwrap_or(f64::NAN);
    let stage1 = report["candidate_counts"][0]["counts"][0].as_u64().unwrap_or(0);
    let a2 = report["policy"][0] == serde_json::json!([0.0, 1.0]);
    let ok = value.abs() <= 1e-6 && stage1 == 2 && a2 && elapsed < 1.0;
    Ok((ok, format!("value {value:.2e}, stage-1 actions at s1 {stage1}, a2 chosen {a2}, {elapsed:.3}s")))
}

/// Exact values of beta = 0 and beta = 1 at xi = 0.5.
fn fig1_values() -> Outcome {
    let m = load_model(fixture("fig1-point-xi05.rmdp.json"))?;
    let p = point_transition(&m).expect("point fixture");
    let rho = |beta: f64| -> Result<f64> {
        let pi = Policy::new(vec![vec![beta, 1.0 - beta], vec![1.0, 0.0]])?;
        Ok(evaluate_policy_exact(&m, &pi, &p)?.values[0])
    };
    let (r0, r1) = (rho(0.0)?, rho(1.0)?);
    let ok = (r0 - 6.2069).abs() <= 1e-3 && (r1 - 4.5).abs() <= 1e-3;
    Ok((ok, format!("rho(beta=0) {r0:.4}, rho(beta=1) {r1:.4}")))
}

fn bench_rows() -> Vec<BenchResultRow> {
    let cfg = SolverConfig::default();
    let mut rows = Vec::new();
    for size in [100, 400] {
        for nu in [0.0, 0.5, 1.0] {
            for seed in 0..10 {
                let cell = BenchCell { size, nu, seed, variant: Variant::Srect, gamma: 0.99, p: 0.25, q_max: 0.1 };
                rows.push(run_bench_cell(&cell, &cfg));
            }
        }
    }
    rows
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// BE percentages of the three pipelines per (size, nu) cell.
fn gridworld_table(rows: &[BenchResultRow]) -> Outcome {
    if let Some(r) = rows.iter().find(|r| r.error.is_some()) {
        return Ok((false, format!("run failed: {}", r.error.as_deref().unwrap_or_default())));
    }
    let mut ok = true;
    let mut cells = Vec::new();
    for size in [100, 400] {
        for nu in [0.0, 0.5, 1.0] {
            let cell: Vec<&BenchResultRow> = rows.iter().filter(|r| r.size == size && r.nu == nu).collect();
            let rvi = mean(cell.iter().map(|r| r.be_rvi_pct));
            let refined = cell.iter().all(|r| r.be_bestcase_pct == 100.0 && r.be_deriv_pct == 100.0);
            let rvi_ok = if nu == 0.0 {
                rvi == 0.0
            } else if nu == 1.0 {
                rvi == 100.0
            } else {
                (40.0..=60.0).contains(&rvi)
            };
            ok &= rvi_ok && refined;
            cells.push(format!("{size}/{nu}: {rvi:.1}{}", if refined { "" } else { " (refined < 100)" }));
        }
    }
    Ok((ok, format!("mean be_rvi_pct {}; refined pipelines at 100 in every run", cells.join(", "))))
}

/// Ratio-of-means overheads on the 400-state runs.
fn overheads(rows: &[BenchResultRow]) -> Outcome {
    let big: Vec<&BenchResultRow> = rows.iter().filter(|r| r.size >= 400 && r.error.is_none()).collect();
    if big.is_empty() {
        return Ok((false, "no successful runs at |S| >= 400".into()));
    }
    let rvi = mean(big.iter().map(|r| r.time_rvi_s));
    let best = mean(big.iter().map(|r| r.time_bestcase_s)) / rvi;
    let deriv = mean(big.iter().map(|r| r.time_deriv_s)) / rvi;
    let ok = best < 2.0 && deriv < 1.25;
    Ok((ok, format!("bestcase/rvi {best:.3} (< 2.0), deriv/rvi {deriv:.3} (< 1.25) over {} runs", big.len())))
}

/// One corpus entry: a model, a randomized policy and an incomplete transition.
struct Case {
    m: Rmdp,
    pi: Policy,
    p: IncompleteTransition,
    sbar: usize,
    seed: u64,
}

fn corpus() -> Result<Vec<Case>> {
    (0..60u64)
        .map(|seed| {
            let spec = RandomModelSpec { n_states: 2 + (seed % 5) as usize, n_actions: 1 + (seed % 3) as usize, ..Default::default() };
            let m = random_interval_rmdp(&spec, 1000 + seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pi = random_policy(&m, &mut rng);
            let sbar = rng.random_range(0..m.n_states());
            let p = IncompleteTransition::from_full(&random_member(&m, seed)?, sbar);
            Ok(Case { m, pi, p, sbar, seed })
        })
        .collect()
}

fn rational_equivalence(cases: &[Case]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for c in cases {
        let form = rational_coefficients(&c.m, &c.pi, &c.p)?;
        for t in sample_uncertainty(&c.m, c.sbar, 100, c.seed)? {
            let direct = direct_incomplete_value(&c.m, &c.pi, &c.p, t.as_slice())?;
            worst = worst.max((form.value(&t) - direct).abs());
            count += 1;
        }
    }
    Ok((worst <= 1e-8, format!("{} models, {count} completions, max error {worst:.2e}", cases.len())))
}

fn derivative_accuracy(cases: &[Case]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for c in cases {
        let form = rational_coefficients(&c.m, &c.pi, &c.p)?;
        let pts = sample_uncertainty(&c.m, c.sbar, 21, c.seed ^ 7)?;
        for w in pts.windows(2) {
            let v = Direction::between(&w[0], &w[1]);
            let analytic = directional_derivative(&form, &w[0], &v);
            let fd = finite_difference(&c.m, &c.pi, &c.p, &w[0], &v, 1e-6)?;
            worst = worst.max((analytic - fd).abs() / analytic.abs().max(1.0));
            count += 1;
        }
    }
    Ok((worst <= 1e-5, format!("{count} directions, max relative error {worst:.2e}")))
}

fn segment_agreement(cases: &[Case]) -> Outcome {
    let mut worst: f64 = 0.0;
    let (mut pairs, mut ends_ok) = (0, true);
    for c in cases {
        let form = rational_coefficients(&c.m, &c.pi, &c.p)?;
        let ends = sample_uncertainty(&c.m, c.sbar, 2, c.seed ^ 11)?;
        if ends[0].distance(&ends[1]) <= 1e-3 {
            continue;
        }
        let other = matching_form(&form, &ends[0], &ends[1], c.seed)?;
        ends_ok &= segment_equivalence_check(&form, &other, &ends[0], &ends[1], 1e-9);
        let v = Direction::between(&ends[0], &ends[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        for _ in 0..50 {
            let x = v.step(&ends[0], rng.random_range(1e-6..1.0));
            worst = worst.max((form.value(&x) - other.value(&x)).abs());
        }
        pairs += 1;
    }
    let ok = pairs >= 30 && ends_ok && worst <= 1e-7;
    Ok((ok, format!("{pairs} constructed pairs, 50 interior points each, max gap {worst:.2e}")))
}

fn non_domination() -> Outcome {
    let cfg = OrbeConfig::default();
    let (mut models, mut samples_min, mut worst_gap) = (0, usize::MAX, 0.0_f64);
    let mut failures = Vec::new();
    for seed in 0..30u64 {
        let sense = if seed % 2 == 0 { Sense::Maximize } else { Sense::Minimize };
        let spec = RandomModelSpec { n_states: 3 + (seed % 2) as usize, n_actions: 2, sense, ..Default::default() };
        let m = random_model_with_twins(&spec, seed)?;
        let r = compute_orbe(&m, &cfg)?;
        worst_gap = worst_gap.max((r.robust_value - r.optimal_robust_value).abs());
        let samples = sample_transition_functions(&m, 200, seed)?;
        samples_min = samples_min.min(samples.len());
        for other in enumerate_deterministic_policies(&m, 10_000)? {
            if dominance_check(&m, &other, &r.policy, &samples, |_| 1e-7)?.relation == Relation::StrictlyDominates {
                failures.push(seed);
                break;
            }
        }
        models += 1;
    }
    let ok = failures.is_empty() && samples_min >= 200 && worst_gap <= 2.0 * cfg.solver.epsilon;
    Ok((
        ok,
        format!(
            "{models} models, >= {samples_min} samples each, dominated in {failures:?}, max robust-value gap {worst_gap:.2e}"
        ),
    ))
}

fn point_models() -> Outcome {
    let (mut worst_rvi, mut worst_orbe) = (0.0_f64, 0.0_f64);
    for seed in 0..30u64 {
        let sense = if seed % 2 == 0 { Sense::Maximize } else { Sense::Minimize };
        let spec = RandomModelSpec {
            n_states: 1 + (seed % 6) as usize,
            n_actions: 1 + (seed % 3) as usize,
            sense,
            point_prob: 1.0,
            ..Default::default()
        };
        let m = random_interval_rmdp(&spec, 500 + seed)?;
        let p = point_transition(&m).expect("all sets are points");
        let (v_classic, _) = classical_value_iteration(&m, &p, 1e-12, 20_000);
        let sol = robust_value_iteration(&m, &tight(), None, sense.adversary())?;
        worst_rvi = worst_rvi.max(sol.value.max_abs_diff(&v_classic));
        let r = compute_orbe(&m, &OrbeConfig { solver: tight(), ..OrbeConfig::default() })?;
        worst_orbe = worst_orbe.max(evaluate_policy_exact(&m, &r.policy, &p)?.max_abs_diff(&v_classic));
    }
    let ok = worst_rvi <= 1e-6 && worst_orbe <= 1e-6;
    Ok((ok, format!("30 models, RVI vs classical {worst_rvi:.2e}, ORBE policy vs optimum {worst_orbe:.2e}")))
}

fn main() -> ExitCode {
    let cases = corpus().expect("corpus builds");
    let t = Instant::now();
    let rows = bench_rows();
    let bench_secs = t.elapsed().as_secs_f64();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("fig1 pipeline", Box::new(fig1_pipeline)),
        ("fig1 exact values", Box::new(fig1_values)),
        ("gridworld BE table", Box::new(|| gridworld_table(&rows))),
        ("refinement overhead", Box::new(|| overheads(&rows))),
        ("rational form vs direct solve", Box::new(|| rational_equivalence(&cases))),
        ("derivative vs finite differences", Box::new(|| derivative_accuracy(&cases))),
        ("segment equivalence", Box::new(|| segment_agreement(&cases))),
        ("non-domination", Box::new(non_domination)),
        ("point-model degeneracy", Box::new(point_models)),
    ];
    let mut all = true;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        all &= ok;
        println!("{} {}. {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("({} gridworld runs in {bench_secs:.1}s)", rows.len());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
