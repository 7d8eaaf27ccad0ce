use std::path::PathBuf;

use orbe_core::oracle::{dominance_check, default_slack, sample_transition_functions, Relation};
use orbe_core::orbe::Stage;
use orbe_core::{
    compute_orbe, evaluate_policy_exact, load_model, robust_value_iteration, OrbeConfig, Policy, Rmdp,
    SolverConfig, StateTransition, TransitionFunction,
};

fn fixture(name: &str) -> Rmdp {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    load_model(path).unwrap()
}

/// Fig. 1 transitions at a given xi.
fn at_xi(xi: f64) -> TransitionFunction {
    TransitionFunction(vec![
        StateTransition::from_rows(&[vec![1.0 - xi, xi], vec![1.0 - 2.0 * xi, 2.0 * xi]]).unwrap(),
        StateTransition::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
    ])
}

/// Cramer's rule on the two Bellman equations, with beta the weight on a1.
fn hand_values(beta: f64, xi: f64, gamma: f64) -> (f64, f64) {
    // V1 = gamma (q V2 + (1 - q) V1), q = beta xi + (1 - beta) 2 xi
    // V2 = 1 + gamma (V1 + V2) / 2
    let q = beta * xi + (1.0 - beta) * 2.0 * xi;
    let (a11, a12, b1) = (1.0 - gamma * (1.0 - q), -gamma * q, 0.0);
    let (a21, a22, b2) = (-gamma * 0.5, 1.0 - gamma * 0.5, 1.0);
    let det = a11 * a22 - a12 * a21;
    ((b1 * a22 - a12 * b2) / det, (a11 * b2 - a21 * b1) / det)
}

fn beta_policy(beta: f64) -> Policy {
    Policy::new(vec![vec![beta, 1.0 - beta], vec![1.0, 0.0]]).unwrap()
}

#[test]
fn fixture_shape() {
    let m = fixture("fig1.rmdp.json");
    assert_eq!((m.n_states(), m.n_actions()), (2, 2));
    assert_eq!(m.gamma(), 0.9);
    assert_eq!(m.rewards(), &[vec![0.0, 0.0], vec![1.0, 1.0]]);
}

#[test]
fn exact_values_match_hand_solve() {
    let m = fixture("fig1.rmdp.json");
    for &(beta, xi) in &[(0.0, 0.5), (1.0, 0.5), (0.0, 0.0), (0.3, 0.2), (0.7, 0.45)] {
        let v = evaluate_policy_exact(&m, &beta_policy(beta), &at_xi(xi)).unwrap();
        let (v1, v2) = hand_values(beta, xi, 0.9);
        assert!((v.values[0] - v1).abs() < 1e-9, "beta {beta} xi {xi}");
        assert!((v.values[1] - v2).abs() < 1e-9);
    }
}

#[test]
fn pinned_values_at_half() {
    let m = fixture("fig1.rmdp.json");
    let v0 = evaluate_policy_exact(&m, &beta_policy(0.0), &at_xi(0.5)).unwrap();
    assert!((v0.values[0] - 6.2069).abs() < 1e-3);
    assert!((v0.values[1] - 6.8966).abs() < 1e-3);
    let v1 = evaluate_policy_exact(&m, &beta_policy(1.0), &at_xi(0.5)).unwrap();
    assert!((v1.values[0] - 4.5).abs() < 1e-3);
    assert!((v1.values[1] - 5.5).abs() < 1e-3);
}

#[test]
fn point_fixture_reproduces_half() {
    let m = fixture("fig1-point-xi05.rmdp.json");
    let sol = robust_value_iteration(&m, &SolverConfig::default(), None, m.sense().adversary()).unwrap();
    let (v1, _) = hand_values(0.0, 0.5, 0.9);
    assert!((sol.robust_return(&m) - v1).abs() < 1e-3);
    assert_eq!(sol.policy.actions(), Some(vec![1, 0]));
}

#[test]
fn worst_case_return_is_zero() {
    let m = fixture("fig1.rmdp.json");
    let sol = robust_value_iteration(&m, &SolverConfig::default(), None, m.sense().adversary()).unwrap();
    assert!(sol.converged);
    assert!(sol.robust_return(&m).abs() < 1e-6);
    let x = sol.worst_transition.state(0);
    assert!(x.get(0, 1).abs() < 1e-9 && x.get(1, 1).abs() < 1e-9);
}

#[test]
fn orbe_picks_a2() {
    let m = fixture("fig1.rmdp.json");
    let r = compute_orbe(&m, &OrbeConfig::default()).unwrap();
    assert_eq!(r.stage_reached, Stage::MaxmaxUnique);
    assert_eq!(r.candidate_counts[0].counts, vec![2, 1]);
    assert_eq!(r.policy.actions(), Some(vec![1, 0]));
    assert!(r.robust_value.abs() < 1e-6);
    assert!(r.optimal_robust_value.abs() < 1e-6);
}

#[test]
fn a2_strictly_dominates_a1() {
    let m = fixture("fig1.rmdp.json");
    let samples = sample_transition_functions(&m, 50, 7).unwrap();
    let v = dominance_check(&m, &beta_policy(0.0), &beta_policy(1.0), &samples, default_slack).unwrap();
    assert_eq!(v.relation, Relation::StrictlyDominates);
    // Both ends of the line are sampled; the gap peaks strictly inside it.
    let xis: Vec<f64> = samples.iter().map(|p| p.state(0).get(0, 1)).collect();
    assert!(xis.iter().any(|x| x.abs() < 1e-9));
    assert!(xis.iter().any(|x| (x - 0.5).abs() < 1e-9));
    let w = v.witness_better.unwrap();
    assert!(w.state(0).get(0, 1) > 0.0);
    let back = dominance_check(&m, &beta_policy(1.0), &beta_policy(0.0), &samples, default_slack).unwrap();
    assert_eq!(back.relation, Relation::StrictlyDominatedBy);
}

#[test]
fn a2_beats_every_mixture_off_the_worst_case() {
    let m = fixture("fig1.rmdp.json");
    for i in 1..=10 {
        let xi = 0.05 * i as f64;
        let p = at_xi(xi);
        let best = evaluate_policy_exact(&m, &beta_policy(0.0), &p).unwrap().values[0];
        for j in 1..=10 {
            let other = evaluate_policy_exact(&m, &beta_policy(0.1 * j as f64), &p).unwrap().values[0];
            assert!(best > other, "xi {xi}");
        }
    }
}
