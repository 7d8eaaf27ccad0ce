use std::path::PathBuf;

use orbe_core::oracle::{
    default_slack, dominance_check, enumerate_deterministic_policies, random_interval_rmdp, random_member,
    random_model_with_twins, sample_transition_functions, RandomModelSpec, Relation,
};
use orbe_core::orbe::{
    derivative_stage, derivative_toward_center, Anchor, CandidateSet, InteriorStatus, Stage, WorstBestPair,
};
use orbe_core::rational::{directional_derivative, Direction, RationalBatch};
use orbe_core::{compute_orbe, load_model, OrbeConfig, Rmdp, Sense};
use proptest::prelude::*;

fn fixture(name: &str) -> Rmdp {
    load_model(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)).unwrap()
}

#[test]
fn unique_optimum_stops_after_first_stage() {
    let m = fixture("unique-optimum.rmdp.json");
    let r = compute_orbe(&m, &OrbeConfig::default()).unwrap();
    assert_eq!(r.stage_reached, Stage::MaxminUnique);
    assert_eq!(r.candidate_counts.len(), 1);
    assert!(r.interior_condition.iter().all(Option::is_none));
}

#[test]
fn triangle_fixture_is_perturbed() {
    let m = fixture("triangle-violated.rmdp.json");
    let r = compute_orbe(&m, &OrbeConfig::default()).unwrap();
    assert_eq!(r.interior_condition[0], Some(InteriorStatus::Perturbed));
    assert_eq!(r.interior_condition[1], None);
    assert!((r.robust_value - r.optimal_robust_value).abs() < 1e-9);
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["interior_condition"][0], "perturbed");
}

#[test]
fn report_serializes_stage_names() {
    let m = fixture("fig1.rmdp.json");
    let r = compute_orbe(&m, &OrbeConfig::default()).unwrap();
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["stage_reached"], "maxmax-unique");
    assert_eq!(json["policy"][0], serde_json::json!([0.0, 1.0]));
    assert_eq!(json["candidate_counts"][0]["stage"], "maxmin-unique");
}

#[test]
fn rejects_bad_config() {
    let m = fixture("fig1.rmdp.json");
    assert!(compute_orbe(&m, &OrbeConfig { deriv_tol_rel: -1.0, ..OrbeConfig::default() }).is_err());
    assert!(compute_orbe(&m, &OrbeConfig { perturbation_step: 0.0, ..OrbeConfig::default() }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn orbe_is_optimal_robust_and_undominated(seed in any::<u64>(), min in any::<bool>()) {
        let sense = if min { Sense::Minimize } else { Sense::Maximize };
        let spec = RandomModelSpec { n_states: 3, n_actions: 2, sense, ..Default::default() };
        let m = random_model_with_twins(&spec, seed).unwrap();
        let cfg = OrbeConfig::default();
        let r = compute_orbe(&m, &cfg).unwrap();
        prop_assert!((r.robust_value - r.optimal_robust_value).abs() <= 2.0 * cfg.solver.epsilon);
        let samples = sample_transition_functions(&m, 120, seed).unwrap();
        for other in enumerate_deterministic_policies(&m, 1000).unwrap() {
            let v = dominance_check(&m, &other, &r.policy, &samples, default_slack).unwrap();
            prop_assert_ne!(v.relation, Relation::StrictlyDominates);
        }
    }
}

#[test]
fn plain_rvi_is_often_dominated_on_the_twin_corpus() {
    let mut dominated = 0;
    for seed in 0..20 {
        let m = random_model_with_twins(&RandomModelSpec { n_states: 3, n_actions: 2, ..Default::default() }, seed).unwrap();
        let sol = orbe_core::robust_value_iteration(&m, &Default::default(), None, m.sense().adversary()).unwrap();
        let samples = sample_transition_functions(&m, 120, seed).unwrap();
        let beaten = enumerate_deterministic_policies(&m, 1000).unwrap().iter().any(|other| {
            dominance_check(&m, other, &sol.policy, &samples, default_slack).unwrap().relation == Relation::StrictlyDominates
        });
        dominated += beaten as usize;
    }
    assert!(dominated >= 5, "only {dominated} of 20 first-found policies were dominated");
}

/// The derivative rule evaluated directly from dense rational forms.
fn dense_keep(m: &Rmdp, cands: &CandidateSet, pair: &WorstBestPair, at: Anchor, rel: f64) -> Vec<Vec<usize>> {
    let point = if at == Anchor::Worst { &pair.worst } else { &pair.best };
    let keep = if at == Anchor::Worst { m.sense().agent() } else { m.sense().agent().opposite() };
    let batch = RationalBatch::new(m, &cands.first_member(m.n_actions()), point).unwrap();
    (0..m.n_states())
        .map(|s| {
            let set = cands.at(s);
            if set.len() == 1 {
                return set.to_vec();
            }
            let v = Direction::between(pair.worst.state(s), pair.best.state(s));
            let d: Vec<f64> = set
                .iter()
                .map(|&a| {
                    let mut pi_s = vec![0.0; m.n_actions()];
                    pi_s[a] = 1.0;
                    directional_derivative(&batch.form_with(s, &pi_s), point.state(s), &v)
                })
                .collect();
            let best = d.iter().copied().fold(keep.worst(), |acc, x| keep.pick(acc, x));
            set.iter().zip(&d).filter(|(_, x)| (**x - best).abs() <= rel * (1.0 + best.abs())).map(|(&a, _)| a).collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn screened_derivative_stage_matches_dense_rule(seed in any::<u64>(), min in any::<bool>(), twins in any::<bool>()) {
        let sense = if min { Sense::Minimize } else { Sense::Maximize };
        let spec = RandomModelSpec { n_states: 5, n_actions: 3, sense, ..Default::default() };
        let m = if twins { random_model_with_twins(&spec, seed) } else { random_interval_rmdp(&spec, seed) }.unwrap();
        let cands = CandidateSet::full(&m);
        let pair = WorstBestPair {
            worst: random_member(&m, seed).unwrap(),
            best: random_member(&m, seed ^ 0x5a5a).unwrap(),
            worst_value: f64::NAN,
            best_value: f64::NAN,
        };
        for at in [Anchor::Worst, Anchor::Best] {
            let got = derivative_stage(&m, &cands, &pair, at, 1e-7).unwrap();
            let want = dense_keep(&m, &cands, &pair, at, 1e-7);
            for s in 0..m.n_states() {
                prop_assert_eq!(got.at(s), &want[s][..], "state {} anchor {:?}", s, at);
            }
        }
        let centered = WorstBestPair { best: m.center_transition(), ..pair };
        let want = derivative_stage(&m, &cands, &centered, Anchor::Worst, 1e-7).unwrap();
        prop_assert_eq!(derivative_toward_center(&m, &cands, &centered.worst, 1e-7).unwrap(), want);
    }
}

#[test]
fn gridworld_derivative_stage_matches_dense_rule() {
    use orbe_core::benchmarks::{gen_gridworld, GridworldConfig};
    use orbe_core::solver::optimal_action_set;
    for seed in 0..4 {
        let m = gen_gridworld(&GridworldConfig { seed, nu: 0.5, ..GridworldConfig::square(36).unwrap() }).unwrap();
        let sol = orbe_core::robust_value_iteration(&m, &Default::default(), None, m.sense().adversary()).unwrap();
        let cands = optimal_action_set(&m, &sol, 1e-3).unwrap();
        let pair = WorstBestPair {
            worst: sol.worst_transition.clone(),
            best: m.center_transition(),
            worst_value: f64::NAN,
            best_value: f64::NAN,
        };
        let got = derivative_toward_center(&m, &cands, &sol.worst_transition, 1e-7).unwrap();
        let want = dense_keep(&m, &cands, &pair, Anchor::Worst, 1e-7);
        assert!(!cands.is_singleton());
        for s in 0..m.n_states() {
            assert_eq!(got.at(s), &want[s][..], "seed {seed} state {s}");
        }
    }
}
