use orbe_core::oracle::{
    default_slack, dominance_check, enumerate_deterministic_policies, enumerate_vertices, random_interval_rmdp,
    random_model_with_twins, random_policy, sample_transition_functions, sample_uncertainty, RandomModelSpec, Relation,
};
use orbe_core::solver::inner_optimize_state;
use orbe_core::{interval_to_polytope, Error, Extremum, IntervalSet, Rmdp, RmdpParts, Sense, StateTransition, UncertaintySet, ValueFunction};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point_model(n: usize, na: usize) -> Rmdp {
    let row: Vec<f64> = (0..n).map(|s| if s == 0 { 1.0 } else { 0.0 }).collect();
    Rmdp::new(RmdpParts {
        n_states: n,
        n_actions: na,
        gamma: 0.9,
        sense: Sense::Maximize,
        initial: row.clone(),
        rewards: vec![vec![1.0; na]; n],
        enabled: None,
        uncertainty: vec![
            UncertaintySet::Interval(IntervalSet { lower: vec![row.clone(); na], upper: vec![row.clone(); na] });
            n
        ],
        meta: None,
    })
    .unwrap()
}

#[test]
fn policy_counts_and_cap() {
    assert_eq!(enumerate_deterministic_policies(&point_model(2, 2), 10).unwrap().len(), 4);
    let err = enumerate_deterministic_policies(&point_model(3, 3), 10).unwrap_err();
    assert!(matches!(err, Error::PolicySpaceTooLarge { size: 27, cap: 10 }));
    assert!(err.to_string().contains("policy space 27 exceeds cap"));
}

#[test]
fn point_set_samples_repeat_the_point() {
    let m = point_model(2, 1);
    let pts = sample_uncertainty(&m, 1, 5, 0).unwrap();
    assert_eq!(pts.len(), 5);
    assert!(pts.iter().all(|p| p == &pts[0] && p.get(0, 0) == 1.0));
}

#[test]
fn segment_samples_include_both_corners() {
    let mut parts = point_model(2, 1).to_parts();
    parts.uncertainty[0] = UncertaintySet::Interval(IntervalSet { lower: vec![vec![0.2, 0.3]], upper: vec![vec![0.7, 0.8]] });
    let m = Rmdp::new(parts).unwrap();
    let pts = sample_uncertainty(&m, 0, 10, 4).unwrap();
    assert!(pts.iter().any(|p| (p.get(0, 0) - 0.2).abs() < 1e-12));
    assert!(pts.iter().any(|p| (p.get(0, 0) - 0.7).abs() < 1e-12));
    assert!(pts.iter().all(|p| m.contains(0, p, 1e-12)));
}

#[test]
fn samples_are_deterministic_per_seed() {
    let m = random_interval_rmdp(&RandomModelSpec::default(), 2).unwrap();
    assert_eq!(sample_transition_functions(&m, 30, 1).unwrap(), sample_transition_functions(&m, 30, 1).unwrap());
}

#[test]
fn equal_policies_compare_equal() {
    let m = random_interval_rmdp(&RandomModelSpec::default(), 3).unwrap();
    let pi = random_policy(&m, &mut ChaCha8Rng::seed_from_u64(0));
    let samples = sample_transition_functions(&m, 20, 0).unwrap();
    assert_eq!(dominance_check(&m, &pi, &pi, &samples, default_slack).unwrap().relation, Relation::Equal);
}

#[test]
fn incomparable_policies_exist_in_the_random_corpus() {
    let found = (0..30).any(|seed| {
        let m = random_interval_rmdp(&RandomModelSpec { n_states: 3, ..Default::default() }, seed).unwrap();
        let samples = sample_transition_functions(&m, 60, seed).unwrap();
        let pols = enumerate_deterministic_policies(&m, 100).unwrap();
        pols.iter().any(|a| {
            pols.iter().any(|b| {
                let v = dominance_check(&m, a, b, &samples, default_slack).unwrap();
                v.relation == Relation::Incomparable && v.witness_better.is_some() && v.witness_worse.is_some()
            })
        })
    });
    assert!(found);
}

/// Sum of the normals of the box constraints tight at `x`.
fn active_objective(iv: &IntervalSet, x: &StateTransition) -> Vec<f64> {
    (0..x.n_states())
        .map(|j| {
            let v = x.get(0, j);
            let mut c = 0.0;
            if (v - iv.upper[0][j]).abs() <= 1e-9 {
                c += 1.0;
            }
            if (v - iv.lower[0][j]).abs() <= 1e-9 {
                c -= 1.0;
            }
            c
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dominance_is_antisymmetric(seed in any::<u64>()) {
        let m = random_model_with_twins(&RandomModelSpec { n_states: 3, ..Default::default() }, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_policy(&m, &mut rng), random_policy(&m, &mut rng));
        let samples = sample_transition_functions(&m, 30, seed).unwrap();
        let ab = dominance_check(&m, &a, &b, &samples, default_slack).unwrap().relation;
        let ba = dominance_check(&m, &b, &a, &samples, default_slack).unwrap().relation;
        let mirrored = match ab {
            Relation::StrictlyDominates => Relation::StrictlyDominatedBy,
            Relation::StrictlyDominatedBy => Relation::StrictlyDominates,
            r => r,
        };
        prop_assert_eq!(ba, mirrored);
    }

    #[test]
    fn vertices_agree_with_lp_optima(seed in any::<u64>(), n in 2usize..6) {
        let spec = RandomModelSpec { n_states: n, n_actions: 1, ..Default::default() };
        let m = random_interval_rmdp(&spec, seed).unwrap();
        let poly = m.with_uncertainty((0..n).map(|s| interval_to_polytope(m.uncertainty(s))).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in 0..n {
            let UncertaintySet::Interval(iv) = m.uncertainty(s) else { unreachable!() };
            let verts = enumerate_vertices(m.uncertainty(s), 1, n).unwrap();
            prop_assert!(!verts.is_empty());
            for model in [&m, &poly] {
                // Every vertex is optimal for the sum of its active normals.
                for x in &verts {
                    let c = ValueFunction::new(active_objective(iv, x));
                    let (t, _) = inner_optimize_state(model, s, &[1.0], &c, Extremum::Max).unwrap();
                    prop_assert!((t.expect(0, &c.values) - x.expect(0, &c.values)).abs() <= 1e-9);
                }
                // Optima of random objectives are vertices.
                for _ in 0..100 {
                    let c = ValueFunction::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
                    let dir = if rng.random::<bool>() { Extremum::Max } else { Extremum::Min };
                    let (t, _) = inner_optimize_state(model, s, &[1.0], &c, dir).unwrap();
                    prop_assert!(verts.iter().any(|x| x.distance(&t) <= 1e-7), "optimum {:?} not a vertex", t);
                }
            }
        }
    }
}
