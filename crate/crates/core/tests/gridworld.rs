use orbe_core::benchmarks::{be_action_fraction, gen_gridworld, GridworldConfig, Variant, GRID_ACTIONS};
use orbe_core::experiment::run_pipelines;
use orbe_core::oracle::enumerate_vertices;
use orbe_core::solver::robust_q_values;
use orbe_core::{
    interval_to_polytope, load_model, robust_value_iteration, save_model, IntervalSet, Policy, Rmdp, SolverConfig,
    UncertaintySet,
};

fn solve(m: &Rmdp) -> orbe_core::RobustSolution {
    let sol = robust_value_iteration(m, &SolverConfig::default(), None, m.sense().adversary()).unwrap();
    assert!(sol.converged);
    sol
}

/// Decision cells and, per slot, the cell the move heads for (from the
/// support of its transition set).
fn heading(m: &Rmdp, s: usize, a: usize) -> usize {
    let t = solve_free_target(m, s, a);
    t.unwrap_or(s)
}

fn solve_free_target(m: &Rmdp, s: usize, a: usize) -> Option<usize> {
    match m.uncertainty(s) {
        UncertaintySet::Interval(iv) => (0..m.n_states()).find(|&t| t != s && iv.upper[a][t] > 0.0),
        UncertaintySet::Polytope(p) => p.support.as_ref().unwrap()[a].iter().copied().find(|&t| t != s),
    }
}

#[test]
fn two_cell_grid_without_slip() {
    let cfg = GridworldConfig { width: 2, height: 1, obstacles: 0, p: 0.0, q_max: 0.0, variant: Variant::Imdp, ..Default::default() };
    let m = gen_gridworld(&cfg).unwrap();
    assert_eq!(m.n_states(), 2);
    let sol = solve(&m);
    assert!((sol.value.values[0] - 1.0).abs() < 1e-9);
    assert_eq!(sol.value.values[1], 0.0);
    let q = robust_q_values(&m, &sol.value, m.sense().adversary(), None).unwrap();
    for d in 0..4 {
        assert_eq!(q[0][2 * d], q[0][2 * d + 1]);
    }
}

#[test]
fn ten_by_ten_layout() {
    let m = gen_gridworld(&GridworldConfig { seed: 42, ..Default::default() }).unwrap();
    let meta = m.meta().unwrap();
    assert_eq!((meta.width, meta.height), (Some(10), Some(10)));
    assert_eq!((meta.start, meta.goal), (0, 99));
    assert_eq!(meta.obstacles.len(), 10);
    assert_eq!(m.initial()[0], 1.0);
    for &o in &meta.obstacles {
        assert_eq!(m.enabled_actions(o).collect::<Vec<_>>(), vec![0]);
        assert_eq!(m.reward(o, 0), 0.0);
    }
}

#[test]
fn generation_is_deterministic_and_round_trips() {
    for variant in [Variant::Imdp, Variant::Srect] {
        let cfg = GridworldConfig { width: 3, height: 3, obstacles: 1, seed: 5, variant, ..Default::default() };
        let a = gen_gridworld(&cfg).unwrap();
        let b = gen_gridworld(&cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        save_model(&a, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.n_states(), 9);
    }
}

#[test]
fn slip_interval_vertices_are_its_corners() {
    let u = UncertaintySet::Interval(IntervalSet { lower: vec![vec![0.15, 0.75]], upper: vec![vec![0.25, 0.85]] });
    for set in [u.clone(), interval_to_polytope(&u)] {
        let mut slips: Vec<f64> = enumerate_vertices(&set, 1, 2).unwrap().iter().map(|v| v.get(0, 0)).collect();
        slips.sort_by(f64::total_cmp);
        assert_eq!(slips.len(), 2);
        assert!((slips[0] - 0.15).abs() < 1e-9 && (slips[1] - 0.25).abs() < 1e-9);
    }
}

#[test]
fn srect_vertices_are_the_two_shared_slips() {
    let cfg = GridworldConfig { width: 4, height: 4, obstacles: 2, seed: 3, ..Default::default() };
    let m = gen_gridworld(&cfg).unwrap();
    let meta = m.meta().unwrap().clone();
    for s in 0..m.n_states() {
        let moving_be: Vec<usize> =
            (0..GRID_ACTIONS).filter(|&a| meta.be_actions[s][a] && heading(&m, s, a) != s).collect();
        if moving_be.is_empty() {
            continue;
        }
        let verts = enumerate_vertices(m.uncertainty(s), GRID_ACTIONS, m.n_states()).unwrap();
        assert_eq!(verts.len(), 2, "state {s}");
        let mut slips: Vec<f64> = verts
            .iter()
            .map(|v| {
                let first = v.get(moving_be[0], s);
                assert!(moving_be.iter().all(|&a| (v.get(a, s) - first).abs() < 1e-9));
                first
            })
            .collect();
        slips.sort_by(f64::total_cmp);
        assert!((slips[0] - 0.15).abs() < 1e-9 && (slips[1] - 0.25).abs() < 1e-9);
    }
}

#[test]
fn twins_tie_on_helpful_moves_and_be_wins_off_worst_case() {
    for variant in [Variant::Imdp, Variant::Srect] {
        let cfg = GridworldConfig { width: 5, height: 5, obstacles: 2, seed: 9, variant, ..Default::default() };
        let m = gen_gridworld(&cfg).unwrap();
        let meta = m.meta().unwrap().clone();
        let sol = solve(&m);
        let v = &sol.value.values;
        let q = robust_q_values(&m, &sol.value, m.sense().adversary(), None).unwrap();
        let mut strict = 0;
        for s in 0..m.n_states() {
            if !meta.be_actions[s].iter().any(|&b| b) {
                continue;
            }
            for d in 0..4 {
                let (x, y) = (2 * d, 2 * d + 1);
                let (be, twin) = if meta.be_actions[s][x] { (x, y) } else { (y, x) };
                let t = heading(&m, s, be);
                assert_eq!(t, heading(&m, s, twin));
                if v[t] <= v[s] {
                    let (qb, qt) = (q[s][be].unwrap(), q[s][twin].unwrap());
                    assert!((qb - qt).abs() <= 1e-6, "state {s} direction {d}");
                    // At the BE action's most favourable slip the gap is gamma q (V(s) - V(t)).
                    let gap = m.gamma() * cfg.q_max * (v[s] - v[t]);
                    assert!(gap >= 0.0);
                    strict += (gap > 1e-9) as usize;
                }
            }
        }
        assert!(strict > 0);
    }
}

#[test]
fn be_fraction_counts_decision_states() {
    let m = gen_gridworld(&GridworldConfig { width: 3, height: 3, obstacles: 1, seed: 1, ..Default::default() }).unwrap();
    let meta = m.meta().unwrap().clone();
    let pick = |want: bool| -> Policy {
        let acts: Vec<usize> = (0..m.n_states())
            .map(|s| {
                if meta.be_actions[s].iter().any(|&b| b) {
                    (0..GRID_ACTIONS).find(|&a| meta.be_actions[s][a] == want).unwrap()
                } else {
                    0
                }
            })
            .collect();
        Policy::deterministic(&acts, GRID_ACTIONS)
    };
    assert_eq!(be_action_fraction(&m, &pick(true)).unwrap(), 100.0);
    assert_eq!(be_action_fraction(&m, &pick(false)).unwrap(), 0.0);
    let plain = orbe_core::oracle::random_interval_rmdp(&Default::default(), 0).unwrap();
    assert!(be_action_fraction(&plain, &Policy::deterministic(&[0; 4], 2)).is_err());
}

#[test]
fn declaration_order_drives_plain_rvi() {
    for variant in [Variant::Imdp, Variant::Srect] {
        for seed in 0..3 {
            let run = |nu: f64| {
                let cfg = GridworldConfig { width: 5, height: 5, obstacles: 2, seed, nu, variant, ..Default::default() };
                run_pipelines(&gen_gridworld(&cfg).unwrap(), &SolverConfig::default()).unwrap().1
            };
            assert_eq!(run(0.0), [0.0, 100.0, 100.0], "{variant:?} seed {seed}");
            assert_eq!(run(1.0), [100.0, 100.0, 100.0]);
            let mid = run(0.5);
            assert!(mid[0] > 0.0 && mid[0] < 100.0);
            assert_eq!(&mid[1..], &[100.0, 100.0]);
        }
    }
}
