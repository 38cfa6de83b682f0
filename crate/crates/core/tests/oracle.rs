mod common;

use common::{tiny, Tiny};
use rlmc_core::evaluation::evaluate_policy;
use rlmc_core::solvers::{
    solve_control_randomisation, solve_grid_discretisation, solve_regress_later, Algorithm, Mode,
    Policy, SolveOutput, SolverConfig,
};

fn check_policy(t: &Tiny, policy: &Policy) {
    for s in 0..3 {
        let paths = t.paths_from(s);
        let r = evaluate_policy(policy, &t.problem, &paths, &[t.states[s]], &[2.0]).unwrap();
        let opt = t.dp.value(0, s, 2);
        assert_eq!(r.violation_count, 0);
        assert!(
            r.mean_value - 3.0 * r.std_error <= opt + 1e-12,
            "{} > {opt}",
            r.mean_value
        );
        // exact continuation values make the greedy rule optimal
        assert!(
            (r.mean_value - opt).abs() < 1e-8,
            "start {s}: {} vs {opt}",
            r.mean_value
        );
    }
}

fn check(t: &Tiny, out: &SolveOutput) {
    let rec = out.backward_values.as_ref().unwrap();
    assert!(!rec.is_empty());
    let gap = t.max_gap(rec);
    assert!(gap < 1e-8, "max gap {gap}");
    check_policy(t, &out.policy);
}

#[test]
fn grid_discretisation_matches_dp() {
    let t = tiny();
    for mode in [Mode::ValueIteration, Mode::PerformanceIteration] {
        let mut c = SolverConfig::new(Algorithm::GridDiscretisation, mode, t.paths.m_paths());
        c.grid_levels = 5;
        c.record_backward_values = true;
        let out = solve_grid_discretisation(&t.problem, &Tiny::gd_basis(), &t.paths, &c).unwrap();
        check(&t, &out);
    }
}

#[test]
fn regress_later_matches_dp() {
    let t = tiny();
    let paths = t.replicated(5);
    for (mode, backward) in [
        (Mode::ValueIteration, false),
        (Mode::PerformanceIteration, false),
    ] {
        let mut c = SolverConfig::new(Algorithm::RegressLater, mode, paths.m_paths());
        c.inventory_sampling = t.rl_placement();
        c.rl_backward_paths = backward;
        c.record_backward_values = true;
        let out =
            solve_regress_later(&t.problem, &t.process, &Tiny::rl_basis(), &paths, &c).unwrap();
        check(&t, &out);
    }
}

#[test]
fn control_randomisation_matches_dp() {
    let t = tiny();
    let paths = t.replicated(Tiny::cr_blocks());
    let mut c = SolverConfig::new(
        Algorithm::ControlRandomisation,
        Mode::ValueIteration,
        paths.m_paths(),
    );
    c.control_sampler = t.cr_sampler();
    c.record_backward_values = true;
    let out = solve_control_randomisation(&t.problem, &Tiny::cr_basis(), &paths, &c).unwrap();
    check(&t, &out);
}

#[test]
fn policy_file_round_trip_keeps_decisions() {
    let t = tiny();
    let mut c = SolverConfig::new(
        Algorithm::GridDiscretisation,
        Mode::ValueIteration,
        t.paths.m_paths(),
    );
    c.grid_levels = 5;
    let out = solve_grid_discretisation(&t.problem, &Tiny::gd_basis(), &t.paths, &c).unwrap();
    let back = Policy::from_json(&out.policy.to_json().unwrap()).unwrap();
    assert_eq!(back, out.policy);
    check_policy(&t, &back);
}
