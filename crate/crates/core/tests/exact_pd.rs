mod common;

use cmdp_solver::exact::PrimalBranch;
use cmdp_solver::{
    conservative_wrap, dual_descent, evaluate_policy, figure1_cmdp, lagrangian, npgpd_step, pgpd_step,
    primal_feasibility_step, project_simplex, random_cmdp, run_solver, solve_lp, theorem_bounds, Algorithm, Channel,
    Cmdp, DirectParams, PdState, Primal, SmoothPolicy, SoftmaxParams, SolverConfig,
};
use common::{instance, normals, random_policy, rng};
use proptest::prelude::*;

/// Central differences of `V_L(ρ)` in the raw table entries.
fn fd_direct_gradient(m: &Cmdp, params: &DirectParams, lambda: f64) -> Vec<f64> {
    let h = 1e-6;
    (0..params.theta.len())
        .map(|i| {
            let mut up = params.clone();
            let mut down = params.clone();
            up.theta[i] += h;
            down.theta[i] -= h;
            (lagrangian(m, &up.policy(), lambda).unwrap() - lagrangian(m, &down.policy(), lambda).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn projected_ascent(params: &DirectParams, grad: &[f64], eta: f64) -> Vec<f64> {
    let na = params.n_actions;
    params
        .theta
        .chunks(na)
        .zip(grad.chunks(na))
        .flat_map(|(row, g)| project_simplex(&row.iter().zip(g).map(|(t, d)| t + eta * d).collect::<Vec<_>>()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dual_iterates_stay_in_domain(seed in 0u64..10_000, eta2 in 0.0f64..5.0) {
        let m = instance(seed, 4, 3);
        let xi = solve_lp(&m).unwrap().slater_slack;
        let mut state = PdState::softmax_zero(&m, 1.0, eta2, xi).unwrap();
        for _ in 0..50 {
            let next = npgpd_step(&m, &state).unwrap().next;
            prop_assert!((0.0..=state.lambda_cap).contains(&next.lambda));
            prop_assert!((next.lambda - state.lambda).abs() <= eta2 / (1.0 - m.discount()) + 1e-12);
            state = next;
        }
    }
}

#[test]
fn pgpd_step_matches_finite_difference_ascent() {
    let m = figure1_cmdp(0.9, 0.8).unwrap();
    let params = DirectParams::new(
        5,
        2,
        vec![0.3, 0.7, 0.6, 0.4, 0.5, 0.5, 0.2, 0.8, 0.9, 0.1],
    )
    .unwrap();
    let (eta1, lambda) = (0.05, 1.5);
    let mut state = PdState::new(&m, Primal::Direct(params.clone()), eta1, 0.1, 0.2).unwrap();
    state.lambda = lambda;
    let next = pgpd_step(&m, &state).unwrap();
    let Primal::Direct(got) = &next.primal else { panic!("direct iterate expected") };
    let expected = projected_ascent(&params, &fd_direct_gradient(&m, &params, lambda), eta1);
    for (a, b) in got.theta.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    let v_g = evaluate_policy(&m, &params.policy()).unwrap().value_at(Channel::Utility, m.initial());
    assert!((next.lambda - (lambda - 0.1 * (v_g - 0.8)).clamp(0.0, state.lambda_cap)).abs() < 1e-14);
}

#[test]
fn pgpd_without_dual_is_projected_reward_ascent() {
    let m = instance(5, 4, 3);
    let params = DirectParams::from_policy(&random_policy(&mut rng(5), 4, 3));
    let mut state = PdState::new(&m, Primal::Direct(params), 0.3, 0.0, 0.1).unwrap();
    for _ in 0..10 {
        let Primal::Direct(current) = &state.primal else { unreachable!() };
        let expected = projected_ascent(current, &fd_direct_gradient(&m, current, 0.0), 0.3);
        state = pgpd_step(&m, &state).unwrap();
        assert_eq!(state.lambda, 0.0);
        let Primal::Direct(got) = &state.primal else { unreachable!() };
        for (a, b) in got.theta.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn feasibility_switching_reaches_the_constraint() {
    let m = random_cmdp(17, 3, 2, 0.9, 0.8).unwrap();
    let mut theta = SoftmaxParams::zeros(3, 2);
    let mut utility_steps = 0;
    let mut tail_v_g = Vec::new();
    for t in 0..500 {
        let (next, branch) = primal_feasibility_step(&m, &theta, 0.02, 0.0).unwrap();
        if branch == PrimalBranch::Utility {
            utility_steps += 1;
        }
        theta = next;
        if t >= 250 {
            tail_v_g.push(evaluate_policy(&m, &theta.policy()).unwrap().value_at(Channel::Utility, m.initial()));
        }
    }
    let mean = tail_v_g.iter().sum::<f64>() / tail_v_g.len() as f64;
    assert!(m.offset() - mean <= 0.05, "violation {}", m.offset() - mean);
    assert!(utility_steps > 0);
}

#[test]
fn dual_descent_approaches_the_optimum() {
    for seed in 0..4 {
        let m = instance(seed + 60, 5, 3);
        let sol = solve_lp(&m).unwrap();
        let run = dual_descent(&m, 0.05, 3000, 1e-10).unwrap();
        assert!((run.best_dual_value - sol.v_r_star).abs() <= 1e-2, "{} vs {}", run.best_dual_value, sol.v_r_star);
        assert!(run.best_dual_value >= sol.v_r_star - 1e-8);
    }
    let slack = instance(3, 5, 3).with_offset(1e-6);
    let run = dual_descent(&slack, 0.05, 200, 1e-10).unwrap();
    assert!(run.lambdas.iter().all(|&l| l == 0.0));
}

#[test]
fn mixture_policy_realises_the_averaged_values() {
    for seed in 0..3 {
        let m = instance(seed + 80, 4, 3);
        let run = run_solver(&m, Algorithm::NpgPd, &SolverConfig::with_iterations(200)).unwrap();
        let last = run.log.records.last().unwrap();
        let vals = evaluate_policy(&m, &run.mixture).unwrap();
        assert!((vals.value_at(Channel::Reward, m.initial()) - last.avg_v_r).abs() < 1e-8);
        assert!((vals.value_at(Channel::Utility, m.initial()) - last.avg_v_g).abs() < 1e-8);
    }
}

#[test]
fn averaged_gap_respects_the_bound_at_every_horizon() {
    let m = figure1_cmdp(0.9, 0.8).unwrap();
    for t in [25, 100, 400, 1600] {
        let run = run_solver(&m, Algorithm::NpgPd, &SolverConfig::with_iterations(t)).unwrap();
        let bounds = theorem_bounds(0.9, 0.2, t).unwrap();
        let last = run.log.records.last().unwrap();
        assert!(last.gap.abs() < bounds.gap, "T={t}: gap {}", last.gap);
        assert!(last.violation < bounds.violation);
    }
}

#[test]
fn untightened_conservative_run_only_widens_the_dual_domain() {
    let m = instance(90, 4, 3);
    let sol = solve_lp(&m).unwrap();
    let wrapped = conservative_wrap(&m, 0.0, sol.slater_slack).unwrap();
    let config = wrapped.configure(SolverConfig::with_iterations(150), sol.v_r_star);
    let a = run_solver(&wrapped.cmdp, Algorithm::NpgPd, &config).unwrap();
    let plain = SolverConfig { lambda_cap: Some(wrapped.lambda_cap), ..SolverConfig::with_iterations(150) };
    let b = run_solver(&m, Algorithm::NpgPd, &plain).unwrap();
    assert_eq!(a.log.records, b.log.records);
}

#[test]
fn tightened_run_ends_without_violation() {
    let m = figure1_cmdp(0.9, 0.8).unwrap();
    let sol = solve_lp(&m).unwrap();
    let wrapped = conservative_wrap(&m, sol.slater_slack / 4.0, sol.slater_slack).unwrap();
    let config = wrapped.configure(SolverConfig::with_iterations(4000), sol.v_r_star);
    let run = run_solver(&wrapped.cmdp, Algorithm::NpgPd, &config).unwrap();
    let last = run.log.records.last().unwrap();
    assert_eq!(last.violation, 0.0);
    assert!(last.gap < theorem_bounds(0.9, sol.slater_slack, 4000).unwrap().gap + sol.slater_slack / 4.0 / 0.1);
}

#[test]
fn npg_iterates_are_invariant_to_row_shifts() {
    let m = instance(95, 3, 3);
    let base = normals(&mut rng(95), 9, 1.0);
    let shifted: Vec<f64> = base.iter().enumerate().map(|(i, x)| x + [3.0, -2.0, 0.5][i / 3]).collect();
    let step = |theta: Vec<f64>| {
        let mut s = PdState::new(&m, Primal::Softmax(SoftmaxParams::new(3, 3, theta).unwrap()), 0.7, 0.1, 0.3).unwrap();
        s.lambda = 0.4;
        npgpd_step(&m, &s).unwrap().next
    };
    let (a, b) = (step(base), step(shifted));
    assert!(a.primal.policy().max_abs_diff(&b.primal.policy()) < 1e-12);
    assert!((a.lambda - b.lambda).abs() < 1e-12);
}
