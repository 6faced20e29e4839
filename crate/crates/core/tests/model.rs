mod common;

use cmdp_solver::io::to_json_string;
use cmdp_solver::{
    evaluate_policy, figure1_cmdp, lagrangian, state_action_visitation, value_iteration_scalarized, visitation, Channel,
    Cmdp, TabularPolicy,
};
use common::{instance, power_series_values, random_dist, random_policy, rng};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn performance_difference(seed in 0u64..10_000, s0 in 0usize..4) {
        let m = instance(seed, 4, 3);
        let mut r = rng(seed);
        let pi = random_policy(&mut r, 4, 3);
        let other = random_policy(&mut r, 4, 3);
        let vals = evaluate_policy(&m, &pi).unwrap();
        let vals_other = evaluate_policy(&m, &other).unwrap();
        let mut mu = vec![0.0; 4];
        mu[s0] = 1.0;
        let d = visitation(&m, &pi, &mu).unwrap().d;
        for ch in Channel::BOTH {
            let expected: f64 = (0..4)
                .flat_map(|s| (0..3).map(move |a| (s, a)))
                .map(|(s, a)| d[s] * pi.prob(s, a) * vals_other.adv(ch)[s * 3 + a])
                .sum::<f64>()
                / (1.0 - m.discount());
            let diff = vals.v(ch)[s0] - vals_other.v(ch)[s0];
            prop_assert!((diff - expected).abs() < 1e-8, "{diff} vs {expected}");
        }
    }

    #[test]
    fn advantages_have_zero_policy_mean(seed in 0u64..10_000) {
        let m = instance(seed, 5, 3);
        let pi = random_policy(&mut rng(seed), 5, 3);
        let vals = evaluate_policy(&m, &pi).unwrap();
        for ch in Channel::BOTH {
            for s in 0..5 {
                let mean: f64 = (0..3).map(|a| pi.prob(s, a) * vals.adv(ch)[s * 3 + a]).sum();
                prop_assert!(mean.abs() < 1e-10);
            }
            for (i, &v) in vals.v(ch).iter().enumerate() {
                prop_assert!((-1e-12..=10.0 + 1e-12).contains(&v), "v[{i}] = {v}");
            }
        }
    }

    #[test]
    fn visitation_dominates_scaled_base(seed in 0u64..10_000) {
        let m = instance(seed, 5, 2);
        let mut r = rng(seed);
        let pi = random_policy(&mut r, 5, 2);
        let mu = random_dist(&mut r, 5);
        let d = visitation(&m, &pi, &mu).unwrap().d;
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for (x, base) in d.iter().zip(&mu) {
            prop_assert!(*x >= (1.0 - m.discount()) * base - 1e-14);
        }
    }

    #[test]
    fn linear_solve_matches_power_series(seed in 0u64..10_000) {
        let m = instance(seed, 4, 2);
        let pi = random_policy(&mut rng(seed), 4, 2);
        let vals = evaluate_policy(&m, &pi).unwrap();
        let tail = m.discount().powi(500) / (1.0 - m.discount());
        for ch in Channel::BOTH {
            let series = power_series_values(&m, &pi, m.signal(ch), 500);
            for (a, b) in vals.v(ch).iter().zip(&series) {
                prop_assert!((a - b).abs() <= tail + 1e-12);
            }
        }
    }

    #[test]
    fn dual_function_dominates_lagrangian(seed in 0u64..10_000, lambda in 0.0f64..6.0) {
        let m = instance(seed, 4, 3);
        let opt = value_iteration_scalarized(&m, lambda, 1e-11).unwrap();
        let mut r = rng(seed ^ 0x5a5a);
        for _ in 0..10 {
            let pi = random_policy(&mut r, 4, 3);
            prop_assert!(opt.dual_value >= lagrangian(&m, &pi, lambda).unwrap() - 1e-9);
        }
    }

    #[test]
    fn json_roundtrip(seed in 0u64..10_000, ns in 1usize..5, na in 1usize..4) {
        let m = cmdp_solver::random_cmdp(seed, ns, na, 0.95, 0.3).unwrap();
        let text = to_json_string(&m).unwrap();
        let back: Cmdp = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(to_json_string(&back).unwrap(), text);
    }
}

#[test]
fn state_action_visitation_matches_truncated_sum() {
    let m = Cmdp::from_nested(
        vec![
            vec![vec![0.1, 0.9, 0.0], vec![0.5, 0.0, 0.5]],
            vec![vec![0.0, 0.3, 0.7], vec![1.0, 0.0, 0.0]],
            vec![vec![0.2, 0.2, 0.6], vec![0.0, 0.0, 1.0]],
        ],
        vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]],
        vec![vec![0.6, 0.5], vec![0.4, 0.3], vec![0.2, 0.1]],
        1.0,
        0.9,
        vec![0.2, 0.5, 0.3],
    )
    .unwrap();
    let pi = TabularPolicy::from_rows(vec![vec![0.3, 0.7], vec![0.5, 0.5], vec![0.9, 0.1]]).unwrap();
    let nu0 = [0.1, 0.2, 0.3, 0.1, 0.2, 0.1];
    // Pair-level chain: (s,a) -> (s',a') with P(s'|s,a) π(a'|s').
    let mut dist = nu0.to_vec();
    let mut total = vec![0.0; 6];
    let mut scale = 1.0 - 0.9;
    for _ in 0..500 {
        for (t, x) in total.iter_mut().zip(&dist) {
            *t += scale * x;
        }
        let mut next = vec![0.0; 6];
        for (i, &w) in dist.iter().enumerate() {
            for (s2, &p) in m.next_state_dist(i / 2, i % 2).iter().enumerate() {
                for a2 in 0..2 {
                    next[s2 * 2 + a2] += w * p * pi.prob(s2, a2);
                }
            }
        }
        dist = next;
        scale *= 0.9;
    }
    let nu = state_action_visitation(&m, &pi, &nu0).unwrap().d;
    for (a, b) in nu.iter().zip(&total) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn figure1_lagrangian_composes_evaluations() {
    let m = figure1_cmdp(0.9, 0.8).unwrap();
    let pi = TabularPolicy::uniform(5, 2);
    let vals = evaluate_policy(&m, &pi).unwrap();
    let expected = vals.value_at(Channel::Reward, m.initial()) + (vals.value_at(Channel::Utility, m.initial()) - 0.8);
    assert!((lagrangian(&m, &pi, 1.0).unwrap() - expected).abs() < 1e-14);
    // Uniform: p = q = 1/2, so V_r = γ/4 and V_g = 1/2 + γ/4.
    assert!((expected - (0.9 / 4.0 + 0.5 + 0.9 / 4.0 - 0.8)).abs() < 1e-14);
}

#[test]
fn tight_constraint_makes_multiplier_irrelevant() {
    let m = figure1_cmdp(0.9, 0.8).unwrap();
    let pi = TabularPolicy::uniform(5, 2);
    let v_g = evaluate_policy(&m, &pi).unwrap().value_at(Channel::Utility, m.initial());
    let tight = m.with_offset(v_g);
    let base = lagrangian(&tight, &pi, 0.0).unwrap();
    for lambda in [0.5, 3.0, 40.0] {
        assert!((lagrangian(&tight, &pi, lambda).unwrap() - base).abs() < 1e-12);
    }
}

#[test]
fn large_multiplier_prefers_utility_on_figure1() {
    let m = figure1_cmdp(0.9, 0.8).unwrap();
    let xi = 0.2;
    let lambda = 10.0 / xi;
    let opt = value_iteration_scalarized(&m, lambda, 1e-12).unwrap();
    // Brute force over deterministic choices in s1 and s2.
    let mut best = (f64::NEG_INFINITY, 0);
    for a1 in 0..2 {
        for a2 in 0..2 {
            let pi = TabularPolicy::deterministic(2, &[a1, a2, 0, 0, 0]);
            let v = lagrangian(&m, &pi, lambda).unwrap();
            if v > best.0 {
                best = (v, a1);
            }
        }
    }
    assert_eq!(best.1, 0);
    assert_eq!(opt.policy.prob(0, 0), 1.0);
    assert!((opt.dual_value - best.0).abs() < 1e-9);
}
