mod common;

use cmdp_solver::fa::default_fa_config;
use cmdp_solver::sampling::{sample_visitation_pair, Purpose};
use cmdp_solver::{
    evaluate_policy, projected_sgd, rollout_geometric, run_fa, sample_npgpd, solve_lp, unbiased_estimate, Anchor,
    Channel, Cmdp, EstimateKind, FeatureMap, LogLinearParams, RngStream, RolloutCap, SampleConfig, SampleMode,
    SgdConfig, TabularPolicy, TargetKind,
};
use common::{instance, normals, power_series_values, random_policy, rng};
use rand::Rng;
use rand_distr::StandardNormal;

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn single_state(gamma: f64, n_actions: usize) -> Cmdp {
    Cmdp::from_nested(
        vec![vec![vec![1.0]; n_actions]],
        vec![vec![1.0; n_actions]],
        vec![vec![0.5; n_actions]],
        0.1,
        gamma,
        vec![1.0],
    )
    .unwrap()
}

#[test]
fn rollout_mean_matches_value() {
    let m = instance(1, 4, 3);
    let pi = random_policy(&mut rng(1), 4, 3);
    let v = evaluate_policy(&m, &pi).unwrap();
    let n = 20_000;
    for s in 0..4 {
        let mut stream = RngStream::new(9, s as u64);
        let draws: Vec<f64> = (0..n)
            .map(|_| rollout_geometric(&m, &pi, Anchor::State(s), RolloutCap::default(), &mut stream).reward)
            .collect();
        let (mean, _) = mean_and_se(&draws);
        let tol = 3.0 / (1.0 - m.discount()) / (n as f64).sqrt();
        assert!((mean - v.v(Channel::Reward)[s]).abs() <= tol, "s={s}: {mean} vs {}", v.v(Channel::Reward)[s]);
    }
}

#[test]
fn single_state_q_estimate_has_the_geometric_mean() {
    let m = single_state(0.5, 1);
    let pi = TabularPolicy::uniform(1, 1);
    let (mut a, mut b) = (RngStream::new(2, 0), RngStream::new(2, 1));
    let draws: Vec<f64> = (0..50_000)
        .map(|_| unbiased_estimate(EstimateKind::Q, &m, &pi, &[1.0], RolloutCap::default(), &mut a, &mut b).unwrap().reward)
        .collect();
    let (mean, se) = mean_and_se(&draws);
    assert!((mean - 2.0).abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn advantage_estimate_with_one_action_is_centred() {
    let m = single_state(0.8, 1);
    let pi = TabularPolicy::uniform(1, 1);
    let (mut a, mut b) = (RngStream::new(3, 0), RngStream::new(3, 1));
    let draws: Vec<f64> = (0..50_000)
        .map(|_| unbiased_estimate(EstimateKind::A, &m, &pi, &[1.0], RolloutCap::default(), &mut a, &mut b).unwrap())
        .map(|e| e.utility)
        .collect();
    let (mean, se) = mean_and_se(&draws);
    assert!(mean.abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn rollout_length_is_geometric() {
    let m = instance(4, 3, 2);
    let pi = TabularPolicy::uniform(3, 2);
    let mut stream = RngStream::new(4, 0);
    let n = 20_000;
    let total: usize =
        (0..n).map(|_| rollout_geometric(&m, &pi, Anchor::State(0), RolloutCap::default(), &mut stream).length).sum();
    let mean = total as f64 / n as f64;
    assert!((mean - 10.0).abs() <= 0.5, "mean length {mean}");
}

#[test]
fn visitation_pairs_follow_the_visitation_measure() {
    let m = instance(6, 3, 2);
    let pi = random_policy(&mut rng(6), 3, 2);
    let nu0 = vec![1.0 / 6.0; 6];
    let exact = cmdp_solver::state_action_visitation(&m, &pi, &nu0).unwrap().d;
    let mut counts = [0usize; 6];
    let mut stream = RngStream::new(6, 0);
    let n = 50_000;
    for _ in 0..n {
        let (s, a, _) = sample_visitation_pair(&m, &pi, &nu0, RolloutCap::default(), &mut stream);
        counts[s * 2 + a] += 1;
    }
    for (c, p) in counts.iter().zip(&exact) {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((*c as f64 / n as f64 - p).abs() <= 4.0 * se);
    }
}

#[test]
fn sgd_on_pure_noise_stays_near_zero() {
    let mut r = rng(8);
    let config = SgdConfig { k: 5000, radius: 10.0, sigma_f: 0.5 };
    let w = projected_sgd(3, &config, |_| {
        let x: Vec<f64> = normals(&mut r, 3, 1.0);
        (x, r.sample::<f64, _>(StandardNormal))
    })
    .unwrap();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm <= 0.05, "‖w‖ = {norm}");
}

#[test]
fn exact_mode_reproduces_the_fa_trajectory() {
    let m = instance(11, 4, 3);
    let feats = FeatureMap::new(4, 3, 5, normals(&mut rng(11), 60, 1.0)).unwrap();
    let xi = solve_lp(&m).unwrap().slater_slack;
    let t = 40;
    let mut fa_config = default_fa_config(&m, t, xi, TargetKind::QValue);
    fa_config.radius = Some(1e6);
    let fa = run_fa(&m, LogLinearParams::zeros(feats.clone()), t, &fa_config, None).unwrap();

    let mut config = SampleConfig::new(t, SgdConfig { k: 1, radius: 1e6, sigma_f: 1.0 });
    config.exact = true;
    config.eta1 = Some(fa_config.eta1);
    config.eta2 = Some(fa_config.eta2);
    config.lambda_cap = Some(fa_config.lambda_cap);
    config.nu0 = Some(fa_config.nu0.clone());
    let sample = sample_npgpd(&m, SampleMode::LogLinear, LogLinearParams::zeros(feats), &config, 0).unwrap();
    for (a, b) in fa.log.records.iter().zip(&sample.log.records) {
        assert!((a.v_r - b.v_r).abs() < 1e-8);
        assert!((a.v_g - b.v_g).abs() < 1e-8);
        assert!((a.lambda - b.lambda).abs() < 1e-8);
    }
}

#[test]
fn horizon_scaling_is_the_only_difference_between_modes() {
    let m = instance(12, 3, 2);
    let params = LogLinearParams::zeros(FeatureMap::one_hot(3, 2));
    let run = |eta1: f64, divide: bool| {
        let mut config = SampleConfig::new(30, SgdConfig { k: 1, radius: 1e6, sigma_f: 1.0 });
        config.exact = true;
        config.eta1 = Some(eta1);
        config.divide_by_horizon = Some(divide);
        sample_npgpd(&m, SampleMode::General, params.clone(), &config, 0).unwrap()
    };
    let divided = run(0.05, true);
    let scaled = run(0.05 / (1.0 - m.discount()), false);
    for (a, b) in divided.log.records.iter().zip(&scaled.log.records) {
        assert!((a.v_r - b.v_r).abs() < 1e-10);
        assert!((a.lambda - b.lambda).abs() < 1e-10);
    }
    assert!((divided.log.records[5].v_r - run(0.05, false).log.records[5].v_r).abs() > 1e-6);
}

#[test]
fn sampled_runs_are_reproducible_and_keep_lambda_in_range() {
    let m = instance(13, 3, 2);
    let params = LogLinearParams::zeros(FeatureMap::one_hot(3, 2));
    let xi = solve_lp(&m).unwrap().slater_slack;
    let mut config = SampleConfig::new(20, SgdConfig { k: 50, radius: 50.0, sigma_f: 0.05 });
    config.eta2 = Some(2.0);
    let a = sample_npgpd(&m, SampleMode::LogLinear, params.clone(), &config, 5).unwrap();
    let b = sample_npgpd(&m, SampleMode::LogLinear, params.clone(), &config, 5).unwrap();
    let c = sample_npgpd(&m, SampleMode::LogLinear, params, &config, 6).unwrap();
    assert_eq!(a.log.to_csv_string(), b.log.to_csv_string());
    assert_eq!(a.rollout_steps, b.rollout_steps);
    assert_ne!(a.log.to_csv_string(), c.log.to_csv_string());
    let cap = 2.0 / ((1.0 - m.discount()) * xi);
    assert!(a.log.records.iter().all(|r| (0.0..=cap).contains(&r.lambda)));
}

#[test]
fn capped_rollouts_estimate_the_truncated_value() {
    let m = instance(14, 3, 2);
    let pi = random_policy(&mut rng(14), 3, 2);
    let cap = RolloutCap(Some(5));
    let truncated = power_series_values(&m, &pi, m.reward(), 5);
    let full = evaluate_policy(&m, &pi).unwrap().v(Channel::Reward).to_vec();
    assert!((full[0] - truncated[0]).abs() <= cap.bias_bound(m.discount()));
    let mut stream = RngStream::derive(14, 0, 0, Purpose::Other);
    let draws: Vec<f64> =
        (0..50_000).map(|_| rollout_geometric(&m, &pi, Anchor::State(0), cap, &mut stream).reward).collect();
    let (mean, se) = mean_and_se(&draws);
    assert!((mean - truncated[0]).abs() <= 3.0 * se, "{mean} vs {}", truncated[0]);
}
