#![allow(dead_code, clippy::needless_range_loop)]

use cmdp_solver::{random_cmdp, Cmdp, SoftmaxParams, SmoothPolicy, TabularPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_policy(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> TabularPolicy {
    SoftmaxParams::new(ns, na, normals(rng, ns * na, 1.5)).unwrap().policy()
}

pub fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn instance(seed: u64, ns: usize, na: usize) -> Cmdp {
    random_cmdp(seed, ns, na, 0.9, 0.5).unwrap()
}

/// `(P_π)` as nested rows, built independently of the library.
pub fn state_transition(m: &Cmdp, pi: &TabularPolicy) -> Vec<Vec<f64>> {
    let (ns, na) = (m.n_states(), m.n_actions());
    let mut p = vec![vec![0.0; ns]; ns];
    for s in 0..ns {
        for a in 0..na {
            for (t, &x) in m.next_state_dist(s, a).iter().enumerate() {
                p[s][t] += pi.prob(s, a) * x;
            }
        }
    }
    p
}

/// Truncated power series `Σ_{t<n} γ^t P_π^t c_π` for one channel.
pub fn power_series_values(m: &Cmdp, pi: &TabularPolicy, signal: &[f64], n: usize) -> Vec<f64> {
    let (ns, na) = (m.n_states(), m.n_actions());
    let p = state_transition(m, pi);
    let c: Vec<f64> = (0..ns).map(|s| (0..na).map(|a| pi.prob(s, a) * signal[s * na + a]).sum()).collect();
    let mut term = c.clone();
    let mut total = c;
    let mut scale = 1.0;
    for _ in 1..n {
        scale *= m.discount();
        term = (0..ns).map(|s| (0..ns).map(|t| p[s][t] * term[t]).sum()).collect();
        for s in 0..ns {
            total[s] += scale * term[s];
        }
    }
    total
}
