//! Model-free estimation: geometric-horizon rollouts, the unbiased V/Q/A
//! estimators, projected SGD on the compatible regression, and sample-based
//! NPG-PD.
//!
//! The algorithms only touch the model through simulated transitions; exact
//! values are computed alongside purely for logging.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{dual_cap, project_dual};
use crate::fa::{constrained_least_squares, regressors, second_moment, TargetKind};
use crate::linalg::min_eigenvalue;
use crate::model::{evaluate_policy, state_action_visitation, Channel, Cmdp, TabularPolicy};
use crate::occupancy::{solve_lp, LpOutcome};
use crate::policy::SmoothPolicy;
use crate::trace::{Extra, IterateLog};

/// What a derived stream is used for inside one `(t, k)` slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Regression = 0,
    Baseline = 1,
    DualEstimate = 2,
    Other = 3,
}

/// Deterministic random stream: ChaCha8 keyed by `seed`, with the 64-bit
/// stream id selecting an independent keystream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    /// Stream for draw `k` of iteration `t`. Slots are packed as
    /// `t` (24 bits) | `k` (36 bits) | purpose (4 bits).
    pub fn derive(seed: u64, t: usize, k: usize, purpose: Purpose) -> Self {
        let id = ((t as u64 & 0xFF_FFFF) << 40) | ((k as u64 & 0xF_FFFF_FFFF) << 4) | purpose as u64;
        Self::new(seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Index drawn from the (possibly unnormalised) weights `p`.
    pub fn categorical(&mut self, p: &[f64]) -> usize {
        let total: f64 = p.iter().sum();
        let u = self.uniform() * total;
        let mut acc = 0.0;
        for (i, &w) in p.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

/// Where an estimate is anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchor {
    State(usize),
    Pair(usize, usize),
}

/// Undiscounted channel sums along one geometric-horizon path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutEstimate {
    pub reward: f64,
    pub utility: f64,
    /// Number of `(s,a)` pairs whose signals were summed.
    pub length: usize,
    pub anchor: Anchor,
}

impl RolloutEstimate {
    pub fn value(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Reward => self.reward,
            Channel::Utility => self.utility,
        }
    }
}

/// Optional horizon cap. A capped rollout is biased by at most
/// `γ^cap / (1-γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RolloutCap(pub Option<usize>);

impl RolloutCap {
    /// The CI-friendly cap `⌈50/(1-γ)⌉`.
    pub fn ci(discount: f64) -> Self {
        Self(Some((50.0 / (1.0 - discount) - 1e-9).ceil() as usize))
    }

    pub fn bias_bound(&self, discount: f64) -> f64 {
        match self.0 {
            Some(h) => discount.powi(h as i32) / (1.0 - discount),
            None => 0.0,
        }
    }

    fn reached(&self, steps: usize) -> bool {
        self.0.is_some_and(|h| steps >= h)
    }
}

fn rollout_from(cmdp: &Cmdp, pi: &TabularPolicy, s0: usize, a0: usize, cap: RolloutCap, rng: &mut RngStream) -> RolloutEstimate {
    let na = cmdp.n_actions();
    let gamma = cmdp.discount();
    let (mut s, mut a) = (s0, a0);
    let (mut reward, mut utility, mut length) = (0.0, 0.0, 0);
    loop {
        reward += cmdp.reward()[s * na + a];
        utility += cmdp.utility()[s * na + a];
        length += 1;
        if cap.reached(length) || !rng.bernoulli(gamma) {
            break;
        }
        s = rng.categorical(cmdp.next_state_dist(s, a));
        a = rng.categorical(pi.row(s));
    }
    RolloutEstimate { reward, utility, length, anchor: Anchor::Pair(s0, a0) }
}

/// Simulates `π` from `start`, stopping independently after each step with
/// probability `1-γ`, and sums both channels along the way.
pub fn rollout_geometric(
    cmdp: &Cmdp,
    pi: &TabularPolicy,
    start: Anchor,
    cap: RolloutCap,
    rng: &mut RngStream,
) -> RolloutEstimate {
    match start {
        Anchor::Pair(s, a) => rollout_from(cmdp, pi, s, a, cap, rng),
        Anchor::State(s) => {
            let a = rng.categorical(pi.row(s));
            RolloutEstimate { anchor: Anchor::State(s), ..rollout_from(cmdp, pi, s, a, cap, rng) }
        }
    }
}

/// Draws `(s_h, a_h) ~ ν_{ν0}^π`: start from `ν0` and keep following `π`
/// with probability `γ` per step. Returns the pair and the steps taken.
pub fn sample_visitation_pair(
    cmdp: &Cmdp,
    pi: &TabularPolicy,
    nu0: &[f64],
    cap: RolloutCap,
    rng: &mut RngStream,
) -> (usize, usize, usize) {
    let na = cmdp.n_actions();
    let i = rng.categorical(nu0);
    let (mut s, mut a) = (i / na, i % na);
    let mut steps = 0;
    while !cap.reached(steps) && rng.bernoulli(cmdp.discount()) {
        s = rng.categorical(cmdp.next_state_dist(s, a));
        a = rng.categorical(pi.row(s));
        steps += 1;
    }
    (s, a, steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    V,
    Q,
    A,
}

/// One draw of an unbiased estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub anchor: Anchor,
    /// `V̂(s0)`, `Q̂(s_h,a_h)` or `Â(s_h,a_h)` for the reward channel.
    pub reward: f64,
    pub utility: f64,
    /// Transitions simulated, including the anchor search.
    pub steps: usize,
}

impl Estimate {
    pub fn value(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Reward => self.reward,
            Channel::Utility => self.utility,
        }
    }
}

/// The V-, Q- and A-estimators. `dist` is `ρ` for `V` and `ν0` for `Q`/`A`.
/// The `A` estimator's second rollout uses `baseline_rng`, independent of
/// the first.
pub fn unbiased_estimate(
    kind: EstimateKind,
    cmdp: &Cmdp,
    pi: &TabularPolicy,
    dist: &[f64],
    cap: RolloutCap,
    rng: &mut RngStream,
    baseline_rng: &mut RngStream,
) -> Result<Estimate> {
    let expect = if kind == EstimateKind::V { cmdp.n_states() } else { cmdp.n_pairs() };
    if dist.len() != expect {
        return Err(Error::Shape(format!("sampling distribution needs {expect} entries")));
    }
    Ok(match kind {
        EstimateKind::V => {
            let s = rng.categorical(dist);
            let r = rollout_geometric(cmdp, pi, Anchor::State(s), cap, rng);
            Estimate { anchor: Anchor::State(s), reward: r.reward, utility: r.utility, steps: r.length }
        }
        EstimateKind::Q => {
            let (s, a, search) = sample_visitation_pair(cmdp, pi, dist, cap, rng);
            let q = rollout_from(cmdp, pi, s, a, cap, rng);
            Estimate { anchor: Anchor::Pair(s, a), reward: q.reward, utility: q.utility, steps: search + q.length }
        }
        EstimateKind::A => {
            let (s, a, search) = sample_visitation_pair(cmdp, pi, dist, cap, rng);
            let q = rollout_from(cmdp, pi, s, a, cap, rng);
            let v = rollout_geometric(cmdp, pi, Anchor::State(s), cap, baseline_rng);
            Estimate {
                anchor: Anchor::Pair(s, a),
                reward: q.reward - v.reward,
                utility: q.utility - v.utility,
                steps: search + q.length + v.length,
            }
        }
    })
}

/// Projected SGD settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    /// Number of SGD steps `K`.
    pub k: usize,
    /// Projection radius `W`.
    pub radius: f64,
    /// Strong-convexity modulus `σ_F`; the step is `α_k = 2/(σ_F (k+1))`.
    pub sigma_f: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("SGD needs K >= 1".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidConfig(format!("SGD radius must be positive, got {}", self.radius)));
        }
        if !(self.sigma_f > 0.0) {
            return Err(Error::InvalidConfig(format!("σ_F must be positive, got {}", self.sigma_f)));
        }
        Ok(())
    }

    pub fn step(&self, k: usize) -> f64 {
        2.0 / (self.sigma_f * (k + 1) as f64)
    }

    /// Default radius `2 / ((1-γ) √σ_F)`.
    pub fn default_radius(discount: f64, sigma_f: f64) -> f64 {
        2.0 / ((1.0 - discount) * sigma_f.sqrt())
    }
}

/// Euclidean projection onto the ball `‖w‖ <= radius`.
pub fn project_ball(w: &mut [f64], radius: f64) {
    let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > radius {
        let s = radius / n;
        w.iter_mut().for_each(|x| *x *= s);
    }
}

/// Running `k`-weighted average `ŵ = (2/(K(K+1))) Σ_{k=1}^{K} k w_k`.
#[derive(Debug, Clone)]
struct WeightedAverage {
    sum: Vec<f64>,
    weight: f64,
}

impl WeightedAverage {
    fn new(dim: usize) -> Self {
        Self { sum: vec![0.0; dim], weight: 0.0 }
    }

    fn add(&mut self, w: &[f64], weight: f64) {
        self.sum.iter_mut().zip(w).for_each(|(s, x)| *s += weight * x);
        self.weight += weight;
    }

    fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.weight).collect()
    }
}

/// One SGD update on `(y - wᵀx)²`: `w ← P_W(w - α · 2(wᵀx - y) x)`.
fn sgd_update(w: &mut [f64], x: &[f64], y: f64, alpha: f64, radius: f64) {
    let pred: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
    let c = alpha * 2.0 * (pred - y);
    w.iter_mut().zip(x).for_each(|(wi, xi)| *wi -= c * xi);
    project_ball(w, radius);
}

/// Generic projected SGD on `E[(y - wᵀx)²]` starting from `w_0 = 0`; the
/// sampler returns `(x_k, y_k)` for step `k`. Returns the weighted average.
pub fn projected_sgd<F>(dim: usize, config: &SgdConfig, mut sampler: F) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> (Vec<f64>, f64),
{
    config.validate()?;
    let mut w = vec![0.0; dim];
    let mut avg = WeightedAverage::new(dim);
    for k in 0..config.k {
        let (x, y) = sampler(k);
        sgd_update(&mut w, &x, y, config.step(k), config.radius);
        avg.add(&w, (k + 1) as f64);
    }
    Ok(avg.mean())
}

/// Output of the two-channel regression on shared samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdOutput {
    pub w_r: Vec<f64>,
    pub w_g: Vec<f64>,
    pub steps: usize,
}

/// Projected SGD on the compatible regression for both channels, fed by
/// the A-estimator (score regressors) or the Q-estimator (feature
/// regressors). Draw `k` of iteration `t` uses streams derived from
/// `(seed, t, k)`.
pub fn sgd_compatible<P: SmoothPolicy>(
    cmdp: &Cmdp,
    params: &P,
    nu0: &[f64],
    kind: TargetKind,
    config: &SgdConfig,
    cap: RolloutCap,
    seed: u64,
    t: usize,
) -> Result<SgdOutput> {
    config.validate()?;
    let pi = params.policy();
    let x_all = regressors(params, &pi, kind)?;
    let na = cmdp.n_actions();
    let est_kind = match kind {
        TargetKind::Advantage => EstimateKind::A,
        TargetKind::QValue => EstimateKind::Q,
    };
    let dim = params.dim();
    let (mut w_r, mut w_g) = (vec![0.0; dim], vec![0.0; dim]);
    let (mut avg_r, mut avg_g) = (WeightedAverage::new(dim), WeightedAverage::new(dim));
    let mut steps = 0;
    for k in 0..config.k {
        let mut rng = RngStream::derive(seed, t, k, Purpose::Regression);
        let mut base = RngStream::derive(seed, t, k, Purpose::Baseline);
        let est = unbiased_estimate(est_kind, cmdp, &pi, nu0, cap, &mut rng, &mut base)?;
        steps += est.steps;
        let Anchor::Pair(s, a) = est.anchor else { unreachable!("Q and A estimates anchor on pairs") };
        let x = &x_all[s * na + a];
        let alpha = config.step(k);
        sgd_update(&mut w_r, x, est.reward, alpha, config.radius);
        sgd_update(&mut w_g, x, est.utility, alpha, config.radius);
        avg_r.add(&w_r, (k + 1) as f64);
        avg_g.add(&w_g, (k + 1) as f64);
    }
    Ok(SgdOutput { w_r: avg_r.mean(), w_g: avg_g.mean(), steps })
}

/// `λ_min(E_{ν^{(0)}}[x xᵀ])` at the given parameters, the usual setup
/// value for `σ_F`. Zero for classes whose regressors are rank deficient
/// (for example tabular softmax scores).
pub fn estimate_sigma_f<P: SmoothPolicy>(cmdp: &Cmdp, params: &P, nu0: &[f64], kind: TargetKind) -> Result<f64> {
    let pi = params.policy();
    let nu = state_action_visitation(cmdp, &pi, nu0)?.d;
    let x = regressors(params, &pi, kind)?;
    Ok(min_eigenvalue(&second_moment(&x, &nu, params.dim())).max(0.0))
}

/// Which sample-based algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Score regressors on advantage estimates; primal step `η₁ ŵ`.
    General,
    /// Feature regressors on Q estimates; primal step `(η₁/(1-γ)) ŵ`.
    LogLinear,
}

impl SampleMode {
    pub fn target_kind(self) -> TargetKind {
        match self {
            SampleMode::General => TargetKind::Advantage,
            SampleMode::LogLinear => TargetKind::QValue,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub iterations: usize,
    pub sgd: SgdConfig,
    /// Defaults to `1/√T`.
    pub eta1: Option<f64>,
    /// Defaults to `1/√T`.
    pub eta2: Option<f64>,
    /// Slater slack for the dual cap; solved for when absent.
    pub xi: Option<f64>,
    pub lambda_cap: Option<f64>,
    /// Exploratory `ν0`; uniform over pairs when absent.
    pub nu0: Option<Vec<f64>>,
    /// Divide the primal step by `1-γ`. Defaults to the mode's own rule.
    pub divide_by_horizon: Option<bool>,
    /// Replace SGD with the exact regression and `V̂_g` with `V_g`.
    pub exact: bool,
    pub cap: RolloutCap,
}

impl SampleConfig {
    pub fn new(iterations: usize, sgd: SgdConfig) -> Self {
        Self {
            iterations,
            sgd,
            eta1: None,
            eta2: None,
            xi: None,
            lambda_cap: None,
            nu0: None,
            divide_by_horizon: None,
            exact: false,
            cap: RolloutCap::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleRun<P> {
    pub log: IterateLog,
    pub params: P,
    pub lambda: f64,
    pub rollout_steps: usize,
}

/// Sample-based NPG-PD. The update uses only simulated draws (unless
/// `exact` is set); each logged row carries the exact values of the
/// iterate for evaluation, plus `K,rollout_steps_total,seed`.
pub fn sample_npgpd<P: SmoothPolicy>(
    cmdp: &Cmdp,
    mode: SampleMode,
    init: P,
    config: &SampleConfig,
    seed: u64,
) -> Result<SampleRun<P>> {
    let t_max = config.iterations;
    if t_max == 0 {
        return Err(Error::InvalidConfig("iterations must be at least 1".into()));
    }
    config.sgd.validate()?;
    let oracle = solve_lp(cmdp)?;
    if oracle.status == LpOutcome::Infeasible {
        return Err(Error::Infeasible { slack: oracle.slater_slack });
    }
    let xi = config.xi.unwrap_or(oracle.slater_slack);
    if !(xi > 0.0) {
        return Err(Error::InvalidConfig(format!("Slater slack must be positive, got {xi}")));
    }
    let gamma = cmdp.discount();
    let cap = config.lambda_cap.unwrap_or_else(|| dual_cap(gamma, xi));
    let root_t = (t_max as f64).sqrt();
    let eta1 = config.eta1.unwrap_or(1.0 / root_t);
    let eta2 = config.eta2.unwrap_or(1.0 / root_t);
    let divide = config.divide_by_horizon.unwrap_or(mode == SampleMode::LogLinear);
    let primal_scale = if divide { eta1 / (1.0 - gamma) } else { eta1 };
    let uniform_nu0;
    let nu0: &[f64] = match &config.nu0 {
        Some(v) => v,
        None => {
            uniform_nu0 = vec![1.0 / cmdp.n_pairs() as f64; cmdp.n_pairs()];
            &uniform_nu0
        }
    };
    let kind = mode.target_kind();
    let rho = cmdp.initial();

    let mut log = IterateLog::new(oracle.v_r_star, cmdp.offset()).with_extra_columns(&["K", "rollout_steps_total", "seed"]);
    let (mut params, mut lambda) = (init, 0.0);
    let mut total_steps = 0usize;
    for t in 0..t_max {
        let pi = params.policy();
        let vals = evaluate_policy(cmdp, &pi)?;
        let (w_r, w_g, v_g_hat) = if config.exact {
            let nu = state_action_visitation(cmdp, &pi, nu0)?.d;
            let x = regressors(&params, &pi, kind)?;
            let fit = |channel| {
                let y = match kind {
                    TargetKind::Advantage => vals.adv(channel),
                    TargetKind::QValue => vals.q(channel),
                };
                constrained_least_squares(&x, y, &nu, params.dim(), config.sgd.radius)
            };
            (fit(Channel::Reward), fit(Channel::Utility), vals.value_at(Channel::Utility, rho))
        } else {
            let out = sgd_compatible(cmdp, &params, nu0, kind, &config.sgd, config.cap, seed, t)?;
            total_steps += out.steps;
            let mut rng = RngStream::derive(seed, t, 0, Purpose::DualEstimate);
            let mut unused = RngStream::derive(seed, t, 0, Purpose::Other);
            let v = unbiased_estimate(EstimateKind::V, cmdp, &pi, rho, config.cap, &mut rng, &mut unused)?;
            total_steps += v.steps;
            (out.w_r, out.w_g, v.utility)
        };
        log.push(
            vals.value_at(Channel::Reward, rho),
            vals.value_at(Channel::Utility, rho),
            lambda,
            f64::NAN,
            vec![Extra::Int(config.sgd.k as u64), Extra::Int(total_steps as u64), Extra::Int(seed)],
        );
        let dir: Vec<f64> = w_r.iter().zip(&w_g).map(|(r, g)| r + lambda * g).collect();
        params = params.shifted(&dir, primal_scale);
        lambda = project_dual(lambda - eta2 * (v_g_hat - cmdp.offset()), cap);
    }
    Ok(SampleRun { log, params, lambda, rollout_steps: total_steps })
}
