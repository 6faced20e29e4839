//! Benchmark instances, reference convergence bounds and the experiment runner
//! behind the command line.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{conservative_wrap, dual_descent, run_solver, Algorithm, SolverConfig};
use crate::fa::{default_fa_config, run_fa, NuStarKind, TargetKind};
use crate::model::Cmdp;
use crate::occupancy::{solve_lp, LpOutcome, LpSolution};
use crate::policy::{FeatureMap, LogLinearParams, SoftmaxParams};
use crate::sampling::{estimate_sigma_f, sample_npgpd, RolloutCap, SampleConfig, SampleMode, SgdConfig};
use crate::trace::IterateLog;

/// The five-state, two-action example whose feasible set is not convex in
/// the softmax parameters. States `s1..s5` are indices `0..4`.
pub fn figure1_cmdp(gamma: f64, b: f64) -> Result<Cmdp> {
    if !(b > 0.0) {
        return Err(Error::InvalidArgument(format!("offset must be positive, got {b}")));
    }
    let pt = |to: usize| {
        let mut row = vec![0.0; 5];
        row[to] = 1.0;
        row
    };
    let p = vec![
        vec![pt(3), pt(1)],
        vec![pt(4), pt(2)],
        vec![pt(2), pt(2)],
        vec![pt(3), pt(3)],
        vec![pt(4), pt(4)],
    ];
    let r = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]];
    let g = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]];
    Cmdp::from_nested(p, r, g, b, gamma, vec![1.0, 0.0, 0.0, 0.0, 0.0])
}

/// Softmax parameters of the example's segment `ζ θ^{(1)} + (1-ζ) θ^{(2)}`,
/// `θ^{(1)} = (log 1, log x, log x, log 1)` on `(s1,a1),(s1,a2),(s2,a1),(s2,a2)`
/// and `θ^{(2)} = -θ^{(1)}`; the absorbing states get zeros.
pub fn figure1_segment(x: f64, zeta: f64) -> SoftmaxParams {
    let c = (2.0 * zeta - 1.0) * x.ln();
    let mut theta = vec![0.0; 10];
    theta[1] = c;
    theta[2] = c;
    SoftmaxParams { n_states: 5, n_actions: 2, theta }
}

/// `(V_r(s1), V_g(s1))` in closed form for `p = π(a2|s1)`, `q = π(a1|s2)`;
/// valid for any `γ ∈ [0, 1]`.
pub fn figure1_values(p: f64, q: f64, gamma: f64) -> (f64, f64) {
    (gamma * p * q, (1.0 - p) + gamma * p * q)
}

/// Random instance with Dirichlet(1) transition rows, uniform signals and
/// uniform `ρ`; `b = b_quantile · max_π V_g^π(ρ)` so that `ξ > 0`.
pub fn random_cmdp(seed: u64, n_states: usize, n_actions: usize, gamma: f64, b_quantile: f64) -> Result<Cmdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidArgument("sizes must be positive".into()));
    }
    if !(b_quantile > 0.0 && b_quantile < 1.0) {
        return Err(Error::InvalidArgument(format!("b_quantile must lie in (0,1), got {b_quantile}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = row.iter().sum();
        transition.extend(row.iter().map(|x: &f64| x / total));
    }
    let reward: Vec<f64> = (0..n_states * n_actions).map(|_| unit.sample(&mut rng)).collect();
    let utility: Vec<f64> = (0..n_states * n_actions).map(|_| unit.sample(&mut rng)).collect();
    let rho = vec![1.0 / n_states as f64; n_states];
    let draft = Cmdp::new(n_states, n_actions, transition, reward, utility, 1.0, gamma, rho)?;
    let slack = solve_lp(&draft.with_offset(0.0))?.slater_slack;
    Ok(draft.with_offset(b_quantile * slack))
}

/// Reference rates for the averaged gap and violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremBounds {
    /// `7 / ((1-γ)² √T)`.
    pub gap: f64,
    /// `(2/ξ + 4ξ) / ((1-γ)² √T)`.
    pub violation: f64,
}

pub fn theorem_bounds(gamma: f64, xi: f64, iterations: usize) -> Result<TheoremBounds> {
    if !(xi > 0.0) {
        return Err(Error::InvalidArgument(format!("Slater slack must be positive, got {xi}")));
    }
    let denom = (1.0 - gamma).powi(2) * (iterations as f64).sqrt();
    Ok(TheoremBounds { gap: 7.0 / denom, violation: (2.0 / xi + 4.0 * xi) / denom })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSource {
    File { path: PathBuf },
    Random { seed: u64, n_states: usize, n_actions: usize, gamma: f64, b_quantile: f64 },
    Figure1 { gamma: f64, b: f64 },
}

impl InstanceSource {
    pub fn resolve(&self) -> Result<Cmdp> {
        match self {
            InstanceSource::File { path } => {
                let text = std::fs::read_to_string(path)?;
                let cmdp: Cmdp = serde_json::from_str(&text)?;
                Ok(cmdp)
            }
            InstanceSource::Random { seed, n_states, n_actions, gamma, b_quantile } => {
                random_cmdp(*seed, *n_states, *n_actions, *gamma, *b_quantile)
            }
            InstanceSource::Figure1 { gamma, b } => figure1_cmdp(*gamma, *b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    NpgPd,
    PgPd,
    PrimalFeasibility,
    DualDescent,
    Conservative,
    NpgPdFa,
    SampleGeneral,
    SampleLoglinear,
}

/// Experiment description, read from JSON; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub algorithm: AlgorithmKind,
    pub iterations: usize,
    #[serde(default)]
    pub eta1: Option<f64>,
    #[serde(default)]
    pub eta2: Option<f64>,
    /// SGD steps per iteration (sample-based runs).
    #[serde(default)]
    pub k: Option<usize>,
    /// Regression radius `W`.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub sigma_f: Option<f64>,
    /// Constraint tightening for the conservative run.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Relaxation of the feasibility-switching baseline.
    #[serde(default)]
    pub eps_b: Option<f64>,
    /// Feature map file for FA and log-linear runs; one-hot when absent.
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub rollout_cap: bool,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// Write every this many rows to the CSV (the last row always).
    #[serde(default = "one")]
    pub eval_every: usize,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        for (name, v) in [("eta1", self.eta1), ("eta2", self.eta2), ("radius", self.radius), ("sigma_f", self.sigma_f)] {
            if v.is_some_and(|x| !(x > 0.0)) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.k == Some(0) {
            return bad("k must be at least 1");
        }
        if self.eps_b.is_some_and(|x| !(x >= 0.0)) {
            return bad("eps_b must be non-negative");
        }
        match self.algorithm {
            AlgorithmKind::Conservative if self.delta.is_none() => bad("conservative runs need delta"),
            AlgorithmKind::SampleGeneral | AlgorithmKind::SampleLoglinear if self.k.is_none() => {
                bad("sample-based runs need k")
            }
            _ => Ok(()),
        }
    }
}

/// Resolved instance with its oracle solution, shared by all seeds.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cmdp: Cmdp,
    pub oracle: LpSolution,
    pub features: FeatureMap,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let cmdp = config.instance.resolve()?;
    let violations = cmdp.validate();
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::InvalidConfig(format!("invalid instance: {}", text.join("; "))));
    }
    let oracle = solve_lp(&cmdp)?;
    if oracle.status == LpOutcome::Infeasible {
        return Err(Error::Infeasible { slack: oracle.slater_slack });
    }
    let features = match &config.features {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => FeatureMap::one_hot(cmdp.n_states(), cmdp.n_actions()),
    };
    if features.n_states() != cmdp.n_states() || features.n_actions() != cmdp.n_actions() {
        return Err(Error::InvalidConfig("feature map does not match the instance".into()));
    }
    Ok(Prepared { cmdp, oracle, features })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub rows: usize,
    pub final_gap: f64,
    pub final_violation: f64,
    pub gap_bound: f64,
    pub violation_bound: f64,
    pub gap_ok: bool,
    pub violation_ok: bool,
}

#[derive(Debug, Clone)]
pub struct SeedOutput {
    pub log: IterateLog,
    pub summary: SeedSummary,
}

/// Runs one seed of the experiment and scores it against the reference
/// bounds (strict inequalities).
pub fn run_seed(prep: &Prepared, config: &ExperimentConfig, seed: u64) -> Result<SeedOutput> {
    let cmdp = &prep.cmdp;
    let xi = prep.oracle.slater_slack;
    let t = config.iterations;
    let base = SolverConfig {
        iterations: t,
        eta1: config.eta1,
        eta2: config.eta2,
        xi: Some(xi),
        v_r_star: Some(prep.oracle.v_r_star),
        ..SolverConfig::default()
    };
    let log = match config.algorithm {
        AlgorithmKind::NpgPd => run_solver(cmdp, Algorithm::NpgPd, &base)?.log,
        AlgorithmKind::PgPd => run_solver(cmdp, Algorithm::PgPd, &base)?.log,
        AlgorithmKind::PrimalFeasibility => {
            run_solver(cmdp, Algorithm::PrimalFeasibility { eps_b: config.eps_b.unwrap_or(0.0) }, &base)?.log
        }
        AlgorithmKind::Conservative => {
            let wrap = conservative_wrap(cmdp, config.delta.expect("validated"), xi)?;
            let cfg = wrap.configure(base, prep.oracle.v_r_star);
            run_solver(&wrap.cmdp, Algorithm::NpgPd, &cfg)?.log
        }
        AlgorithmKind::DualDescent => {
            let eta = config.eta2.unwrap_or(2.0 * (1.0 - cmdp.discount()) / (t as f64).sqrt());
            let res = dual_descent(cmdp, eta, t - 1, 1e-10)?;
            dual_descent_log(cmdp, &res.lambdas, prep.oracle.v_r_star)?
        }
        AlgorithmKind::NpgPdFa => {
            let mut fa = default_fa_config(cmdp, t, xi, TargetKind::QValue);
            fa.eta1 = config.eta1.unwrap_or(fa.eta1);
            fa.eta2 = config.eta2.unwrap_or(fa.eta2);
            fa.radius = config.radius;
            let init = LogLinearParams::zeros(prep.features.clone());
            run_fa(cmdp, init, t, &fa, Some(NuStarKind::UniformAction))?.log
        }
        AlgorithmKind::SampleGeneral | AlgorithmKind::SampleLoglinear => {
            let mode = if config.algorithm == AlgorithmKind::SampleGeneral {
                SampleMode::General
            } else {
                SampleMode::LogLinear
            };
            let init = LogLinearParams::zeros(prep.features.clone());
            let nu0 = vec![1.0 / cmdp.n_pairs() as f64; cmdp.n_pairs()];
            let sigma_f = match config.sigma_f {
                Some(s) => s,
                None => estimate_sigma_f(cmdp, &init, &nu0, mode.target_kind())?,
            };
            if !(sigma_f > 0.0) {
                return Err(Error::InvalidConfig("σ_F estimate is zero; set sigma_f explicitly".into()));
            }
            let sgd = SgdConfig {
                k: config.k.expect("validated"),
                radius: config.radius.unwrap_or_else(|| SgdConfig::default_radius(cmdp.discount(), sigma_f)),
                sigma_f,
            };
            let mut sc = SampleConfig::new(t, sgd);
            sc.eta1 = config.eta1;
            sc.eta2 = config.eta2;
            sc.xi = Some(xi);
            sc.nu0 = Some(nu0);
            if config.rollout_cap {
                sc.cap = RolloutCap::ci(cmdp.discount());
            }
            sample_npgpd(cmdp, mode, init, &sc, seed)?.log
        }
    };
    let bounds = theorem_bounds(cmdp.discount(), xi, t)?;
    let summary = SeedSummary {
        seed,
        rows: log.len(),
        final_gap: log.final_gap(),
        final_violation: log.final_violation(),
        gap_bound: bounds.gap,
        violation_bound: bounds.violation,
        gap_ok: log.final_gap() < bounds.gap,
        violation_ok: log.final_violation() < bounds.violation,
    };
    Ok(SeedOutput { log, summary })
}

/// Iterate log of the dual method: row `t` holds the values of the
/// scalarised maximiser at `λ^{(t)}`.
fn dual_descent_log(cmdp: &Cmdp, lambdas: &[f64], v_r_star: f64) -> Result<IterateLog> {
    use crate::model::{evaluate_policy, value_iteration_scalarized, Channel};
    let mut log = IterateLog::new(v_r_star, cmdp.offset());
    for &lambda in lambdas {
        let pi = value_iteration_scalarized(cmdp, lambda, 1e-10)?.policy;
        let vals = evaluate_policy(cmdp, &pi)?;
        let rho = cmdp.initial();
        log.push(vals.value_at(Channel::Reward, rho), vals.value_at(Channel::Utility, rho), lambda, f64::NAN, Vec::new());
    }
    Ok(log)
}

/// Keeps every `every`-th row and the last one.
pub fn thin_log(log: &IterateLog, every: usize) -> IterateLog {
    if every <= 1 {
        return log.clone();
    }
    let mut out = log.clone();
    let last = log.len().saturating_sub(1);
    out.records.retain(|r| r.t % every == 0 || r.t == last);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub v_r_star: f64,
    pub lambda_star: f64,
    pub slater_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub algorithm: AlgorithmKind,
    pub iterations: usize,
    pub oracle: Option<OracleSummary>,
    pub seeds: Vec<SeedSummary>,
    pub errors: Vec<String>,
    pub pass: bool,
}

impl ExperimentSummary {
    pub fn new(config: &ExperimentConfig, prep: Option<&Prepared>) -> Self {
        Self {
            algorithm: config.algorithm,
            iterations: config.iterations,
            oracle: prep.map(|p| OracleSummary {
                v_r_star: p.oracle.v_r_star,
                lambda_star: p.oracle.lambda_star,
                slater_slack: p.oracle.slater_slack,
            }),
            seeds: Vec::new(),
            errors: Vec::new(),
            pass: false,
        }
    }

    /// Pass iff no errors and every seed is inside both bounds.
    pub fn finish(&mut self) {
        self.pass = self.errors.is_empty() && !self.seeds.is_empty() && self.seeds.iter().all(|s| s.gap_ok && s.violation_ok);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{evaluate_policy, Channel};
    use crate::policy::SmoothPolicy;
    use approx::assert_abs_diff_eq;

    #[test]
    fn figure1_is_valid() {
        assert!(figure1_cmdp(0.9, 0.8).unwrap().validate().is_empty());
    }

    #[test]
    fn figure1_closed_form_matches_evaluation() {
        let m = figure1_cmdp(0.9, 0.8).unwrap();
        let pi = figure1_segment(3.0, 0.8).policy();
        let vals = evaluate_policy(&m, &pi).unwrap();
        let (vr, vg) = figure1_values(pi.prob(0, 1), pi.prob(1, 0), 0.9);
        assert_abs_diff_eq!(vals.v_r[0], vr, epsilon = 1e-14);
        assert_abs_diff_eq!(vals.v_g[0], vg, epsilon = 1e-14);
        assert_abs_diff_eq!(vals.value_at(Channel::Reward, m.initial()), vr, epsilon = 1e-14);
    }

    #[test]
    fn random_instances_repeat() {
        let a = random_cmdp(5, 4, 3, 0.9, 0.5).unwrap();
        let b = random_cmdp(5, 4, 3, 0.9, 0.5).unwrap();
        assert_eq!(crate::io::to_json_string(&a).unwrap(), crate::io::to_json_string(&b).unwrap());
        let sol = solve_lp(&a).unwrap();
        assert_eq!(sol.status, LpOutcome::Optimal);
        assert!(sol.slater_slack > 0.0);
    }

    #[test]
    fn bound_values() {
        let b = theorem_bounds(0.9, 1.0, 10_000).unwrap();
        assert_abs_diff_eq!(b.gap, 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.violation, 6.0, epsilon = 1e-12);
        let quad = theorem_bounds(0.9, 1.0, 40_000).unwrap();
        assert_abs_diff_eq!(quad.gap, b.gap / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(quad.violation, b.violation / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let text = r#"{"instance":{"kind":"figure1","gamma":0.9,"b":0.8},"algorithm":"npg_pd",
            "iterations":10,"seeds":[1],"output":"out","bogus":1}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }

    #[test]
    fn config_requires_seeds() {
        let text = r#"{"instance":{"kind":"figure1","gamma":0.9,"b":0.8},"algorithm":"npg_pd",
            "iterations":10,"seeds":[],"output":"out"}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::InvalidConfig(_))));
    }
}
