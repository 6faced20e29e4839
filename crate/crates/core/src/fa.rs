//! NPG-PD with function approximation: the primal direction comes from a
//! norm-constrained compatible regression instead of exact advantages.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{dual_cap, project_dual};
use crate::linalg::{generalized_max_ratio, pinv_symmetric, PINV_RTOL};
use crate::model::{evaluate_policy, state_action_visitation, visitation, Channel, Cmdp, TabularPolicy, ValueBundle};
use crate::occupancy::{solve_lp, LpOutcome};
use crate::policy::SmoothPolicy;
use crate::trace::{Extra, IterateLog};

/// Regression target and the regressor paired with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Fit `A_⋄(s,a)` with `wᵀ ∇log π(a|s)`.
    Advantage,
    /// Fit `Q_⋄(s,a)` with `wᵀ φ_{s,a}` (log-linear only).
    QValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibleRegression {
    pub w: Vec<f64>,
    /// `W`; infinite when unconstrained.
    pub domain_radius: f64,
    pub target_kind: TargetKind,
    pub channel: Channel,
    /// `E_{(s,a)~ν}[(target - wᵀx)²]` at the returned `w`.
    pub residual: f64,
}

/// Regressors `x_{s,a}` for every pair, row-major.
pub fn regressors<P: SmoothPolicy>(params: &P, pi: &TabularPolicy, kind: TargetKind) -> Result<Vec<Vec<f64>>> {
    let (ns, na) = (params.n_states(), params.n_actions());
    match kind {
        TargetKind::Advantage => {
            let mut out = Vec::with_capacity(ns * na);
            for s in 0..ns {
                for a in 0..na {
                    let mut g = vec![0.0; params.dim()];
                    params.score_into(pi, s, a, &mut g);
                    out.push(g);
                }
            }
            Ok(out)
        }
        TargetKind::QValue => {
            let f = params
                .features()
                .ok_or_else(|| Error::InvalidArgument("Q-value regression needs a feature map".into()))?;
            Ok((0..ns * na).map(|i| f.phi(i / na, i % na).to_vec()).collect())
        }
    }
}

fn targets(vals: &ValueBundle, channel: Channel, kind: TargetKind) -> &[f64] {
    match kind {
        TargetKind::Advantage => vals.adv(channel),
        TargetKind::QValue => vals.q(channel),
    }
}

/// `E_ν[(y - wᵀx)²]`.
pub fn weighted_objective(x: &[Vec<f64>], y: &[f64], nu: &[f64], w: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(nu)
        .filter(|(_, &n)| n != 0.0)
        .map(|((xi, yi), n)| {
            let pred: f64 = xi.iter().zip(w).map(|(a, b)| a * b).sum();
            n * (yi - pred).powi(2)
        })
        .sum()
}

/// `Σ_ν = E_ν[x xᵀ]`.
pub fn second_moment(x: &[Vec<f64>], nu: &[f64], dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for (xi, &n) in x.iter().zip(nu) {
        if n == 0.0 {
            continue;
        }
        let v = DVector::from_column_slice(xi);
        m.ger(n, &v, &v, 1.0);
    }
    m
}

/// `argmin_{‖w‖ <= W} E_ν[(y - wᵀx)²]` for precomputed regressors.
///
/// The unconstrained minimum-norm solution is used when it fits in the
/// ball; otherwise the ridge multiplier of the active norm constraint is
/// found by bisection.
pub fn constrained_least_squares(x: &[Vec<f64>], y: &[f64], nu: &[f64], dim: usize, radius: f64) -> Vec<f64> {
    if radius <= 0.0 || dim == 0 {
        return vec![0.0; dim];
    }
    let sigma = second_moment(x, nu, dim);
    let mut c = DVector::zeros(dim);
    for ((xi, yi), &n) in x.iter().zip(y).zip(nu) {
        for (ck, xk) in c.iter_mut().zip(xi) {
            *ck += n * yi * xk;
        }
    }
    let free = pinv_symmetric(&sigma, PINV_RTOL) * &c;
    if free.norm() <= radius {
        return free.iter().copied().collect();
    }
    let eig = sigma.clone().symmetric_eigen();
    // Coordinates of c in the eigenbasis make every ridge solve O(d²).
    let ct = eig.eigenvectors.transpose() * &c;
    let norm_at = |mu: f64| -> f64 {
        ct.iter().zip(eig.eigenvalues.iter()).map(|(ci, l)| (ci / (l.max(0.0) + mu)).powi(2)).sum::<f64>().sqrt()
    };
    let mut lo = 0.0;
    let mut hi = (sigma.trace().abs() + c.norm() / radius).max(1e-300);
    while norm_at(hi) > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scaled = DVector::from_iterator(
        dim,
        ct.iter().zip(eig.eigenvalues.iter()).map(|(ci, l)| ci / (l.max(0.0) + hi)),
    );
    let w = &eig.eigenvectors * scaled;
    // Guard the ball against last-bit rounding.
    let n = w.norm();
    let w = if n > radius { w * (radius / n) } else { w };
    w.iter().copied().collect()
}

/// Exact compatible regression of one channel's advantage (or Q) function
/// under the state-action distribution `nu`.
pub fn compatible_least_squares<P: SmoothPolicy>(
    cmdp: &Cmdp,
    params: &P,
    channel: Channel,
    nu: &[f64],
    radius: f64,
    kind: TargetKind,
) -> Result<CompatibleRegression> {
    if nu.len() != cmdp.n_pairs() {
        return Err(Error::Shape(format!("ν needs {} entries", cmdp.n_pairs())));
    }
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be non-negative, got {radius}")));
    }
    let pi = params.policy();
    let vals = evaluate_policy(cmdp, &pi)?;
    let x = regressors(params, &pi, kind)?;
    let y = targets(&vals, channel, kind);
    let w = constrained_least_squares(&x, y, nu, params.dim(), radius);
    let residual = weighted_objective(&x, y, nu, &w);
    Ok(CompatibleRegression { w, domain_radius: radius, target_kind: kind, channel, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaConfig {
    pub eta1: f64,
    pub eta2: f64,
    /// Regression radius `W`; `None` leaves `w` unconstrained.
    pub radius: Option<f64>,
    pub lambda_cap: f64,
    /// Exploratory state-action distribution `ν0`.
    pub nu0: Vec<f64>,
    pub target_kind: TargetKind,
}

#[derive(Debug, Clone)]
pub struct FaStep<P> {
    pub params: P,
    pub lambda: f64,
    pub w_r: CompatibleRegression,
    pub w_g: CompatibleRegression,
    pub values: ValueBundle,
}

/// `θ += (η₁/(1-γ)) (w_r + λ w_g)` with both regressions on the on-policy
/// `ν^{(t)} = ν_{ν0}^{π^{(t)}}`, then the projected dual step.
pub fn npgpd_fa_step<P: SmoothPolicy>(cmdp: &Cmdp, params: &P, lambda: f64, config: &FaConfig) -> Result<FaStep<P>> {
    if lambda < 0.0 {
        return Err(Error::NegativeMultiplier(lambda));
    }
    let pi = params.policy();
    let vals = evaluate_policy(cmdp, &pi)?;
    let nu = state_action_visitation(cmdp, &pi, &config.nu0)?.d;
    let x = regressors(params, &pi, config.target_kind)?;
    let radius = config.radius.unwrap_or(f64::INFINITY);
    let fit = |channel| {
        let y = targets(&vals, channel, config.target_kind);
        let w = constrained_least_squares(&x, y, &nu, params.dim(), radius);
        let residual = weighted_objective(&x, y, &nu, &w);
        CompatibleRegression { w, domain_radius: radius, target_kind: config.target_kind, channel, residual }
    };
    let (w_r, w_g) = (fit(Channel::Reward), fit(Channel::Utility));
    let dir: Vec<f64> = w_r.w.iter().zip(&w_g.w).map(|(r, g)| r + lambda * g).collect();
    let next = params.shifted(&dir, config.eta1 / (1.0 - cmdp.discount()));
    let v_g = vals.value_at(Channel::Utility, cmdp.initial());
    let next_lambda = project_dual(lambda - config.eta2 * (v_g - cmdp.offset()), config.lambda_cap);
    Ok(FaStep { params: next, lambda: next_lambda, w_r, w_g, values: vals })
}

/// Comparator distribution `ν*` used by the transfer error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuStarKind {
    /// `d_ρ^{π*}(s) · Unif_A(a)`.
    UniformAction,
    /// `d_ρ^{π*}(s) π*(a|s)`.
    OnPolicyStar,
}

pub fn nu_star(cmdp: &Cmdp, pi_star: &TabularPolicy, kind: NuStarKind) -> Result<Vec<f64>> {
    let d = visitation(cmdp, pi_star, cmdp.initial())?.d;
    let na = cmdp.n_actions();
    Ok((0..cmdp.n_pairs())
        .map(|i| match kind {
            NuStarKind::UniformAction => d[i / na] / na as f64,
            NuStarKind::OnPolicyStar => d[i / na] * pi_star.prob(i / na, i % na),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaDiagnostics {
    /// Excess on-policy objective of the supplied approximate `w`.
    pub est_error: f64,
    /// Objective of the on-policy minimiser re-evaluated under `ν*`.
    pub transfer_error: f64,
    /// On-policy objective of the minimiser.
    pub approx_error: f64,
    /// `sup_w wᵀΣ_{ν*}w / wᵀΣ_{ν0}w`; infinite when `ν0` misses a direction.
    pub kappa: f64,
    pub nu_star_kind: NuStarKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsInput<'a> {
    pub nu0: &'a [f64],
    pub pi_star: &'a TabularPolicy,
    pub nu_star_kind: NuStarKind,
    pub radius: f64,
    pub target_kind: TargetKind,
    /// Approximate regression weights to score; `None` means exact.
    pub approx_w: Option<&'a [f64]>,
}

/// Estimation error, transfer error and relative condition number of one
/// channel's regression at the current parameters.
pub fn fa_diagnostics<P: SmoothPolicy>(
    cmdp: &Cmdp,
    params: &P,
    channel: Channel,
    input: &DiagnosticsInput<'_>,
) -> Result<FaDiagnostics> {
    let pi = params.policy();
    let vals = evaluate_policy(cmdp, &pi)?;
    let nu_t = state_action_visitation(cmdp, &pi, input.nu0)?.d;
    let nu_s = nu_star(cmdp, input.pi_star, input.nu_star_kind)?;
    let x = regressors(params, &pi, input.target_kind)?;
    let y = targets(&vals, channel, input.target_kind);
    let w_star = constrained_least_squares(&x, y, &nu_t, params.dim(), input.radius);
    let approx_error = weighted_objective(&x, y, &nu_t, &w_star);
    let est_error = match input.approx_w {
        Some(w) => (weighted_objective(&x, y, &nu_t, w) - approx_error).max(0.0),
        None => 0.0,
    };
    let transfer_error = weighted_objective(&x, y, &nu_s, &w_star);
    let kappa = generalized_max_ratio(
        &second_moment(&x, &nu_s, params.dim()),
        &second_moment(&x, input.nu0, params.dim()),
        1e-12,
    );
    Ok(FaDiagnostics { est_error, transfer_error, approx_error, kappa, nu_star_kind: input.nu_star_kind })
}

/// `max_{(s,a)} ν*(s,a)/ν0(s,a)`, infinite when `ν0` misses mass of `ν*`.
pub fn density_ratio_sup(nu_star: &[f64], nu0: &[f64]) -> f64 {
    nu_star.iter().zip(nu0).fold(0.0, |acc, (&a, &b)| {
        if a == 0.0 {
            acc
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            acc.max(a / b)
        }
    })
}

#[derive(Debug, Clone)]
pub struct FaRun<P> {
    pub log: IterateLog,
    pub params: P,
    pub lambda: f64,
}

/// Runs `T` function-approximation NPG-PD steps. With `diagnostics` set,
/// every row gains `eps_bias_r,eps_bias_g,kappa` columns.
pub fn run_fa<P: SmoothPolicy>(
    cmdp: &Cmdp,
    init: P,
    iterations: usize,
    config: &FaConfig,
    diagnostics: Option<NuStarKind>,
) -> Result<FaRun<P>> {
    if iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be at least 1".into()));
    }
    let oracle = solve_lp(cmdp)?;
    if oracle.status == LpOutcome::Infeasible {
        return Err(Error::Infeasible { slack: oracle.slater_slack });
    }
    let pi_star = oracle.optimal_policy().expect("optimal status carries q*");
    let mut log = IterateLog::new(oracle.v_r_star, cmdp.offset());
    if diagnostics.is_some() {
        log = log.with_extra_columns(&["eps_bias_r", "eps_bias_g", "kappa"]);
    }
    let rho = cmdp.initial();
    let (mut params, mut lambda) = (init, 0.0);
    for _ in 0..iterations {
        let step = npgpd_fa_step(cmdp, &params, lambda, config)?;
        let extra = match diagnostics {
            Some(kind) => {
                let input = DiagnosticsInput {
                    nu0: &config.nu0,
                    pi_star: &pi_star,
                    nu_star_kind: kind,
                    radius: config.radius.unwrap_or(f64::INFINITY),
                    target_kind: config.target_kind,
                    approx_w: None,
                };
                let dr = fa_diagnostics(cmdp, &params, Channel::Reward, &input)?;
                let dg = fa_diagnostics(cmdp, &params, Channel::Utility, &input)?;
                vec![Extra::Float(dr.transfer_error), Extra::Float(dg.transfer_error), Extra::Float(dr.kappa)]
            }
            None => Vec::new(),
        };
        log.push(
            step.values.value_at(Channel::Reward, rho),
            step.values.value_at(Channel::Utility, rho),
            lambda,
            f64::NAN,
            extra,
        );
        params = step.params;
        lambda = step.lambda;
    }
    Ok(FaRun { log, params, lambda })
}

/// Default FA settings: `η₁ = 2 log|A|`, `η₂ = 2(1-γ)/√T`, uniform `ν0`, the
/// dual cap from the oracle's slack, unconstrained regression.
pub fn default_fa_config(cmdp: &Cmdp, iterations: usize, xi: f64, kind: TargetKind) -> FaConfig {
    let gamma = cmdp.discount();
    FaConfig {
        eta1: 2.0 * (cmdp.n_actions() as f64).ln(),
        eta2: 2.0 * (1.0 - gamma) / (iterations.max(1) as f64).sqrt(),
        radius: None,
        lambda_cap: dual_cap(gamma, xi),
        nu0: vec![1.0 / cmdp.n_pairs() as f64; cmdp.n_pairs()],
        target_kind: kind,
    }
}
