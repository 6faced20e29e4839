//! Model-based primal-dual solvers: NPG-PD with softmax policies, projected
//! PG-PD with the direct parametrisation, the feasibility-switching primal
//! baseline, and projected dual subgradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{evaluate_policy, value_iteration_scalarized, Channel, Cmdp, TabularPolicy, ValueBundle};
use crate::occupancy::{occupancy_to_policy, policy_to_occupancy, solve_lp, LpOutcome, LpSolution, OccupancyMeasure};
use crate::policy::{direct_gradient, project_simplex, DirectParams, SmoothPolicy, SoftmaxParams};
use crate::trace::IterateLog;

/// `2 / ((1-γ) ξ)`, the radius of the dual domain Λ.
pub fn dual_cap(discount: f64, xi: f64) -> f64 {
    2.0 / ((1.0 - discount) * xi)
}

/// Projection onto `[0, cap]`.
pub fn project_dual(lambda: f64, cap: f64) -> f64 {
    lambda.clamp(0.0, cap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primal {
    Softmax(SoftmaxParams),
    Direct(DirectParams),
}

impl Primal {
    pub fn policy(&self) -> TabularPolicy {
        match self {
            Primal::Softmax(p) => p.policy(),
            Primal::Direct(p) => p.policy(),
        }
    }
}

/// Iterate `(θ^{(t)}, λ^{(t)})` together with the step sizes and dual domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdState {
    pub primal: Primal,
    pub lambda: f64,
    pub t: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub xi: f64,
    /// Upper end of Λ; `2/((1-γ)ξ)` unless widened.
    pub lambda_cap: f64,
}

impl PdState {
    pub fn new(cmdp: &Cmdp, primal: Primal, eta1: f64, eta2: f64, xi: f64) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(Error::InvalidArgument(format!("Slater slack must be positive, got {xi}")));
        }
        if !(eta1 >= 0.0 && eta2 >= 0.0) {
            return Err(Error::InvalidArgument("step sizes must be non-negative".into()));
        }
        let lambda_cap = dual_cap(cmdp.discount(), xi);
        Ok(Self { primal, lambda: 0.0, t: 0, eta1, eta2, xi, lambda_cap })
    }

    pub fn softmax_zero(cmdp: &Cmdp, eta1: f64, eta2: f64, xi: f64) -> Result<Self> {
        Self::new(cmdp, Primal::Softmax(SoftmaxParams::zeros(cmdp.n_states(), cmdp.n_actions())), eta1, eta2, xi)
    }

    fn dual_update(&self, cmdp: &Cmdp, v_g: f64) -> f64 {
        project_dual(self.lambda - self.eta2 * (v_g - cmdp.offset()), self.lambda_cap)
    }
}

/// Result of one exact NPG-PD step.
#[derive(Debug, Clone)]
pub struct NpgStep {
    pub next: PdState,
    /// `log Z^{(t)}(s)` of the multiplicative-weights normaliser.
    pub log_z: Vec<f64>,
}

/// `log Σ_a π(a|s) exp(c·A(s,a))` for every state, via log-sum-exp.
pub fn log_normalizers(pi: &TabularPolicy, adv: &[f64], scale: f64) -> Vec<f64> {
    let na = pi.n_actions();
    (0..pi.n_states())
        .map(|s| {
            let terms: Vec<(f64, f64)> = pi
                .row(s)
                .iter()
                .zip(&adv[s * na..(s + 1) * na])
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, a)| (p.ln(), scale * a))
                .collect();
            let max = terms.iter().map(|(lp, x)| lp + x).fold(f64::NEG_INFINITY, f64::max);
            max + terms.iter().map(|(lp, x)| (lp + x - max).exp()).sum::<f64>().ln()
        })
        .collect()
}

fn npgpd_update(cmdp: &Cmdp, state: &PdState, params: &SoftmaxParams, vals: &ValueBundle) -> NpgStep {
    let pi = params.policy();
    let adv = vals.lagrangian_adv(state.lambda);
    let scale = state.eta1 / (1.0 - cmdp.discount());
    let mut next = params.clone();
    for (t, a) in next.theta.iter_mut().zip(&adv) {
        *t += scale * a;
    }
    let v_g = vals.value_at(Channel::Utility, cmdp.initial());
    let log_z = log_normalizers(&pi, &adv, scale);
    NpgStep {
        next: PdState {
            primal: Primal::Softmax(next),
            lambda: state.dual_update(cmdp, v_g),
            t: state.t + 1,
            ..state.clone()
        },
        log_z,
    }
}

/// One exact NPG-PD step: `θ += (η₁/(1-γ)) A_L`, `λ ← P_Λ(λ - η₂(V_g(ρ) - b))`.
pub fn npgpd_step(cmdp: &Cmdp, state: &PdState) -> Result<NpgStep> {
    let Primal::Softmax(params) = &state.primal else {
        return Err(Error::InvalidArgument("NPG-PD needs softmax parameters".into()));
    };
    let vals = evaluate_policy(cmdp, &params.policy())?;
    Ok(npgpd_update(cmdp, state, params, &vals))
}

/// Closed-form multiplicative-weights step
/// `π'(a|s) ∝ π(a|s) exp(scale · A(s,a))`.
pub fn mwu_step(pi: &TabularPolicy, adv: &[f64], scale: f64) -> TabularPolicy {
    let na = pi.n_actions();
    let log_z = log_normalizers(pi, adv, scale);
    let probs = (0..pi.n_states() * na)
        .map(|i| {
            let p = pi.as_slice()[i];
            if p == 0.0 {
                0.0
            } else {
                (p.ln() + scale * adv[i] - log_z[i / na]).exp()
            }
        })
        .collect();
    TabularPolicy::from_raw(pi.n_states(), na, probs)
}

fn pgpd_update(cmdp: &Cmdp, state: &PdState, params: &DirectParams, vals: &ValueBundle) -> Result<PdState> {
    let grad = direct_gradient(cmdp, params, state.lambda)?;
    let na = params.n_actions;
    let mut theta = Vec::with_capacity(params.theta.len());
    for s in 0..params.n_states {
        let row: Vec<f64> = (0..na).map(|a| params.theta[s * na + a] + state.eta1 * grad[s * na + a]).collect();
        theta.extend(project_simplex(&row));
    }
    let v_g = vals.value_at(Channel::Utility, cmdp.initial());
    Ok(PdState {
        primal: Primal::Direct(DirectParams { theta, ..params.clone() }),
        lambda: state.dual_update(cmdp, v_g),
        t: state.t + 1,
        ..state.clone()
    })
}

/// One projected PG-PD step under the direct parametrisation.
pub fn pgpd_step(cmdp: &Cmdp, state: &PdState) -> Result<PdState> {
    let Primal::Direct(params) = &state.primal else {
        return Err(Error::InvalidArgument("PG-PD needs direct parameters".into()));
    };
    let vals = evaluate_policy(cmdp, &params.policy())?;
    pgpd_update(cmdp, state, params, &vals)
}

/// Branch taken by the feasibility-switching primal update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimalBranch {
    Reward,
    Utility,
}

/// `θ += η A_r/(1-γ)` when `V_g(ρ) >= b - ε_b`, otherwise `θ += η A_g/(1-γ)`.
pub fn primal_feasibility_step(
    cmdp: &Cmdp,
    theta: &SoftmaxParams,
    eta: f64,
    eps_b: f64,
) -> Result<(SoftmaxParams, PrimalBranch)> {
    if eps_b < 0.0 {
        return Err(Error::InvalidArgument(format!("relaxation must be non-negative, got {eps_b}")));
    }
    let vals = evaluate_policy(cmdp, &theta.policy())?;
    Ok(feasibility_update(cmdp, theta, eta, eps_b, &vals))
}

fn feasibility_update(
    cmdp: &Cmdp,
    theta: &SoftmaxParams,
    eta: f64,
    eps_b: f64,
    vals: &ValueBundle,
) -> (SoftmaxParams, PrimalBranch) {
    let feasible = vals.value_at(Channel::Utility, cmdp.initial()) >= cmdp.offset() - eps_b;
    let (branch, channel) =
        if feasible { (PrimalBranch::Reward, Channel::Reward) } else { (PrimalBranch::Utility, Channel::Utility) };
    let scale = eta / (1.0 - cmdp.discount());
    let mut next = theta.clone();
    for (t, a) in next.theta.iter_mut().zip(vals.adv(channel)) {
        *t += scale * a;
    }
    (next, branch)
}

#[derive(Debug, Clone)]
pub struct DualDescentResult {
    pub lambdas: Vec<f64>,
    /// `V_D^{λ^{(t)}}(ρ)` along the trace.
    pub dual_values: Vec<f64>,
    pub best_dual_value: f64,
    /// Highest-reward feasible maximiser `π_λ` met along the way.
    pub best_feasible: Option<TabularPolicy>,
    pub best_feasible_reward: f64,
}

/// Projected dual subgradient descent `λ ← [λ - η (V_g^{π_λ}(ρ) - b)]₊`,
/// with `π_λ` the scalarised optimum from value iteration.
pub fn dual_descent(cmdp: &Cmdp, eta: f64, iterations: usize, tol: f64) -> Result<DualDescentResult> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("dual step must be positive, got {eta}")));
    }
    let rho = cmdp.initial();
    let mut lambda = 0.0;
    let mut out = DualDescentResult {
        lambdas: Vec::with_capacity(iterations + 1),
        dual_values: Vec::with_capacity(iterations + 1),
        best_dual_value: f64::INFINITY,
        best_feasible: None,
        best_feasible_reward: f64::NEG_INFINITY,
    };
    for _ in 0..=iterations {
        let opt = value_iteration_scalarized(cmdp, lambda, tol)?;
        let vals = evaluate_policy(cmdp, &opt.policy)?;
        let (v_r, v_g) = (vals.value_at(Channel::Reward, rho), vals.value_at(Channel::Utility, rho));
        out.lambdas.push(lambda);
        out.dual_values.push(opt.dual_value);
        out.best_dual_value = out.best_dual_value.min(opt.dual_value);
        if v_g >= cmdp.offset() - 1e-12 && v_r > out.best_feasible_reward {
            out.best_feasible_reward = v_r;
            out.best_feasible = Some(opt.policy.clone());
        }
        lambda = (lambda - eta * (v_g - cmdp.offset())).max(0.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Algorithm {
    NpgPd,
    PgPd,
    PrimalFeasibility { eps_b: f64 },
}

/// Run parameters; unset entries fall back to the theory-backed defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub iterations: usize,
    /// Defaults to `2 log|A|` (NPG-PD, feasibility switching) or 1 (PG-PD).
    pub eta1: Option<f64>,
    /// Defaults to `2(1-γ)/√T`.
    pub eta2: Option<f64>,
    /// Slater slack; solved for when absent.
    pub xi: Option<f64>,
    /// Overrides `2/((1-γ)ξ)`.
    pub lambda_cap: Option<f64>,
    pub initial_theta: Option<Vec<f64>>,
    pub initial_lambda: f64,
    /// Softmax rows are re-centred every this many steps (0 disables).
    pub recenter_every: usize,
    /// Reference optimum for the gap column; solved for when absent.
    pub v_r_star: Option<f64>,
    /// Offset the violation column is measured against; defaults to `b`.
    pub report_offset: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            eta1: None,
            eta2: None,
            xi: None,
            lambda_cap: None,
            initial_theta: None,
            initial_lambda: 0.0,
            recenter_every: 100,
            v_r_star: None,
            report_offset: None,
        }
    }
}

impl SolverConfig {
    pub fn with_iterations(iterations: usize) -> Self {
        Self { iterations, ..Self::default() }
    }
}

/// Per-step record of the improvement inequality
/// `ΔV_r(μ) + λ ΔV_g(μ) >= ((1-γ)/η₁) E_μ log Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovementCheck {
    pub t: usize,
    pub lhs_rho: f64,
    pub rhs_rho: f64,
    pub lhs_uniform: f64,
    pub rhs_uniform: f64,
    pub min_log_z: f64,
}

#[derive(Debug, Clone)]
pub struct SolverRun {
    pub log: IterateLog,
    /// Policy whose occupancy is the average of the iterates' occupancies.
    pub mixture: TabularPolicy,
    pub final_state: PdState,
    /// Filled for NPG-PD only.
    pub improvement: Vec<ImprovementCheck>,
    pub oracle: Option<LpSolution>,
}

fn default_eta1(algo: Algorithm, n_actions: usize) -> f64 {
    match algo {
        Algorithm::PgPd => 1.0,
        _ => 2.0 * (n_actions as f64).ln(),
    }
}

/// Initial PG-PD point: the unconstrained greedy optimum, so that
/// `V_r^{θ^{(0)}}(ρ) >= V_r^*(ρ)`, mixed with a little uniform mass.
pub fn pgpd_initial_policy(cmdp: &Cmdp) -> Result<TabularPolicy> {
    Ok(value_iteration_scalarized(cmdp, 0.0, 1e-12)?.policy.mix_uniform(1e-6))
}

/// Runs `T` iterations of the chosen solver, logging exact values and the
/// running averages against the LP optimum.
pub fn run_solver(cmdp: &Cmdp, algo: Algorithm, config: &SolverConfig) -> Result<SolverRun> {
    let t_max = config.iterations;
    if t_max == 0 {
        return Err(Error::InvalidConfig("iterations must be at least 1".into()));
    }
    let oracle = if config.xi.is_none() || config.v_r_star.is_none() {
        let sol = solve_lp(cmdp)?;
        if sol.status == LpOutcome::Infeasible {
            return Err(Error::Infeasible { slack: sol.slater_slack });
        }
        Some(sol)
    } else {
        None
    };
    let xi = config.xi.or(oracle.as_ref().map(|o| o.slater_slack)).expect("oracle solved");
    let v_r_star = config.v_r_star.or(oracle.as_ref().map(|o| o.v_r_star)).expect("oracle solved");
    if !(xi > 0.0) {
        return Err(Error::InvalidConfig(format!("Slater slack must be positive, got {xi}")));
    }
    let gamma = cmdp.discount();
    let eta1 = config.eta1.unwrap_or_else(|| default_eta1(algo, cmdp.n_actions()));
    let eta2 = config.eta2.unwrap_or(2.0 * (1.0 - gamma) / (t_max as f64).sqrt());

    let (ns, na) = (cmdp.n_states(), cmdp.n_actions());
    let primal = match algo {
        Algorithm::NpgPd | Algorithm::PrimalFeasibility { .. } => {
            let theta = config.initial_theta.clone().unwrap_or_else(|| vec![0.0; ns * na]);
            Primal::Softmax(SoftmaxParams::new(ns, na, theta)?)
        }
        Algorithm::PgPd => match &config.initial_theta {
            Some(theta) => Primal::Direct(DirectParams::new(ns, na, theta.clone())?),
            None => Primal::Direct(DirectParams::from_policy(&pgpd_initial_policy(cmdp)?)),
        },
    };
    let mut state = PdState::new(cmdp, primal, eta1, eta2, xi)?;
    if let Some(cap) = config.lambda_cap {
        if !(cap >= 0.0) {
            return Err(Error::InvalidConfig(format!("dual cap must be non-negative, got {cap}")));
        }
        state.lambda_cap = cap;
    }
    if config.initial_lambda < 0.0 {
        return Err(Error::NegativeMultiplier(config.initial_lambda));
    }
    state.lambda = project_dual(config.initial_lambda, state.lambda_cap);

    let rho = cmdp.initial().to_vec();
    let uniform = vec![1.0 / ns as f64; ns];
    let mut log = IterateLog::new(v_r_star, config.report_offset.unwrap_or(cmdp.offset()));
    let mut improvement = Vec::new();
    let mut q_sum = vec![0.0; ns * na];
    let mut pi = state.primal.policy();
    let mut vals = evaluate_policy(cmdp, &pi)?;

    for t in 0..t_max {
        let q = policy_to_occupancy(cmdp, &pi)?;
        q_sum.iter_mut().zip(&q.q).for_each(|(acc, x)| *acc += x);
        let v_r = vals.value_at(Channel::Reward, &rho);
        let v_g = vals.value_at(Channel::Utility, &rho);

        let (mut next, log_z) = match (&state.primal, algo) {
            (Primal::Softmax(p), Algorithm::NpgPd) => {
                let step = npgpd_update(cmdp, &state, p, &vals);
                (step.next, Some(step.log_z))
            }
            (Primal::Softmax(p), Algorithm::PrimalFeasibility { eps_b }) => {
                let (theta, _) = feasibility_update(cmdp, p, eta1, eps_b, &vals);
                (PdState { primal: Primal::Softmax(theta), t: t + 1, ..state.clone() }, None)
            }
            (Primal::Direct(p), Algorithm::PgPd) => (pgpd_update(cmdp, &state, p, &vals)?, None),
            _ => unreachable!("primal representation matches the algorithm"),
        };
        if let Primal::Softmax(p) = &mut next.primal {
            if config.recenter_every > 0 && (t + 1) % config.recenter_every == 0 {
                p.recenter();
            }
        }
        let log_z_min = log_z.as_ref().map_or(f64::NAN, |z| z.iter().copied().fold(f64::INFINITY, f64::min));
        log.push(v_r, v_g, state.lambda, log_z_min, Vec::new());

        let next_pi = next.primal.policy();
        let next_vals = evaluate_policy(cmdp, &next_pi)?;
        if let Some(z) = log_z {
            let delta = |mu: &[f64]| {
                next_vals.value_at(Channel::Reward, mu) - vals.value_at(Channel::Reward, mu)
                    + state.lambda * (next_vals.value_at(Channel::Utility, mu) - vals.value_at(Channel::Utility, mu))
            };
            let scale = (1.0 - gamma) / eta1;
            let mean_log_z = |mu: &[f64]| mu.iter().zip(&z).map(|(m, l)| m * l).sum::<f64>();
            improvement.push(ImprovementCheck {
                t,
                lhs_rho: delta(&rho),
                rhs_rho: scale * mean_log_z(&rho),
                lhs_uniform: delta(&uniform),
                rhs_uniform: scale * mean_log_z(&uniform),
                min_log_z: log_z_min,
            });
        }
        state = next;
        pi = next_pi;
        vals = next_vals;
    }

    let inv_t = 1.0 / t_max as f64;
    let avg = OccupancyMeasure { n_states: ns, n_actions: na, q: q_sum.iter().map(|x| x * inv_t).collect() };
    Ok(SolverRun { log, mixture: occupancy_to_policy(&avg), final_state: state, improvement, oracle })
}

/// A problem with the constraint tightened to `V_g >= b + δ`.
#[derive(Debug, Clone)]
pub struct ConservativeProblem {
    pub cmdp: Cmdp,
    pub delta: f64,
    pub original_offset: f64,
    /// `4/((1-γ)ξ)` with ξ the slack of the original problem.
    pub lambda_cap: f64,
    pub xi: f64,
}

impl ConservativeProblem {
    /// Solver settings that use the widened dual domain and score the run
    /// against the original constraint and optimum.
    pub fn configure(&self, mut config: SolverConfig, v_r_star: f64) -> SolverConfig {
        config.xi = Some(self.xi);
        config.lambda_cap = Some(self.lambda_cap);
        config.report_offset = Some(self.original_offset);
        config.v_r_star = Some(v_r_star);
        config
    }
}

/// Tightens the constraint by `δ ∈ [0, ξ/2)`.
pub fn conservative_wrap(cmdp: &Cmdp, delta: f64, xi: f64) -> Result<ConservativeProblem> {
    if !(xi > 0.0) {
        return Err(Error::InvalidArgument(format!("Slater slack must be positive, got {xi}")));
    }
    if !(0.0..xi / 2.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("tightening {delta} must lie in [0, ξ/2) = [0, {})", xi / 2.0)));
    }
    Ok(ConservativeProblem {
        cmdp: cmdp.with_offset(cmdp.offset() + delta),
        delta,
        original_offset: cmdp.offset(),
        lambda_cap: 2.0 * dual_cap(cmdp.discount(), xi),
        xi,
    })
}
