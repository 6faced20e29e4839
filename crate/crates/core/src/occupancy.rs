//! Occupancy-measure linear programming: the exact ground truth every solver
//! in this crate is measured against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, evaluate_policy, Channel, Cmdp, TabularPolicy};
use crate::simplex::{simplex_solve, LpStatus};

/// States with less total occupancy than this get a uniform action row.
const ZERO_MASS: f64 = 1e-12;
/// Slack below `-INFEASIBILITY_MARGIN` means no policy meets the constraint.
const INFEASIBILITY_MARGIN: f64 = 1e-8;

/// Unnormalised discounted state-action visit counts `q(s,a)`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    pub n_states: usize,
    pub n_actions: usize,
    pub q: Vec<f64>,
}

impl OccupancyMeasure {
    /// `F_⋄(q) = ⟨q, ⋄⟩`.
    pub fn value(&self, cmdp: &Cmdp, channel: Channel) -> f64 {
        dot(&self.q, cmdp.signal(channel))
    }

    /// Largest violation of `Σ_a (I - γ P_aᵀ) q_a = ρ`.
    pub fn flow_residual(&self, cmdp: &Cmdp) -> f64 {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut lhs = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let q = self.q[s * na + a];
                lhs[s] += q;
                for (sp, p) in cmdp.next_state_dist(s, a).iter().enumerate() {
                    lhs[sp] -= cmdp.discount() * p * q;
                }
            }
        }
        lhs.iter().zip(cmdp.initial()).map(|(l, r)| (l - r).abs()).fold(0.0, f64::max)
    }

    /// Convex combination `Σ_i w_i q_i`.
    pub fn mixture(measures: &[OccupancyMeasure], weights: &[f64]) -> Result<Self> {
        let first = measures.first().ok_or_else(|| Error::InvalidArgument("empty mixture".into()))?;
        if measures.len() != weights.len() {
            return Err(Error::Shape("one weight per measure".into()));
        }
        let mut q = vec![0.0; first.q.len()];
        for (m, &w) in measures.iter().zip(weights) {
            for (acc, x) in q.iter_mut().zip(&m.q) {
                *acc += w * x;
            }
        }
        Ok(Self { n_states: first.n_states, n_actions: first.n_actions, q })
    }
}

/// `q(s,a) = Σ_t γ^t P(s_t=s, a_t=a | π, s_0~ρ)`.
pub fn policy_to_occupancy(cmdp: &Cmdp, pi: &TabularPolicy) -> Result<OccupancyMeasure> {
    cmdp.check_policy(pi)?;
    let x = cmdp.state_occupancy(pi, cmdp.initial())?;
    let (ns, na) = (cmdp.n_states(), cmdp.n_actions());
    let q = (0..ns * na).map(|i| x[i / na] * pi.prob(i / na, i % na)).collect();
    Ok(OccupancyMeasure { n_states: ns, n_actions: na, q })
}

/// `π(a|s) = q(s,a) / Σ_a' q(s,a')`, uniform where the state carries no mass.
pub fn occupancy_to_policy(q: &OccupancyMeasure) -> TabularPolicy {
    let (ns, na) = (q.n_states, q.n_actions);
    let mut probs = vec![0.0; ns * na];
    for s in 0..ns {
        let row = &q.q[s * na..(s + 1) * na];
        let mass: f64 = row.iter().map(|x| x.max(0.0)).sum();
        for a in 0..na {
            probs[s * na + a] = if mass < ZERO_MASS { 1.0 / na as f64 } else { row[a].max(0.0) / mass };
        }
    }
    TabularPolicy::from_raw(ns, na, probs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpOutcome {
    Optimal,
    Infeasible,
}

/// Optimum of the constrained problem together with its dual certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpOutcome,
    /// Optimal occupancy measure; `None` when infeasible.
    pub q_star: Option<OccupancyMeasure>,
    pub v_r_star: f64,
    pub lambda_star: f64,
    /// `ξ = max_π V_g^π(ρ) - b`.
    pub slater_slack: f64,
    pub slater_policy: TabularPolicy,
    /// `V_r` of the Slater policy.
    pub slater_reward: f64,
}

impl LpSolution {
    /// Optimal policy recovered from `q_star`.
    pub fn optimal_policy(&self) -> Option<TabularPolicy> {
        self.q_star.as_ref().map(occupancy_to_policy)
    }
}

/// Rows `Σ_a (I - γ P_aᵀ) q_a = ρ` of the occupancy polytope.
fn flow_constraints(cmdp: &Cmdp) -> Vec<Vec<f64>> {
    let (ns, na) = (cmdp.n_states(), cmdp.n_actions());
    let mut rows = vec![vec![0.0; ns * na]; ns];
    for s in 0..ns {
        for a in 0..na {
            let col = s * na + a;
            rows[s][col] += 1.0;
            for (sp, p) in cmdp.next_state_dist(s, a).iter().enumerate() {
                rows[sp][col] -= cmdp.discount() * p;
            }
        }
    }
    rows
}

/// Solves `max ⟨q, r⟩` over the occupancy polytope subject to `⟨q, g⟩ >= b`,
/// and the auxiliary max-slack LP `max ⟨q, g⟩` that yields ξ and a Slater policy.
pub fn solve_lp(cmdp: &Cmdp) -> Result<LpSolution> {
    let rows = flow_constraints(cmdp);
    let rho = cmdp.initial();

    let slack_lp = simplex_solve(cmdp.utility(), &rows, rho, &[], &[])?;
    if slack_lp.status != LpStatus::Optimal {
        return Err(Error::Lp("max-utility problem did not reach optimality"));
    }
    let slater_q = OccupancyMeasure { n_states: cmdp.n_states(), n_actions: cmdp.n_actions(), q: slack_lp.x };
    let slater_policy = occupancy_to_policy(&slater_q);
    let slater_slack = slack_lp.objective - cmdp.offset();
    let slater_reward = evaluate_policy(cmdp, &slater_policy)?.value_at(Channel::Reward, rho);

    if slater_slack < -INFEASIBILITY_MARGIN {
        return Ok(LpSolution {
            status: LpOutcome::Infeasible,
            q_star: None,
            v_r_star: f64::NAN,
            lambda_star: f64::NAN,
            slater_slack,
            slater_policy,
            slater_reward,
        });
    }

    let neg_g: Vec<f64> = cmdp.utility().iter().map(|g| -g).collect();
    let main = simplex_solve(cmdp.reward(), &rows, rho, &[neg_g], &[-cmdp.offset()])?;
    match main.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Ok(LpSolution {
                status: LpOutcome::Infeasible,
                q_star: None,
                v_r_star: f64::NAN,
                lambda_star: f64::NAN,
                slater_slack,
                slater_policy,
                slater_reward,
            })
        }
        LpStatus::Unbounded => return Err(Error::Lp("unbounded (occupancy polytope must be bounded)")),
    }
    let q_star = OccupancyMeasure { n_states: cmdp.n_states(), n_actions: cmdp.n_actions(), q: main.x };
    // Complementary slackness: an inactive constraint has a zero multiplier.
    let active = (q_star.value(cmdp, Channel::Utility) - cmdp.offset()).abs() <= 1e-8;
    let lambda_star = if active { main.duals_ineq[0].max(0.0) } else { 0.0 };
    Ok(LpSolution {
        status: LpOutcome::Optimal,
        v_r_star: main.objective,
        q_star: Some(q_star),
        lambda_star,
        slater_slack,
        slater_policy,
        slater_reward,
    })
}
