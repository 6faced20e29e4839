//! Finite discounted constrained MDPs and exact policy evaluation.
//!
//! Everything here is a dense linear solve against `I - γ P_π`; state spaces
//! are small enough that LU is both the fastest and the most reproducible
//! option.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which scalar signal of the model a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Reward,
    Utility,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Reward, Channel::Utility];
}

/// A finite constrained MDP: maximise the discounted reward subject to the
/// discounted utility staying above `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CmdpDoc", into = "CmdpDoc")]
pub struct Cmdp {
    n_states: usize,
    n_actions: usize,
    /// Row-major `[s][a][s']`.
    transition: Vec<f64>,
    /// Row-major `[s][a]`.
    reward: Vec<f64>,
    utility: Vec<f64>,
    offset: f64,
    discount: f64,
    initial: Vec<f64>,
}

/// On-disk layout of a [`Cmdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmdpDoc {
    pub n_states: usize,
    pub n_actions: usize,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub b: f64,
    pub gamma: f64,
    pub rho: Vec<f64>,
}

impl TryFrom<CmdpDoc> for Cmdp {
    type Error = Error;

    fn try_from(doc: CmdpDoc) -> Result<Self> {
        let cmdp = Cmdp::from_nested(doc.p, doc.r, doc.g, doc.b, doc.gamma, doc.rho)?;
        if cmdp.n_states != doc.n_states || cmdp.n_actions != doc.n_actions {
            return Err(Error::Shape(format!(
                "declared {}x{} but arrays are {}x{}",
                doc.n_states, doc.n_actions, cmdp.n_states, cmdp.n_actions
            )));
        }
        Ok(cmdp)
    }
}

impl From<Cmdp> for CmdpDoc {
    fn from(m: Cmdp) -> Self {
        let (ns, na) = (m.n_states, m.n_actions);
        let p = (0..ns)
            .map(|s| (0..na).map(|a| m.next_state_dist(s, a).to_vec()).collect())
            .collect();
        let table = |v: &[f64]| (0..ns).map(|s| v[s * na..(s + 1) * na].to_vec()).collect();
        CmdpDoc {
            n_states: ns,
            n_actions: na,
            p,
            r: table(&m.reward),
            g: table(&m.utility),
            b: m.offset,
            gamma: m.discount,
            rho: m.initial,
        }
    }
}

impl Cmdp {
    /// Builds a model from flat row-major arrays. Only shapes, finiteness and
    /// `0 <= γ < 1` are enforced here; use [`Cmdp::validate`] for the rest.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        utility: Vec<f64>,
        offset: f64,
        discount: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Shape("need at least one state and one action".into()));
        }
        let sa = n_states * n_actions;
        let checks = [
            ("P", transition.len(), sa * n_states),
            ("r", reward.len(), sa),
            ("g", utility.len(), sa),
            ("rho", initial.len(), n_states),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Shape(format!("{name} has {got} entries, expected {want}")));
            }
        }
        let all_finite = transition
            .iter()
            .chain(&reward)
            .chain(&utility)
            .chain(&initial)
            .chain([&offset, &discount])
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::Shape("non-finite entry".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidArgument(format!(
                "discount must lie in [0, 1), got {discount}"
            )));
        }
        Ok(Self { n_states, n_actions, transition, reward, utility, offset, discount, initial })
    }

    /// Builds a model from `[s][a][s']`, `[s][a]` nested tables.
    pub fn from_nested(
        p: Vec<Vec<Vec<f64>>>,
        r: Vec<Vec<f64>>,
        g: Vec<Vec<f64>>,
        offset: f64,
        discount: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let ns = p.len();
        let na = p.first().map_or(0, Vec::len);
        for (s, rows) in p.iter().enumerate() {
            if rows.len() != na || rows.iter().any(|row| row.len() != ns) {
                return Err(Error::Shape(format!("P[{s}] is ragged")));
            }
        }
        for (name, t) in [("r", &r), ("g", &g)] {
            if t.len() != ns || t.iter().any(|row| row.len() != na) {
                return Err(Error::Shape(format!("{name} is not {ns}x{na}")));
            }
        }
        let flat2 = |t: Vec<Vec<f64>>| t.into_iter().flatten().collect::<Vec<_>>();
        let transition = p.into_iter().flatten().flatten().collect();
        Self::new(ns, na, transition, flat2(r), flat2(g), offset, discount, initial)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn utility(&self) -> &[f64] {
        &self.utility
    }

    pub fn signal(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Reward => &self.reward,
            Channel::Utility => &self.utility,
        }
    }

    /// `P(· | s, a)`.
    pub fn next_state_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Copy of the model with a different constraint offset.
    pub fn with_offset(&self, offset: f64) -> Self {
        Self { offset, ..self.clone() }
    }

    /// Copy of the model with a different initial distribution.
    pub fn with_initial(&self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.n_states {
            return Err(Error::Shape("initial distribution has wrong length".into()));
        }
        Ok(Self { initial, ..self.clone() })
    }

    /// Every violated model invariant, with its location.
    pub fn validate(&self) -> Vec<Violation> {
        const TOL: f64 = 1e-12;
        let mut out = Vec::new();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.next_state_dist(s, a);
                for (next, &p) in row.iter().enumerate() {
                    if p < 0.0 {
                        out.push(Violation::NegativeTransition { state: s, action: a, next });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > TOL {
                    out.push(Violation::TransitionRowSum { state: s, action: a, sum });
                }
                let i = s * self.n_actions + a;
                for (channel, v) in [(Channel::Reward, self.reward[i]), (Channel::Utility, self.utility[i])] {
                    if !(0.0..=1.0).contains(&v) {
                        out.push(Violation::SignalRange { channel, state: s, action: a, value: v });
                    }
                }
            }
        }
        for (state, &p) in self.initial.iter().enumerate() {
            if p < 0.0 {
                out.push(Violation::NegativeInitial { state });
            }
        }
        let sum: f64 = self.initial.iter().sum();
        if (sum - 1.0).abs() > TOL {
            out.push(Violation::InitialSum { sum });
        }
        let upper = 1.0 / (1.0 - self.discount);
        if !(self.offset > 0.0 && self.offset <= upper) {
            out.push(Violation::OffsetRange { offset: self.offset, upper });
        }
        out
    }

    pub(crate) fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(Error::Shape(format!(
                "policy is {}x{}, model is {}x{}",
                pi.n_states, pi.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    fn check_state_dist(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.n_states {
            return Err(Error::Shape(format!("state distribution has {} entries", mu.len())));
        }
        Ok(())
    }

    /// `P_π(s, s') = Σ_a π(a|s) P(s'|s,a)`.
    pub fn policy_transition(&self, pi: &TabularPolicy) -> DMatrix<f64> {
        let ns = self.n_states;
        let mut m = DMatrix::zeros(ns, ns);
        for s in 0..ns {
            for a in 0..self.n_actions {
                let w = pi.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (sp, &p) in self.next_state_dist(s, a).iter().enumerate() {
                    m[(s, sp)] += w * p;
                }
            }
        }
        m
    }

    /// `I - γ P_π`.
    fn resolvent(&self, pi: &TabularPolicy) -> DMatrix<f64> {
        let ns = self.n_states;
        let mut m = self.policy_transition(pi);
        m *= -self.discount;
        for s in 0..ns {
            m[(s, s)] += 1.0;
        }
        m
    }

    /// Undiscounted-normalisation state occupancy `x = (I - γ P_πᵀ)^{-1} μ`,
    /// so that `Σ x = 1/(1-γ)`.
    pub(crate) fn state_occupancy(&self, pi: &TabularPolicy, mu: &[f64]) -> Result<Vec<f64>> {
        let lu = self.resolvent(pi).transpose().lu();
        let x = lu
            .solve(&DVector::from_column_slice(mu))
            .ok_or(Error::Singular("state occupancy"))?;
        Ok(x.iter().copied().collect())
    }

    /// One-step expected value `⋄(s,a) + γ Σ P(s'|s,a) v(s')`.
    pub fn backup(&self, channel_values: &[f64], v: &[f64], s: usize, a: usize) -> f64 {
        let next: f64 = self.next_state_dist(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
        channel_values[s * self.n_actions + a] + self.discount * next
    }
}

/// A single model invariant that does not hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TransitionRowSum { state: usize, action: usize, sum: f64 },
    NegativeTransition { state: usize, action: usize, next: usize },
    SignalRange { channel: Channel, state: usize, action: usize, value: f64 },
    InitialSum { sum: f64 },
    NegativeInitial { state: usize },
    OffsetRange { offset: f64, upper: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionRowSum { state, action, sum } => {
                write!(f, "transition row (s={state}, a={action}) sums to {sum}")
            }
            Violation::NegativeTransition { state, action, next } => {
                write!(f, "negative transition probability P({next}|{state},{action})")
            }
            Violation::SignalRange { channel, state, action, value } => {
                write!(f, "{channel:?} at (s={state}, a={action}) is {value}, outside [0,1]")
            }
            Violation::InitialSum { sum } => write!(f, "initial distribution sums to {sum}"),
            Violation::NegativeInitial { state } => {
                write!(f, "initial distribution is negative at state {state}")
            }
            Violation::OffsetRange { offset, upper } => {
                write!(f, "offset out of range: b = {offset} not in (0, {upper}]")
            }
        }
    }
}

/// A stationary stochastic policy stored row-major as `π(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        let pi = Self { n_states, n_actions, probs };
        pi.check(1e-9)?;
        Ok(pi)
    }

    /// Skips the stochasticity check; callers guarantee valid rows.
    pub(crate) fn from_raw(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), n_states * n_actions);
        Self { n_states, n_actions, probs }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let ns = rows.len();
        let na = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != na) {
            return Err(Error::Shape("ragged policy rows".into()));
        }
        Self::new(ns, na, rows.into_iter().flatten().collect())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self::from_raw(n_states, n_actions, vec![1.0 / n_actions as f64; n_states * n_actions])
    }

    /// Deterministic policy picking `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Self::from_raw(actions.len(), n_actions, probs)
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        for s in 0..self.n_states {
            let row = self.row(s);
            if row.iter().any(|&p| !(p >= -tol) || !p.is_finite()) {
                return Err(Error::InvalidPolicy(format!("negative or non-finite entry in state {s}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &TabularPolicy) -> f64 {
        self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// `(1-w)·self + w·uniform`.
    pub fn mix_uniform(&self, w: f64) -> Self {
        let u = 1.0 / self.n_actions as f64;
        let probs = self.probs.iter().map(|p| (1.0 - w) * p + w * u).collect();
        Self::from_raw(self.n_states, self.n_actions, probs)
    }
}

/// Exact values, action values and advantages of one policy for both channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBundle {
    pub v_r: Vec<f64>,
    pub v_g: Vec<f64>,
    pub q_r: Vec<f64>,
    pub q_g: Vec<f64>,
    pub adv_r: Vec<f64>,
    pub adv_g: Vec<f64>,
}

impl ValueBundle {
    pub fn v(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Reward => &self.v_r,
            Channel::Utility => &self.v_g,
        }
    }

    pub fn q(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Reward => &self.q_r,
            Channel::Utility => &self.q_g,
        }
    }

    pub fn adv(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Reward => &self.adv_r,
            Channel::Utility => &self.adv_g,
        }
    }

    /// `E_{s~mu} V(s)`.
    pub fn value_at(&self, channel: Channel, mu: &[f64]) -> f64 {
        dot(self.v(channel), mu)
    }

    /// Lagrangian advantage `A_r + λ A_g`.
    pub fn lagrangian_adv(&self, lambda: f64) -> Vec<f64> {
        self.adv_r.iter().zip(&self.adv_g).map(|(r, g)| r + lambda * g).collect()
    }

    /// Lagrangian action value `Q_r + λ Q_g`.
    pub fn lagrangian_q(&self, lambda: f64) -> Vec<f64> {
        self.q_r.iter().zip(&self.q_g).map(|(r, g)| r + lambda * g).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact `V`, `Q` and `A` for reward and utility under `pi`.
pub fn evaluate_policy(cmdp: &Cmdp, pi: &TabularPolicy) -> Result<ValueBundle> {
    cmdp.check_policy(pi)?;
    let (ns, na) = (cmdp.n_states, cmdp.n_actions);
    let lu = cmdp.resolvent(pi).lu();
    let solve_channel = |sig: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let r_pi = DVector::from_fn(ns, |s, _| dot(pi.row(s), &sig[s * na..(s + 1) * na]));
        let v: Vec<f64> = lu.solve(&r_pi).ok_or(Error::Singular("policy evaluation"))?.iter().copied().collect();
        let mut q = vec![0.0; ns * na];
        let mut adv = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let i = s * na + a;
                q[i] = cmdp.backup(sig, &v, s, a);
                adv[i] = q[i] - v[s];
            }
        }
        Ok((v, q, adv))
    };
    let (v_r, q_r, adv_r) = solve_channel(&cmdp.reward)?;
    let (v_g, q_g, adv_g) = solve_channel(&cmdp.utility)?;
    Ok(ValueBundle { v_r, v_g, q_r, q_g, adv_r, adv_g })
}

/// A discounted visitation distribution together with the measure it started from.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitationDist {
    /// Over states, or over `(s, a)` pairs row-major for the state-action variant.
    pub d: Vec<f64>,
    pub base_measure: Vec<f64>,
}

/// `d_μ^π = (1-γ) μᵀ (I - γ P_π)^{-1}`, renormalised.
pub fn visitation(cmdp: &Cmdp, pi: &TabularPolicy, mu: &[f64]) -> Result<VisitationDist> {
    cmdp.check_policy(pi)?;
    cmdp.check_state_dist(mu)?;
    let x = cmdp.state_occupancy(pi, mu)?;
    Ok(VisitationDist { d: normalise(x), base_measure: mu.to_vec() })
}

/// `ν_{ν0}^π(s,a) = (1-γ) E_{(s0,a0)~ν0} Σ_t γ^t P(s_t=s, a_t=a)`.
pub fn state_action_visitation(cmdp: &Cmdp, pi: &TabularPolicy, nu0: &[f64]) -> Result<VisitationDist> {
    cmdp.check_policy(pi)?;
    let (ns, na) = (cmdp.n_states, cmdp.n_actions);
    if nu0.len() != ns * na {
        return Err(Error::Shape(format!("state-action distribution has {} entries", nu0.len())));
    }
    // State distribution one step after (s0, a0) ~ ν0.
    let mut after_first = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..na {
            let w = nu0[s * na + a];
            if w == 0.0 {
                continue;
            }
            for (sp, p) in cmdp.next_state_dist(s, a).iter().enumerate() {
                after_first[sp] += w * p;
            }
        }
    }
    let later = cmdp.state_occupancy(pi, &after_first)?;
    let gamma = cmdp.discount;
    let mut d = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let i = s * na + a;
            d[i] = (1.0 - gamma) * (nu0[i] + gamma * pi.prob(s, a) * later[s]);
        }
    }
    Ok(VisitationDist { d: normalise(d), base_measure: nu0.to_vec() })
}

fn normalise(mut x: Vec<f64>) -> Vec<f64> {
    let total: f64 = x.iter().sum();
    if total > 0.0 {
        x.iter_mut().for_each(|v| *v /= total);
    }
    x
}

/// `V_r^π(ρ) + λ (V_g^π(ρ) - b)`.
pub fn lagrangian(cmdp: &Cmdp, pi: &TabularPolicy, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::NegativeMultiplier(lambda));
    }
    let vals = evaluate_policy(cmdp, pi)?;
    let rho = cmdp.initial();
    Ok(vals.value_at(Channel::Reward, rho) + lambda * (vals.value_at(Channel::Utility, rho) - cmdp.offset))
}

/// Optimal deterministic policy for the scalarised reward `r + λ g`.
#[derive(Debug, Clone)]
pub struct ScalarizedOptimum {
    pub policy: TabularPolicy,
    /// `V_D^λ(ρ) = max_π V_L^{π,λ}(ρ)`, including the `-λ b` term.
    pub dual_value: f64,
    /// Optimal scalarised state values (without the `-λ b` term).
    pub values: Vec<f64>,
    pub bellman_residual: f64,
}

/// Value iteration on `r + λ g` down to Bellman residual `tol`, followed by
/// policy-iteration polishing so the returned greedy policy is exactly
/// optimal. Greedy ties go to the lowest action index.
pub fn value_iteration_scalarized(cmdp: &Cmdp, lambda: f64, tol: f64) -> Result<ScalarizedOptimum> {
    if lambda < 0.0 {
        return Err(Error::NegativeMultiplier(lambda));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let (ns, na) = (cmdp.n_states, cmdp.n_actions);
    let sig: Vec<f64> = cmdp.reward.iter().zip(&cmdp.utility).map(|(r, g)| r + lambda * g).collect();
    let mut v = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    let max_sweeps = 100_000;
    for _ in 0..max_sweeps {
        let next: Vec<f64> = (0..ns)
            .map(|s| (0..na).map(|a| cmdp.backup(&sig, &v, s, a)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if residual <= tol {
            break;
        }
    }

    let greedy = |v: &[f64]| -> Vec<usize> {
        (0..ns)
            .map(|s| {
                let qs: Vec<f64> = (0..na).map(|a| cmdp.backup(&sig, v, s, a)).collect();
                let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let slack = 1e-12 * (1.0 + best.abs());
                qs.iter().position(|&q| q >= best - slack).unwrap_or(0)
            })
            .collect()
    };

    let mut actions = greedy(&v);
    for _ in 0..1000 {
        let pi = TabularPolicy::deterministic(na, &actions);
        let lu = cmdp.resolvent(&pi).lu();
        let r_pi = DVector::from_fn(ns, |s, _| sig[s * na + actions[s]]);
        v = lu.solve(&r_pi).ok_or(Error::Singular("policy iteration"))?.iter().copied().collect();
        // Switch only on strict improvement so the iteration terminates.
        let mut changed = false;
        let candidates = greedy(&v);
        for s in 0..ns {
            let current = cmdp.backup(&sig, &v, s, actions[s]);
            let candidate = candidates[s];
            let improved = cmdp.backup(&sig, &v, s, candidate);
            if improved > current + 1e-12 * (1.0 + current.abs()) {
                actions[s] = candidate;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    // Prefer the lowest-index action among the exact ties of the final values.
    let final_actions = greedy(&v);
    let policy = TabularPolicy::deterministic(na, &final_actions);
    let dual_value = dot(&v, cmdp.initial()) - lambda * cmdp.offset;
    Ok(ScalarizedOptimum { policy, dual_value, values: v, bellman_residual: residual.min(tol) })
}
