//! Policy parametrisations and their exact first-order quantities.
//!
//! Softmax and log-linear policies share the [`SmoothPolicy`] interface, so the
//! Fisher matrix, the policy gradient and the compatible regressions are
//! written once against the score function `∇_θ log π_θ(a|s)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv_symmetric, PINV_RTOL};
use crate::model::{evaluate_policy, visitation, Channel, Cmdp, TabularPolicy};

/// A differentiable policy class `θ ↦ π_θ` over a finite model.
pub trait SmoothPolicy: Clone {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Number of parameters.
    fn dim(&self) -> usize;
    fn theta(&self) -> &[f64];
    fn theta_mut(&mut self) -> &mut [f64];

    /// Action logits `ℓ(s, ·)` with `π(a|s) ∝ exp ℓ(s,a)`.
    fn logits(&self, s: usize) -> Vec<f64>;

    /// Writes `∇_θ log π_θ(a|s)` into `out`, given the induced policy `pi`.
    fn score_into(&self, pi: &TabularPolicy, s: usize, a: usize, out: &mut [f64]);

    /// Linear features `φ_{s,a}`, when the class has them.
    fn features(&self) -> Option<&FeatureMap> {
        None
    }

    fn policy(&self) -> TabularPolicy {
        let (ns, na) = (self.n_states(), self.n_actions());
        let mut probs = Vec::with_capacity(ns * na);
        for s in 0..ns {
            probs.extend(softmax_row(&self.logits(s)));
        }
        TabularPolicy::from_raw(ns, na, probs)
    }

    fn score(&self, s: usize, a: usize) -> Vec<f64> {
        let pi = self.policy();
        let mut out = vec![0.0; self.dim()];
        self.score_into(&pi, s, a, &mut out);
        out
    }

    /// Same class with parameters `θ + step·dir`.
    fn shifted(&self, dir: &[f64], step: f64) -> Self {
        let mut next = self.clone();
        for (t, d) in next.theta_mut().iter_mut().zip(dir) {
            *t += step * d;
        }
        next
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    // The max entry contributes exp(0) = 1, so `total >= 1`; a second pass
    // only guards against accumulated rounding.
    let total: f64 = out.iter().sum();
    if (total - 1.0).abs() > 1e-15 {
        out.iter_mut().for_each(|p| *p /= total);
    }
    out
}

/// Tabular softmax parameters `θ_{s,a}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub theta: Vec<f64>,
}

impl SoftmaxParams {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, theta: vec![0.0; n_states * n_actions] }
    }

    pub fn new(n_states: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != n_states * n_actions {
            return Err(Error::Shape(format!("softmax needs {} parameters", n_states * n_actions)));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("non-finite softmax parameter".into()));
        }
        Ok(Self { n_states, n_actions, theta })
    }

    /// Subtracts each state's mean logit; leaves the policy unchanged.
    pub fn recenter(&mut self) {
        let na = self.n_actions;
        for row in self.theta.chunks_mut(na) {
            let mean = row.iter().sum::<f64>() / na as f64;
            row.iter_mut().for_each(|t| *t -= mean);
        }
    }
}

impl SmoothPolicy for SoftmaxParams {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn logits(&self, s: usize) -> Vec<f64> {
        self.theta[s * self.n_actions..(s + 1) * self.n_actions].to_vec()
    }

    fn score_into(&self, pi: &TabularPolicy, s: usize, a: usize, out: &mut [f64]) {
        let na = self.n_actions;
        out.iter_mut().for_each(|x| *x = 0.0);
        for (b, p) in pi.row(s).iter().enumerate() {
            out[s * na + b] = -p;
        }
        out[s * na + a] += 1.0;
    }
}

/// Dense feature vectors `φ_{s,a} ∈ R^d` with a norm bound `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureDoc", into = "FeatureDoc")]
pub struct FeatureMap {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    bound: f64,
    /// Row-major `[s][a][i]`.
    phi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDoc {
    pub d: usize,
    #[serde(rename = "B")]
    pub b: f64,
    pub phi: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<FeatureDoc> for FeatureMap {
    type Error = Error;

    fn try_from(doc: FeatureDoc) -> Result<Self> {
        let ns = doc.phi.len();
        let na = doc.phi.first().map_or(0, Vec::len);
        if doc.phi.iter().any(|r| r.len() != na || r.iter().any(|v| v.len() != doc.d)) {
            return Err(Error::Shape("feature table is ragged".into()));
        }
        let phi = doc.phi.into_iter().flatten().flatten().collect();
        FeatureMap::with_bound(ns, na, doc.d, phi, doc.b)
    }
}

impl From<FeatureMap> for FeatureDoc {
    fn from(f: FeatureMap) -> Self {
        let phi = (0..f.n_states)
            .map(|s| (0..f.n_actions).map(|a| f.phi(s, a).to_vec()).collect())
            .collect();
        FeatureDoc { d: f.dim, b: f.bound, phi }
    }
}

impl FeatureMap {
    /// Builds the map with `B` set to the largest feature norm.
    pub fn new(n_states: usize, n_actions: usize, dim: usize, phi: Vec<f64>) -> Result<Self> {
        if phi.len() != n_states * n_actions * dim {
            return Err(Error::Shape(format!("expected {} feature entries", n_states * n_actions * dim)));
        }
        let bound = phi.chunks(dim.max(1)).map(norm).fold(0.0, f64::max);
        Self::with_bound(n_states, n_actions, dim, phi, bound)
    }

    pub fn with_bound(n_states: usize, n_actions: usize, dim: usize, phi: Vec<f64>, bound: f64) -> Result<Self> {
        if phi.len() != n_states * n_actions * dim {
            return Err(Error::Shape(format!("expected {} feature entries", n_states * n_actions * dim)));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature".into()));
        }
        let map = Self { n_states, n_actions, dim, bound, phi };
        for s in 0..n_states {
            for a in 0..n_actions {
                let n = norm(map.phi(s, a));
                if n > bound + 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "feature norm {n} at ({s},{a}) exceeds bound {bound}"
                    )));
                }
            }
        }
        Ok(map)
    }

    /// Indicator features over `(s, a)`: `d = |S||A|`, `B = 1`.
    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        let sa = n_states * n_actions;
        let mut phi = vec![0.0; sa * sa];
        for i in 0..sa {
            phi[i * sa + i] = 1.0;
        }
        Self { n_states, n_actions, dim: sa, bound: 1.0, phi }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.dim;
        &self.phi[start..start + self.dim]
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Log-linear policy `π(a|s) ∝ exp(θᵀ φ_{s,a})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearParams {
    pub theta: Vec<f64>,
    pub features: FeatureMap,
}

impl LogLinearParams {
    pub fn new(theta: Vec<f64>, features: FeatureMap) -> Result<Self> {
        if theta.len() != features.dim {
            return Err(Error::Shape(format!(
                "θ has {} entries but features have dimension {}",
                theta.len(),
                features.dim
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("non-finite log-linear parameter".into()));
        }
        Ok(Self { theta, features })
    }

    pub fn zeros(features: FeatureMap) -> Self {
        Self { theta: vec![0.0; features.dim], features }
    }
}

impl SmoothPolicy for LogLinearParams {
    fn n_states(&self) -> usize {
        self.features.n_states
    }

    fn n_actions(&self) -> usize {
        self.features.n_actions
    }

    fn dim(&self) -> usize {
        self.features.dim
    }

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn logits(&self, s: usize) -> Vec<f64> {
        (0..self.features.n_actions)
            .map(|a| self.features.phi(s, a).iter().zip(&self.theta).map(|(x, t)| x * t).sum())
            .collect()
    }

    /// `φ_{s,a} - E_{a'~π(·|s)} φ_{s,a'}`.
    fn score_into(&self, pi: &TabularPolicy, s: usize, a: usize, out: &mut [f64]) {
        out.copy_from_slice(self.features.phi(s, a));
        for (b, p) in pi.row(s).iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.features.phi(s, b)) {
                *o -= p * x;
            }
        }
    }

    fn features(&self) -> Option<&FeatureMap> {
        Some(&self.features)
    }
}

/// Direct parametrisation `π(a|s) = θ_{s,a}` with each row in the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub theta: Vec<f64>,
}

impl DirectParams {
    pub fn new(n_states: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        TabularPolicy::new(n_states, n_actions, theta.clone())?.check(1e-12)?;
        Ok(Self { n_states, n_actions, theta })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, theta: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn from_policy(pi: &TabularPolicy) -> Self {
        Self { n_states: pi.n_states(), n_actions: pi.n_actions(), theta: pi.as_slice().to_vec() }
    }

    pub fn policy(&self) -> TabularPolicy {
        TabularPolicy::from_raw(self.n_states, self.n_actions, self.theta.clone())
    }
}

/// Exact `F_ρ(θ) = E_{s~d_ρ^θ} E_{a~π_θ} [score scoreᵀ]`.
pub fn fisher_matrix<P: SmoothPolicy>(cmdp: &Cmdp, params: &P, rho: &[f64]) -> Result<DMatrix<f64>> {
    let pi = params.policy();
    let d = visitation(cmdp, &pi, rho)?.d;
    let weights: Vec<f64> = (0..pi.n_states() * pi.n_actions())
        .map(|i| d[i / pi.n_actions()] * pi.prob(i / pi.n_actions(), i % pi.n_actions()))
        .collect();
    Ok(score_second_moment(params, &pi, &weights))
}

/// `Σ_{(s,a)} w(s,a) · score scoreᵀ`.
pub fn score_second_moment<P: SmoothPolicy>(params: &P, pi: &TabularPolicy, weights: &[f64]) -> DMatrix<f64> {
    let dim = params.dim();
    let na = pi.n_actions();
    let mut f = DMatrix::zeros(dim, dim);
    let mut g = vec![0.0; dim];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        params.score_into(pi, i / na, i % na, &mut g);
        let v = DVector::from_column_slice(&g);
        f.ger(w, &v, &v, 1.0);
    }
    f
}

/// Exact `∇_θ V_L^{θ,λ}(ρ) = (1/(1-γ)) E_{s~d_ρ} E_{a~π} [A_L(s,a) score(s,a)]`.
pub fn policy_gradient<P: SmoothPolicy>(cmdp: &Cmdp, params: &P, lambda: f64) -> Result<Vec<f64>> {
    if lambda < 0.0 {
        return Err(Error::NegativeMultiplier(lambda));
    }
    let pi = params.policy();
    let vals = evaluate_policy(cmdp, &pi)?;
    let d = visitation(cmdp, &pi, cmdp.initial())?.d;
    let adv = vals.lagrangian_adv(lambda);
    let na = pi.n_actions();
    let mut grad = vec![0.0; params.dim()];
    let mut g = vec![0.0; params.dim()];
    for (i, &a_l) in adv.iter().enumerate() {
        let (s, a) = (i / na, i % na);
        let w = d[s] * pi.prob(s, a) * a_l;
        if w == 0.0 {
            continue;
        }
        params.score_into(&pi, s, a, &mut g);
        for (acc, x) in grad.iter_mut().zip(&g) {
            *acc += w * x;
        }
    }
    let scale = 1.0 / (1.0 - cmdp.discount());
    grad.iter_mut().for_each(|x| *x *= scale);
    Ok(grad)
}

/// `F_ρ(θ)† ∇_θ V_L^{θ,λ}(ρ)`.
pub fn natural_gradient<P: SmoothPolicy>(cmdp: &Cmdp, params: &P, lambda: f64) -> Result<Vec<f64>> {
    let f = fisher_matrix(cmdp, params, cmdp.initial())?;
    let grad = DVector::from_vec(policy_gradient(cmdp, params, lambda)?);
    Ok((pinv_symmetric(&f, PINV_RTOL) * grad).iter().copied().collect())
}

/// Partial derivatives of `V_L^{θ,λ}(ρ)` in the direct parametrisation:
/// `(1/(1-γ)) d_ρ(s) Q_L(s,a)`.
pub fn direct_gradient(cmdp: &Cmdp, params: &DirectParams, lambda: f64) -> Result<Vec<f64>> {
    if lambda < 0.0 {
        return Err(Error::NegativeMultiplier(lambda));
    }
    let pi = params.policy();
    let vals = evaluate_policy(cmdp, &pi)?;
    let d = visitation(cmdp, &pi, cmdp.initial())?.d;
    let na = pi.n_actions();
    let scale = 1.0 / (1.0 - cmdp.discount());
    Ok(vals.lagrangian_q(lambda).iter().enumerate().map(|(i, q)| scale * d[i / na] * q).collect())
}

/// `V_r^θ(ρ) + λ (V_g^θ(ρ) - b)` for a smooth class.
pub fn lagrangian_value<P: SmoothPolicy>(cmdp: &Cmdp, params: &P, lambda: f64) -> Result<f64> {
    let vals = evaluate_policy(cmdp, &params.policy())?;
    let rho = cmdp.initial();
    Ok(vals.value_at(Channel::Reward, rho) + lambda * (vals.value_at(Channel::Utility, rho) - cmdp.offset()))
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_logits_are_uniform() {
        let pi = SoftmaxParams::zeros(3, 4).policy();
        assert!(pi.as_slice().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = SoftmaxParams::new(1, 3, vec![0.3, -1.2, 2.0]).unwrap();
        let b = SoftmaxParams::new(1, 3, vec![5.3, 3.8, 7.0]).unwrap();
        assert!(a.policy().max_abs_diff(&b.policy()) < 1e-15);
    }

    #[test]
    fn softmax_log_three() {
        let pi = SoftmaxParams::new(1, 2, vec![0.0, 3f64.ln()]).unwrap().policy();
        assert_abs_diff_eq!(pi.prob(0, 0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(pi.prob(0, 1), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let pi = SoftmaxParams::new(1, 3, vec![1000.0, -1000.0, 999.0]).unwrap().policy();
        assert!(pi.check(1e-12).is_ok());
    }

    #[test]
    fn two_feature_log_linear() {
        let f = FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let pi = LogLinearParams::new(vec![2f64.ln(), 0.0], f).unwrap().policy();
        assert_abs_diff_eq!(pi.prob(0, 0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pi.prob(0, 1), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn one_hot_log_linear_is_softmax() {
        let theta: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        let sm = SoftmaxParams::new(2, 3, theta.clone()).unwrap();
        let ll = LogLinearParams::new(theta, FeatureMap::one_hot(2, 3)).unwrap();
        assert!(sm.policy().max_abs_diff(&ll.policy()) <= 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(LogLinearParams::new(vec![0.0; 3], FeatureMap::one_hot(1, 2)).is_err());
    }

    #[test]
    fn uniform_softmax_score() {
        let p = SoftmaxParams::zeros(2, 2);
        let g = p.score(1, 0);
        assert_eq!(g, vec![0.0, 0.0, 0.5, -0.5]);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let inside = [0.2, 0.3, 0.5];
        let p = project_simplex(&inside);
        for (a, b) in p.iter().zip(&inside) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn feature_bound_is_enforced() {
        assert!(FeatureMap::with_bound(1, 1, 2, vec![1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn feature_json_layout() {
        let f = FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&f).unwrap();
        assert_eq!(v["d"], 2);
        assert_eq!(v["phi"][0][1][1], 1.0);
        let back: FeatureMap = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }
}
