//! Dense two-phase tableau simplex with Bland's pivoting rule.
//!
//! Solves `max cᵀx  s.t.  A_eq x = b_eq,  A_ineq x <= b_ineq,  x >= 0` and
//! reports the optimal multipliers of every constraint row. Intended for the
//! small LPs of the occupancy-measure oracle, not for large sparse problems.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const FEAS_EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    /// Primal solution (original variables only). Empty unless optimal.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers of the equality rows (free sign).
    pub duals_eq: Vec<f64>,
    /// Multipliers of the inequality rows (non-negative at optimality).
    pub duals_ineq: Vec<f64>,
    pub pivots: usize,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.rows[row][col];
        let inv = 1.0 / p;
        self.rows[row].iter_mut().for_each(|x| *x *= inv);
        self.rhs[row] *= inv;
        let prow = self.rows[row].clone();
        let prhs = self.rhs[row];
        for i in 0..self.rows.len() {
            if i == row {
                continue;
            }
            let f = self.rows[i][col];
            if f == 0.0 {
                continue;
            }
            for (x, y) in self.rows[i].iter_mut().zip(&prow) {
                *x -= f * y;
            }
            self.rows[i][col] = 0.0;
            self.rhs[i] -= f * prhs;
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// `c_j - c_Bᵀ B^{-1} A_j` for every column.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, row) in self.rows.iter().enumerate() {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for (dj, a) in d.iter_mut().zip(row) {
                *dj -= cb * a;
            }
        }
        d
    }

    /// Primal simplex on `cost` restricted to columns where `allowed` holds.
    /// Returns `false` if the objective is unbounded.
    fn optimise(&mut self, cost: &[f64], allowed: &dyn Fn(usize) -> bool) -> Result<bool> {
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::Lp("not converging (pivot limit reached)"));
            }
            let d = self.reduced_costs(cost);
            // Bland: lowest-index improving column.
            let Some(col) = (0..d.len()).find(|&j| allowed(j) && d[j] > PIVOT_EPS) else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[col];
                if a <= PIVOT_EPS {
                    continue;
                }
                let ratio = self.rhs[i].max(0.0) / a;
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                        if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            match best {
                None => return Ok(false),
                Some((row, _)) => self.pivot(row, col),
            }
        }
    }
}

/// Solves `max cᵀx` over `A_eq x = b_eq`, `A_ineq x <= b_ineq`, `x >= 0`.
pub fn simplex_solve(
    c: &[f64],
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
    a_ineq: &[Vec<f64>],
    b_ineq: &[f64],
) -> Result<LpResult> {
    let n = c.len();
    if a_eq.len() != b_eq.len() || a_ineq.len() != b_ineq.len() {
        return Err(Error::Shape("constraint rows and right-hand sides disagree".into()));
    }
    if a_eq.iter().chain(a_ineq).any(|row| row.len() != n) {
        return Err(Error::Shape(format!("constraint rows must have {n} columns")));
    }
    let (m_eq, m_in) = (a_eq.len(), a_ineq.len());
    let m = m_eq + m_in;
    let slack0 = n;
    let art0 = n + m_in;
    let width = n + m_in + m;

    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    let mut sign = Vec::with_capacity(m);
    for (i, (row, &b)) in a_eq.iter().zip(b_eq).chain(a_ineq.iter().zip(b_ineq)).enumerate() {
        let mut t = vec![0.0; width];
        t[..n].copy_from_slice(row);
        if i >= m_eq {
            t[slack0 + i - m_eq] = 1.0;
        }
        let s = if b < 0.0 { -1.0 } else { 1.0 };
        if s < 0.0 {
            t.iter_mut().for_each(|x| *x = -*x);
        }
        t[art0 + i] = 1.0;
        rows.push(t);
        rhs.push(s * b);
        sign.push(s);
    }
    let mut tab = Tableau { rows, rhs, basis: (art0..art0 + m).collect(), pivots: 0 };

    // Phase 1: drive the artificials to zero.
    let mut phase1 = vec![0.0; width];
    phase1[art0..].iter_mut().for_each(|x| *x = -1.0);
    tab.optimise(&phase1, &|_| true)?;
    let infeas: f64 = tab.basis.iter().zip(&tab.rhs).filter(|(&j, _)| j >= art0).map(|(_, &v)| v).sum();
    let scale = 1.0 + tab.rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    if infeas > FEAS_EPS * scale {
        return Ok(LpResult {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective: f64::NAN,
            duals_eq: Vec::new(),
            duals_ineq: Vec::new(),
            pivots: tab.pivots,
        });
    }
    // Pivot zero-level artificials out of the basis where possible; rows
    // where that fails are redundant and keep their artificial at zero.
    for i in 0..m {
        if tab.basis[i] >= art0 {
            if let Some(col) = (0..art0).find(|&j| tab.rows[i][j].abs() > 1e-9) {
                tab.pivot(i, col);
            }
        }
    }

    // Phase 2.
    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(c);
    let bounded = tab.optimise(&cost, &|j| j < art0)?;
    if !bounded {
        return Ok(LpResult {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective: f64::INFINITY,
            duals_eq: Vec::new(),
            duals_ineq: Vec::new(),
            pivots: tab.pivots,
        });
    }

    let mut x = vec![0.0; n];
    for (i, &j) in tab.basis.iter().enumerate() {
        if j < n {
            x[j] = tab.rhs[i].max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    // y = c_Bᵀ B^{-1}; the artificial columns hold B^{-1} of the sign-adjusted rows.
    let d = tab.reduced_costs(&cost);
    let y: Vec<f64> = (0..m).map(|i| -d[art0 + i] * sign[i]).collect();
    Ok(LpResult {
        status: LpStatus::Optimal,
        x,
        objective,
        duals_eq: y[..m_eq].to_vec(),
        duals_ineq: y[m_eq..].to_vec(),
        pivots: tab.pivots,
    })
}
