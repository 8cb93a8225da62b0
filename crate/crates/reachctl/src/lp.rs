//! Small dense linear programs: a two-phase tableau simplex with Bland's rule.
//!
//! Variables are free (no sign constraints); internally each one is split
//! into a positive and a negative part. Problem sizes here are tiny (tens of
//! rows, a handful of columns), so the dense tableau is the simplest thing
//! that is also easy to audit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tol;

/// minimize `objective · x` subject to `g · x <= h` (ineq) and `e · x = f` (eq).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub ineq: Vec<(Vec<f64>, f64)>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub nvars: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpOutcome {
    pub status: Status,
    pub x_opt: Option<Vec<f64>>,
    pub value: Option<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    Malformed(String),
    #[error("simplex did not terminate within {0} pivots")]
    NumericalFailure(usize),
}

const MAX_PIVOTS: usize = 50_000;
const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-11;

impl LinearProgram {
    pub fn new(nvars: usize) -> Self {
        LinearProgram { objective: vec![0.0; nvars], ineq: Vec::new(), eq: Vec::new(), nvars }
    }

    pub fn minimize(mut self, c: Vec<f64>) -> Self {
        self.objective = c;
        self
    }

    pub fn le(mut self, g: Vec<f64>, h: f64) -> Self {
        self.ineq.push((g, h));
        self
    }

    pub fn eq(mut self, e: Vec<f64>, f: f64) -> Self {
        self.eq.push((e, f));
        self
    }

    fn validate(&self) -> Result<(), LpError> {
        if self.objective.len() != self.nvars {
            return Err(LpError::Malformed(format!(
                "objective has {} entries, expected {}",
                self.objective.len(),
                self.nvars
            )));
        }
        for (k, (g, h)) in self.ineq.iter().enumerate() {
            if g.len() != self.nvars {
                return Err(LpError::Malformed(format!("ineq[{k}] has {} entries, expected {}", g.len(), self.nvars)));
            }
            if !h.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(LpError::Malformed(format!("ineq[{k}] has a non-finite coefficient")));
            }
        }
        for (k, (e, f)) in self.eq.iter().enumerate() {
            if e.len() != self.nvars {
                return Err(LpError::Malformed(format!("eq[{k}] has {} entries, expected {}", e.len(), self.nvars)));
            }
            if !f.is_finite() || e.iter().any(|v| !v.is_finite()) {
                return Err(LpError::Malformed(format!("eq[{k}] has a non-finite coefficient")));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::Malformed("objective has a non-finite coefficient".into()));
        }
        Ok(())
    }

    /// Largest violation of any constraint at `x` (0 when feasible).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (g, h) in &self.ineq {
            worst = worst.max(dot(g, x) - h);
        }
        for (e, f) in &self.eq {
            worst = worst.max((dot(e, x) - f).abs());
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

struct Tableau {
    /// rows × (cols + 1); last column is the right-hand side
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[r][self.cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64], allowed: usize) -> (Vec<f64>, f64) {
        let mut red: Vec<f64> = cost[..allowed].to_vec();
        let mut val = 0.0;
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (j, rj) in red.iter_mut().enumerate() {
                    *rj -= cb * self.t[r][j];
                }
                val += cb * self.rhs(r);
            }
        }
        (red, val)
    }

    /// Runs Bland's-rule pivots on columns `0..allowed` until optimal.
    /// Returns Ok(true) when optimal, Ok(false) when unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: usize, pivots: &mut usize) -> Result<bool, LpError> {
        loop {
            let (red, _) = self.reduced_costs(cost, allowed);
            let entering = red.iter().position(|&r| r < -COST_EPS);
            let Some(c) = entering else { return Ok(true) };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.t.len() {
                let a = self.t[r][c];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(r).max(0.0) / a;
                    match best {
                        None => best = Some((r, ratio)),
                        Some((br, bv)) => {
                            let tie = (ratio - bv).abs() <= 1e-12 * (1.0 + bv.abs());
                            if ratio < bv && !tie || tie && self.basis[r] < self.basis[br] {
                                best = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = best else { return Ok(false) };
            self.pivot(r, c);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(LpError::NumericalFailure(MAX_PIVOTS));
            }
        }
    }
}

/// Solves the program. Infeasible and unbounded programs are reported through
/// `LpOutcome::status`, not as errors.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    lp.validate()?;
    let n = lp.nvars;
    let mi = lp.ineq.len();
    let me = lp.eq.len();
    let rows = mi + me;
    // column layout: x+ (n) | x- (n) | slack (mi) | artificial (rows)
    let nx = 2 * n;
    let art0 = nx + mi;
    let cols = art0 + rows;

    let mut t = Vec::with_capacity(rows);
    let mut basis = Vec::with_capacity(rows);
    for r in 0..rows {
        let (coef, rhs, slack) = if r < mi {
            (&lp.ineq[r].0, lp.ineq[r].1, Some(nx + r))
        } else {
            (&lp.eq[r - mi].0, lp.eq[r - mi].1, None)
        };
        let mut row = vec![0.0; cols + 1];
        for j in 0..n {
            row[j] = coef[j];
            row[n + j] = -coef[j];
        }
        if let Some(s) = slack {
            row[s] = 1.0;
        }
        row[cols] = rhs;
        if rhs < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
        // a slack with coefficient +1 can start in the basis; otherwise use an artificial
        match slack {
            Some(s) if row[s] > 0.0 => basis.push(s),
            _ => {
                row[art0 + r] = 1.0;
                basis.push(art0 + r);
            }
        }
        t.push(row);
    }
    let mut tab = Tableau { t, basis, cols };
    let mut pivots = 0usize;

    // phase 1
    let mut cost1 = vec![0.0; cols];
    for c in cost1.iter_mut().skip(art0) {
        *c = 1.0;
    }
    if tab.basis.iter().any(|&b| b >= art0) {
        tab.optimize(&cost1, cols, &mut pivots)?;
        let (_, infeas) = tab.reduced_costs(&cost1, cols);
        let scale = 1.0
            + lp.ineq.iter().map(|(_, h)| h.abs()).fold(0.0, f64::max)
            + lp.eq.iter().map(|(_, f)| f.abs()).fold(0.0, f64::max);
        if infeas > tol::lp() * 1e-2 * scale {
            return Ok(LpOutcome { status: Status::Infeasible, x_opt: None, value: None });
        }
        // drive artificials out of the basis; drop rows that are redundant
        let mut r = 0;
        while r < tab.t.len() {
            if tab.basis[r] >= art0 {
                let col = (0..art0)
                    .filter(|&j| tab.t[r][j].abs() > 1e-9)
                    .max_by(|&a, &b| tab.t[r][a].abs().total_cmp(&tab.t[r][b].abs()));
                match col {
                    Some(c) => {
                        tab.pivot(r, c);
                        r += 1;
                    }
                    None => {
                        tab.t.remove(r);
                        tab.basis.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }
    }

    // phase 2 over the non-artificial columns
    let mut cost2 = vec![0.0; cols];
    for j in 0..n {
        cost2[j] = lp.objective[j];
        cost2[n + j] = -lp.objective[j];
    }
    let bounded = tab.optimize(&cost2, art0, &mut pivots)?;
    if !bounded {
        return Ok(LpOutcome { status: Status::Unbounded, x_opt: None, value: None });
    }
    let mut y = vec![0.0; cols];
    for (r, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs(r);
    }
    let x: Vec<f64> = (0..n).map(|j| y[j] - y[n + j]).collect();
    let value = dot(&lp.objective, &x);
    Ok(LpOutcome { status: Status::Optimal, x_opt: Some(x), value: Some(value) })
}

/// Finds any point satisfying the constraints, or None when infeasible.
pub fn feasible_point(nvars: usize, ineq: &[(Vec<f64>, f64)], eq: &[(Vec<f64>, f64)]) -> Result<Option<Vec<f64>>, LpError> {
    let lp = LinearProgram { objective: vec![0.0; nvars], ineq: ineq.to_vec(), eq: eq.to_vec(), nvars };
    let out = solve(&lp)?;
    Ok(match out.status {
        Status::Optimal => out.x_opt,
        _ => None,
    })
}

/// Maximizes the common margin `t` in `g·x <= h - t` (rows normalized to unit
/// length, `t` capped at 1). Positive slack certifies strict feasibility, zero
/// means only boundary points exist, negative means infeasible.
pub fn max_slack_feasibility(ineq: &[(Vec<f64>, f64)]) -> Result<(f64, Vec<f64>), LpError> {
    if ineq.is_empty() {
        return Err(LpError::Malformed("max-slack problem needs at least one constraint".into()));
    }
    let n = ineq[0].0.len();
    let mut lp = LinearProgram::new(n + 1);
    lp.objective[n] = -1.0;
    for (k, (g, h)) in ineq.iter().enumerate() {
        if g.len() != n {
            return Err(LpError::Malformed(format!("ineq[{k}] has {} entries, expected {n}", g.len())));
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = if norm > 0.0 { norm } else { 1.0 };
        let mut row: Vec<f64> = g.iter().map(|v| v / s).collect();
        row.push(1.0);
        lp.ineq.push((row, h / s));
    }
    let mut cap = vec![0.0; n + 1];
    cap[n] = 1.0;
    lp.ineq.push((cap, 1.0));
    let out = solve(&lp)?;
    match out.status {
        Status::Optimal => {
            let mut x = out.x_opt.unwrap_or_default();
            let t = x.pop().unwrap_or(0.0);
            Ok((t, x))
        }
        // t can always be made small enough, so neither branch is reachable for finite data
        _ => Err(LpError::NumericalFailure(0)),
    }
}
