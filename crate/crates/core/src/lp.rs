//! Dense bounded-variable simplex.
//!
//! Solves `max/min c·α  s.t.  Aα ≤ b,  lb ≤ α ≤ ub` with a two-phase primal
//! simplex that keeps variable bounds out of the constraint rows (nonbasic
//! variables sit at either bound). Entering and leaving choices follow Bland's
//! rule, so a given program always takes the same pivot path.

use thiserror::Error;

use crate::linalg::dot;

pub const PIVOT_TOL: f64 = 1e-9;
pub const FEAS_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub sense: Sense,
    /// Rows `(a, rhs)` meaning `a·α ≤ rhs`.
    pub constraints: Vec<(Vec<f64>, f64)>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>, sense: Sense) -> Self {
        let m = objective.len();
        Self {
            objective,
            sense,
            constraints: Vec::new(),
            lower: vec![f64::NEG_INFINITY; m],
            upper: vec![f64::INFINITY; m],
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_constraint(mut self, row: Vec<f64>, rhs: f64) -> Self {
        self.constraints.push((row, rhs));
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<(), LpError> {
        let m = self.num_vars();
        if self.lower.len() != m || self.upper.len() != m {
            return Err(LpError::Malformed(format!(
                "bounds have lengths {}/{} for {m} variables",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (row, rhs)) in self.constraints.iter().enumerate() {
            if row.len() != m {
                return Err(LpError::Malformed(format!("constraint {i} has {} coefficients, expected {m}", row.len())));
            }
            if rhs.is_nan() || row.iter().any(|v| !v.is_finite()) {
                return Err(LpError::Malformed(format!("constraint {i} is not finite")));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::Malformed("objective is not finite".into()));
        }
        if self.lower.iter().chain(&self.upper).any(|v| v.is_nan()) {
            return Err(LpError::Malformed("NaN variable bound".into()));
        }
        Ok(())
    }

    /// Largest violation of any row or bound at `point` (0 when feasible).
    pub fn violation(&self, point: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|(row, rhs)| dot(row, point) - rhs);
        let bounds = point.iter().zip(self.lower.iter().zip(&self.upper)).flat_map(|(x, (lo, hi))| [lo - x, x - hi]);
        rows.chain(bounds).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpOutcome {
    pub status: LpStatus,
    pub value: Option<f64>,
    pub point: Option<Vec<f64>>,
}

impl LpOutcome {
    fn infeasible() -> Self {
        Self { status: LpStatus::Infeasible, value: None, point: None }
    }

    fn unbounded() -> Self {
        Self { status: LpStatus::Unbounded, value: None, point: None }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    Malformed(String),
    #[error("simplex iteration limit of {0} exceeded")]
    IterationLimit(usize),
}

/// Solves `lp` with the default iteration cap.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    Simplex::default().solve(lp)
}

#[derive(Debug, Clone, Copy)]
pub struct Simplex {
    pub max_iter: usize,
}

impl Default for Simplex {
    fn default() -> Self {
        Self { max_iter: DEFAULT_MAX_ITER }
    }
}

/// How one original variable is expressed in terms of nonnegative columns.
#[derive(Debug, Clone)]
enum VarMap {
    /// `α = offset + t` (lower bound finite)
    Shift { col: usize, offset: f64 },
    /// `α = offset − t` (only upper bound finite)
    Flip { col: usize, offset: f64 },
    /// `α = t⁺ − t⁻`
    Split { pos: usize, neg: usize },
}

struct Tableau {
    /// `B⁻¹A`, row-major, `rows × cols`.
    t: Vec<f64>,
    rows: usize,
    cols: usize,
    /// Current value of each basic variable.
    beta: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    upper: Vec<f64>,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.cols + j]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.t[r * cols + j];
        for k in 0..cols {
            self.t[r * cols + k] /= p;
        }
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * cols + j];
            if f == 0.0 {
                continue;
            }
            for k in 0..cols {
                let v = self.t[r * cols + k];
                if v != 0.0 {
                    self.t[i * cols + k] -= f * v;
                }
            }
            self.t[i * cols + j] = 0.0;
        }
    }

    /// Maximizes `cost·x` from the current basic feasible solution.
    fn run(&mut self, cost: &[f64], budget: &mut usize, max_iter: usize) -> Result<PhaseEnd, LpError> {
        loop {
            if *budget >= max_iter {
                return Err(LpError::IterationLimit(max_iter));
            }
            *budget += 1;

            // Bland: lowest-index improving column.
            let mut entering = None;
            for j in 0..self.cols {
                if self.is_basic[j] || self.upper[j] <= 0.0 {
                    continue;
                }
                let mut d = cost[j];
                for i in 0..self.rows {
                    let a = self.at(i, j);
                    if a != 0.0 {
                        d -= cost[self.basis[i]] * a;
                    }
                }
                if (!self.at_upper[j] && d > PIVOT_TOL) || (self.at_upper[j] && d < -PIVOT_TOL) {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Ok(PhaseEnd::Optimal);
            };
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

            let mut theta = self.upper[j];
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..self.rows {
                let a = dir * self.at(i, j);
                let b = self.basis[i];
                let (limit, to_upper) = if a > PIVOT_TOL {
                    (self.beta[i].max(0.0) / a, false)
                } else if a < -PIVOT_TOL && self.upper[b].is_finite() {
                    ((self.upper[b] - self.beta[i]).max(0.0) / -a, true)
                } else {
                    continue;
                };
                let better = match leave {
                    _ if limit < theta => true,
                    Some((r, _)) if limit == theta => b < self.basis[r],
                    _ => false,
                };
                if better {
                    theta = limit;
                    leave = Some((i, to_upper));
                }
            }
            if theta.is_infinite() {
                return Ok(PhaseEnd::Unbounded);
            }

            for i in 0..self.rows {
                let a = self.at(i, j);
                if a != 0.0 {
                    self.beta[i] -= dir * theta * a;
                }
            }
            match leave {
                None => self.at_upper[j] = !self.at_upper[j],
                Some((r, to_upper)) => {
                    let entering_value = if self.at_upper[j] { self.upper[j] - theta } else { theta };
                    let old = self.basis[r];
                    self.is_basic[old] = false;
                    self.at_upper[old] = to_upper;
                    self.pivot(r, j);
                    self.basis[r] = j;
                    self.is_basic[j] = true;
                    self.at_upper[j] = false;
                    self.beta[r] = entering_value;
                }
            }
        }
    }
}

impl Simplex {
    pub fn solve(&self, lp: &LinearProgram) -> Result<LpOutcome, LpError> {
        lp.validate()?;
        let m = lp.num_vars();
        if lp.lower.iter().zip(&lp.upper).any(|(lo, hi)| lo > hi || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY) {
            return Ok(LpOutcome::infeasible());
        }

        // Structural columns.
        let mut maps = Vec::with_capacity(m);
        let mut col_upper = Vec::new();
        for (&lo, &hi) in lp.lower.iter().zip(&lp.upper) {
            let col = col_upper.len();
            if lo.is_finite() {
                maps.push(VarMap::Shift { col, offset: lo });
                col_upper.push(hi - lo);
            } else if hi.is_finite() {
                maps.push(VarMap::Flip { col, offset: hi });
                col_upper.push(f64::INFINITY);
            } else {
                maps.push(VarMap::Split { pos: col, neg: col + 1 });
                col_upper.push(f64::INFINITY);
                col_upper.push(f64::INFINITY);
            }
        }
        let n_struct = col_upper.len();
        let sign = if lp.sense == Sense::Maximize { 1.0 } else { -1.0 };
        let mut struct_cost = vec![0.0; n_struct];
        for (map, &c) in maps.iter().zip(&lp.objective) {
            match *map {
                VarMap::Shift { col, .. } => struct_cost[col] = sign * c,
                VarMap::Flip { col, .. } => struct_cost[col] = -sign * c,
                VarMap::Split { pos, neg } => {
                    struct_cost[pos] = sign * c;
                    struct_cost[neg] = -sign * c;
                }
            }
        }

        let rows = lp.constraints.len();
        let mut row_coef = Vec::with_capacity(rows);
        let mut row_rhs = Vec::with_capacity(rows);
        for (a, rhs) in &lp.constraints {
            let mut coef = vec![0.0; n_struct];
            let mut shift = 0.0;
            for (map, &v) in maps.iter().zip(a) {
                match *map {
                    VarMap::Shift { col, offset } => {
                        coef[col] = v;
                        shift += v * offset;
                    }
                    VarMap::Flip { col, offset } => {
                        coef[col] = -v;
                        shift += v * offset;
                    }
                    VarMap::Split { pos, neg } => {
                        coef[pos] = v;
                        coef[neg] = -v;
                    }
                }
            }
            row_coef.push(coef);
            row_rhs.push(rhs - shift);
        }

        let negative: Vec<usize> = (0..rows).filter(|&i| row_rhs[i] < 0.0).collect();
        let n_art = negative.len();
        let cols = n_struct + rows + n_art;
        let mut t = vec![0.0; rows * cols];
        let mut beta = vec![0.0; rows];
        let mut basis = vec![0; rows];
        let mut art_idx = 0;
        for i in 0..rows {
            let neg = row_rhs[i] < 0.0;
            let s = if neg { -1.0 } else { 1.0 };
            for k in 0..n_struct {
                t[i * cols + k] = s * row_coef[i][k];
            }
            t[i * cols + n_struct + i] = s;
            beta[i] = s * row_rhs[i];
            if neg {
                let a = n_struct + rows + art_idx;
                t[i * cols + a] = 1.0;
                basis[i] = a;
                art_idx += 1;
            } else {
                basis[i] = n_struct + i;
            }
        }
        let mut upper = col_upper;
        upper.extend(std::iter::repeat_n(f64::INFINITY, rows + n_art));
        let mut is_basic = vec![false; cols];
        for &b in &basis {
            is_basic[b] = true;
        }
        let mut tab = Tableau { t, rows, cols, beta, basis, is_basic, at_upper: vec![false; cols], upper };

        let mut iters = 0;
        if n_art > 0 {
            let mut cost = vec![0.0; cols];
            for c in cost.iter_mut().skip(n_struct + rows) {
                *c = -1.0;
            }
            tab.run(&cost, &mut iters, self.max_iter)?;
            let infeasibility: f64 = (0..rows).filter(|&i| tab.basis[i] >= n_struct + rows).map(|i| tab.beta[i]).sum();
            if infeasibility > FEAS_TOL {
                return Ok(LpOutcome::infeasible());
            }
            for a in n_struct + rows..cols {
                tab.upper[a] = 0.0;
                tab.at_upper[a] = false;
            }
        }

        let mut cost = vec![0.0; cols];
        cost[..n_struct].copy_from_slice(&struct_cost);
        if let PhaseEnd::Unbounded = tab.run(&cost, &mut iters, self.max_iter)? {
            return Ok(LpOutcome::unbounded());
        }

        let mut colval: Vec<f64> = (0..cols).map(|j| tab.nonbasic_value(j)).collect();
        for (i, &b) in tab.basis.iter().enumerate() {
            colval[b] = tab.beta[i];
        }
        let point: Vec<f64> = maps
            .iter()
            .zip(lp.lower.iter().zip(&lp.upper))
            .map(|(map, (&lo, &hi))| {
                let v = match *map {
                    VarMap::Shift { col, offset } => offset + colval[col],
                    VarMap::Flip { col, offset } => offset - colval[col],
                    VarMap::Split { pos, neg } => colval[pos] - colval[neg],
                };
                v.clamp(lo, hi)
            })
            .collect();
        let value = dot(&lp.objective, &point);
        Ok(LpOutcome { status: LpStatus::Optimal, value: Some(value), point: Some(point) })
    }
}
