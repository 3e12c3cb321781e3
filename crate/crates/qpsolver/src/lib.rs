//! Operator-splitting solver for convex quadratic and linear programs.
//!
//! Problems are given in the form
//!
//! ```text
//! minimize    sum_k w_k (x_i ± x_j)^2  +  q' x  +  offset
//! subject to  lo_r <= a_r' x <= hi_r                    (plain rows)
//!             a_r' x + sum_k w_k (x_i ± x_j)^2 <= hi_r  (quadratic rows)
//!             lb <= x <= ub                             (variable bounds)
//! ```
//!
//! The quadratic pieces are kept as rank-structured *atoms* `w (x_i ± x_j)^2`
//! with `w > 0`, so positive semidefiniteness is syntactic. A diagonal atom
//! (`i == j`, sign `+`) means `w x_i^2`.
//!
//! The algorithm is ADMM over a quasi-definite KKT system (sparse LDL^T with
//! minimum-degree ordering, symbolic factorization reused across refactors),
//! with Ruiz equilibration, an adaptive step parameter, divergence-based
//! infeasibility certificates and an active-set polish step that refines
//! solutions to tight KKT residuals. Quadratic rows are handled by projecting
//! onto their paraboloid `{(u, t) : sum_k w_k u_k^2 + t <= hi}`; everything
//! else is interval projection. All paths are deterministic: identical inputs
//! and warm starts produce identical reports.

mod admm;
mod csc;
mod ldl;
mod order;
mod polish;
mod scale;
pub mod textfmt;

use thiserror::Error;

/// Sign of the coupled term inside a quadratic atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// One rank-structured square `w * (x_i + sign * x_j)^2` with `w > 0`.
///
/// `i == j` (sign must be `Plus`) denotes the diagonal square `w * x_i^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadAtom {
    pub w: f64,
    pub i: usize,
    pub j: usize,
    pub sign: Sign,
}

impl QuadAtom {
    pub fn square(w: f64, i: usize) -> Self {
        QuadAtom { w, i, j: i, sign: Sign::Plus }
    }

    /// Value of the atom at `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.i == self.j {
            self.w * x[self.i] * x[self.i]
        } else {
            let u = x[self.i] + self.sign.factor() * x[self.j];
            self.w * u * u
        }
    }

    /// Adds the gradient of the atom at `x` into `grad`.
    pub fn add_grad(&self, x: &[f64], grad: &mut [f64]) {
        if self.i == self.j {
            grad[self.i] += 2.0 * self.w * x[self.i];
        } else {
            let s = self.sign.factor();
            let u = x[self.i] + s * x[self.j];
            grad[self.i] += 2.0 * self.w * u;
            grad[self.j] += 2.0 * self.w * s * u;
        }
    }
}

/// One constraint row. `quad` empty: `lo <= a'x <= hi`. `quad` nonempty:
/// `a'x + sum(atoms) <= hi` and `lo` must be `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub quad: Vec<QuadAtom>,
}

impl Row {
    pub fn new(cols: Vec<usize>, vals: Vec<f64>, lo: f64, hi: f64) -> Self {
        Row { cols, vals, lo, hi, quad: Vec::new() }
    }

    /// Linear part `a'x`.
    pub fn linear_value(&self, x: &[f64]) -> f64 {
        self.cols.iter().zip(&self.vals).map(|(&c, &v)| v * x[c]).sum()
    }

    /// Full row value `a'x + sum(atoms)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.linear_value(x) + self.quad.iter().map(|a| a.eval(x)).sum::<f64>()
    }

    /// Violation of the row at `x` (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.value(x);
        (v - self.hi).max(self.lo - v).max(0.0)
    }
}

/// A convex QP/LP in the solver's standard form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexProblem {
    pub num_vars: usize,
    /// Linear objective coefficients, dense, length `num_vars`.
    pub linear: Vec<f64>,
    /// PSD quadratic objective, stored as atoms (empty for LPs).
    pub atoms: Vec<QuadAtom>,
    /// Constant added to reported objective values.
    pub offset: f64,
    pub rows: Vec<Row>,
    /// Per-variable `(lower, upper)`; use infinities for free variables.
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("linear objective has length {0}, expected {1}")]
    LinearLen(usize, usize),
    #[error("bounds vector has length {0}, expected {1}")]
    BoundsLen(usize, usize),
    #[error("variable index {0} out of range (n = {1})")]
    VarIndex(usize, usize),
    #[error("row {0}: cols/vals length mismatch")]
    RowShape(usize),
    #[error("row {0}: lower bound {1} exceeds upper bound {2}")]
    RowBounds(usize, f64, f64),
    #[error("variable {0}: lower bound {1} exceeds upper bound {2}")]
    VarBounds(usize, f64, f64),
    #[error("row {0}: quadratic rows require lo = -inf and finite hi")]
    QuadRowBounds(usize),
    #[error("atom weight must be positive and finite, got {0}")]
    AtomWeight(f64),
    #[error("diagonal atom must use sign '+'")]
    DiagAtomSign,
    #[error("non-finite coefficient encountered")]
    NonFinite,
}

impl ConvexProblem {
    pub fn new(num_vars: usize) -> Self {
        ConvexProblem {
            num_vars,
            linear: vec![0.0; num_vars],
            atoms: Vec::new(),
            offset: 0.0,
            rows: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); num_vars],
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let n = self.num_vars;
        if self.linear.len() != n {
            return Err(ProblemError::LinearLen(self.linear.len(), n));
        }
        if self.bounds.len() != n {
            return Err(ProblemError::BoundsLen(self.bounds.len(), n));
        }
        if !self.offset.is_finite() {
            return Err(ProblemError::NonFinite);
        }
        for &c in &self.linear {
            if !c.is_finite() {
                return Err(ProblemError::NonFinite);
            }
        }
        for (v, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo > hi {
                return Err(ProblemError::VarBounds(v, lo, hi));
            }
            if lo.is_nan() || hi.is_nan() {
                return Err(ProblemError::NonFinite);
            }
        }
        let check_atom = |a: &QuadAtom| -> Result<(), ProblemError> {
            if !(a.w > 0.0) || !a.w.is_finite() {
                return Err(ProblemError::AtomWeight(a.w));
            }
            if a.i >= n {
                return Err(ProblemError::VarIndex(a.i, n));
            }
            if a.j >= n {
                return Err(ProblemError::VarIndex(a.j, n));
            }
            if a.i == a.j && a.sign == Sign::Minus {
                return Err(ProblemError::DiagAtomSign);
            }
            Ok(())
        };
        for a in &self.atoms {
            check_atom(a)?;
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.cols.len() != row.vals.len() {
                return Err(ProblemError::RowShape(r));
            }
            for &c in &row.cols {
                if c >= n {
                    return Err(ProblemError::VarIndex(c, n));
                }
            }
            for &v in &row.vals {
                if !v.is_finite() {
                    return Err(ProblemError::NonFinite);
                }
            }
            if row.lo.is_nan() || row.hi.is_nan() {
                return Err(ProblemError::NonFinite);
            }
            if row.quad.is_empty() {
                if row.lo > row.hi {
                    return Err(ProblemError::RowBounds(r, row.lo, row.hi));
                }
            } else {
                if row.lo != f64::NEG_INFINITY || !row.hi.is_finite() {
                    return Err(ProblemError::QuadRowBounds(r));
                }
                for a in &row.quad {
                    check_atom(a)?;
                }
            }
        }
        Ok(())
    }

    /// Objective value at `x` (including `offset`).
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let quad: f64 = self.atoms.iter().map(|a| a.eval(x)).sum();
        let lin: f64 = self.linear.iter().zip(x).map(|(&q, &xi)| q * xi).sum();
        quad + lin + self.offset
    }

    /// True if the objective has no quadratic part and no row does either.
    pub fn is_lp(&self) -> bool {
        self.atoms.is_empty() && self.rows.iter().all(|r| r.quad.is_empty())
    }

    /// Largest constraint violation at `x` over rows and variable bounds.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for row in &self.rows {
            v = v.max(row.violation(x));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            v = v.max((x[i] - hi).max(lo - x[i]).max(0.0));
        }
        v
    }
}

/// Solver configuration. Defaults target 1e-8 residuals, which the polish
/// step usually tightens further.
#[derive(Debug, Clone)]
pub struct Settings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_pinf: f64,
    pub eps_dinf: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub scaling_iters: usize,
    pub adaptive_rho: bool,
    pub polish: bool,
    pub check_interval: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            eps_pinf: 1e-9,
            eps_dinf: 1e-9,
            max_iter: 200_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            adaptive_rho: true,
            polish: true,
            check_interval: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
}

/// Result of a solve. `y` holds one dual value per user row (the multiplier
/// of the full row, paraboloid rows included); `ybound` one per variable
/// bound. `z_internal` is the constraint-space iterate used for warm starts.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: Status,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub ybound: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
    pub rho_updates: usize,
    pub z_internal: Vec<f64>,
    pub y_internal: Vec<f64>,
}

/// Warm-start state extracted from a previous report on a structurally
/// identical problem (same rows in the same order).
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

impl WarmStart {
    pub fn from_report(report: &SolveReport) -> Self {
        WarmStart {
            x: report.x.clone(),
            z: report.z_internal.clone(),
            y: report.y_internal.clone(),
        }
    }
}

/// Stationarity, feasibility and complementarity residuals at a candidate
/// primal/dual pair, computed directly from the problem data.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

/// Solves the problem. Validation errors are returned before any numeric
/// work; numeric outcomes (including infeasibility) land in the report.
pub fn solve(
    problem: &ConvexProblem,
    settings: &Settings,
    warm: Option<&WarmStart>,
) -> Result<SolveReport, ProblemError> {
    problem.validate()?;
    Ok(admm::solve_canonical(problem, settings, warm))
}

/// KKT residuals of a report against its problem. The dual residual uses the
/// row multipliers in `y` (gradient of each full row for paraboloid rows)
/// plus the bound multipliers in `ybound`.
pub fn kkt_residuals(problem: &ConvexProblem, report: &SolveReport) -> KktResiduals {
    let x = &report.x;
    let n = problem.num_vars;
    let mut station = vec![0.0; n];
    for a in &problem.atoms {
        a.add_grad(x, &mut station);
    }
    for (i, s) in station.iter_mut().enumerate() {
        *s += problem.linear[i];
    }
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for (r, row) in problem.rows.iter().enumerate() {
        let yr = report.y[r];
        for (&c, &v) in row.cols.iter().zip(&row.vals) {
            station[c] += yr * v;
        }
        let mut grad_scratch = vec![];
        if !row.quad.is_empty() {
            grad_scratch = vec![0.0; n];
            for a in &row.quad {
                a.add_grad(x, &mut grad_scratch);
            }
            for (c, g) in grad_scratch.iter().enumerate() {
                station[c] += yr * g;
            }
        }
        let _ = grad_scratch;
        let val = row.value(x);
        primal = primal.max(row.violation(x));
        let slack_hi = if row.hi.is_finite() { row.hi - val } else { f64::INFINITY };
        let slack_lo = if row.lo.is_finite() { val - row.lo } else { f64::INFINITY };
        if yr > 0.0 && slack_hi.is_finite() {
            comp = comp.max(yr * slack_hi.max(0.0));
        }
        if yr < 0.0 && slack_lo.is_finite() {
            comp = comp.max(-yr * slack_lo.max(0.0));
        }
    }
    for (i, &(lo, hi)) in problem.bounds.iter().enumerate() {
        let yb = report.ybound[i];
        station[i] += yb;
        primal = primal.max((x[i] - hi).max(lo - x[i]).max(0.0));
        if yb > 0.0 && hi.is_finite() {
            comp = comp.max(yb * (hi - x[i]).max(0.0));
        }
        if yb < 0.0 && lo.is_finite() {
            comp = comp.max(-yb * (x[i] - lo).max(0.0));
        }
    }
    let dual = station.iter().fold(0.0_f64, |m, &s| m.max(s.abs()));
    KktResiduals { primal, dual, complementarity: comp }
}
