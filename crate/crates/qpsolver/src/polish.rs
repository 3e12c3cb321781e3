//! Active-set polish. The converged ADMM duals identify which rows and
//! bounds are tight; solving the equality-constrained KKT system on that
//! guess (with tiny quasi-definite regularization plus iterative refinement
//! against the unregularized system) usually lands on the exact optimum.
//! Active quadratic rows are handled by relinearizing their gradient rows a
//! few Newton passes. The polished pair replaces the iterate only when its
//! measured KKT residuals beat the unpolished ones and multiplier signs are
//! consistent, so polish can only improve a report.

use crate::admm::hessian_upper;
use crate::csc::{inf_norm, Csc};
use crate::ldl;
use crate::{ConvexProblem, SolveReport};

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Lower,
    Upper,
    Eq,
}

#[derive(Clone, Copy)]
struct Active {
    is_bound: bool,
    idx: usize,
    side: Side,
}

const REG: f64 = 1e-8;
const REFINE_ROUNDS: usize = 3;
const NEWTON_PASSES: usize = 6;

pub(crate) fn try_polish(problem: &ConvexProblem, report: &mut SolveReport) {
    let n = problem.num_vars;
    let y_scale = inf_norm(&report.y).max(inf_norm(&report.ybound)).max(1.0);
    let tol = 1e-11 * y_scale;
    let mut active: Vec<Active> = Vec::new();
    let mut has_quad = false;
    for (r, row) in problem.rows.iter().enumerate() {
        if !row.quad.is_empty() {
            if report.y[r] > tol {
                active.push(Active { is_bound: false, idx: r, side: Side::Upper });
                has_quad = true;
            }
        } else if row.lo == row.hi {
            active.push(Active { is_bound: false, idx: r, side: Side::Eq });
        } else if report.y[r] > tol && row.hi.is_finite() {
            active.push(Active { is_bound: false, idx: r, side: Side::Upper });
        } else if report.y[r] < -tol && row.lo.is_finite() {
            active.push(Active { is_bound: false, idx: r, side: Side::Lower });
        }
    }
    for (v, &(blo, bhi)) in problem.bounds.iter().enumerate() {
        if blo == bhi {
            active.push(Active { is_bound: true, idx: v, side: Side::Eq });
        } else if report.ybound[v] > tol && bhi.is_finite() {
            active.push(Active { is_bound: true, idx: v, side: Side::Upper });
        } else if report.ybound[v] < -tol && blo.is_finite() {
            active.push(Active { is_bound: true, idx: v, side: Side::Lower });
        }
    }
    let k = active.len();
    if k == 0 && problem.atoms.is_empty() {
        // Pure LP with an empty active-set guess: the regularized system
        // x = -q / reg is meaningless, and refinement cannot fix it.
        return;
    }
    let h_upper = hessian_upper(problem);
    let q = &problem.linear;

    let mut x = report.x.clone();
    let mut lambda = vec![0.0f64; k];
    let passes = if has_quad { NEWTON_PASSES } else { 1 };
    for _ in 0..passes {
        // Constraint rows of the working set, linearized at `x`.
        let mut g_cols: Vec<Vec<usize>> = Vec::with_capacity(k);
        let mut g_vals: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut b = vec![0.0f64; k];
        for (a_idx, a) in active.iter().enumerate() {
            if a.is_bound {
                let (blo, bhi) = problem.bounds[a.idx];
                g_cols.push(vec![a.idx]);
                g_vals.push(vec![1.0]);
                b[a_idx] = match a.side {
                    Side::Lower => blo,
                    Side::Upper | Side::Eq => bhi,
                };
            } else {
                let row = &problem.rows[a.idx];
                if row.quad.is_empty() {
                    g_cols.push(row.cols.clone());
                    g_vals.push(row.vals.clone());
                    b[a_idx] = match a.side {
                        Side::Lower => row.lo,
                        Side::Upper | Side::Eq => row.hi,
                    };
                } else {
                    let mut grad = vec![0.0f64; n];
                    for atom in &row.quad {
                        atom.add_grad(&x, &mut grad);
                    }
                    for (&c, &v) in row.cols.iter().zip(&row.vals) {
                        grad[c] += v;
                    }
                    let gx: f64 = grad.iter().zip(&x).map(|(&g, &xi)| g * xi).sum();
                    b[a_idx] = row.hi - row.value(&x) + gx;
                    let mut cols = Vec::new();
                    let mut vals = Vec::new();
                    for (c, &g) in grad.iter().enumerate() {
                        if g != 0.0 {
                            cols.push(c);
                            vals.push(g);
                        }
                    }
                    g_cols.push(cols);
                    g_vals.push(vals);
                }
            }
        }

        // Regularized KKT assembly and factorization.
        let dim = n + k;
        let mut trips: Vec<(usize, usize, f64)> = h_upper.clone();
        for i in 0..n {
            trips.push((i, i, REG));
        }
        for r in 0..k {
            for (&c, &v) in g_cols[r].iter().zip(&g_vals[r]) {
                trips.push((c, n + r, v));
            }
            trips.push((n + r, n + r, -REG));
        }
        let kkt = Csc::from_triplets(dim, dim, &trips);
        let mut sym = ldl::symbolic(&kkt);
        let fac = match ldl::factor(&mut sym, &kkt) {
            Ok(f) => f,
            Err(_) => return,
        };
        let mut rhs = vec![0.0f64; dim];
        for i in 0..n {
            rhs[i] = -q[i];
        }
        rhs[n..].copy_from_slice(&b);
        let mut sol = rhs.clone();
        fac.solve(&mut sol);
        // Refinement against the unregularized system.
        for _ in 0..REFINE_ROUNDS {
            let mut resid = rhs.clone();
            let mut hx = vec![0.0f64; n];
            for atom in &problem.atoms {
                atom.add_grad(&sol[..n], &mut hx);
            }
            for i in 0..n {
                resid[i] -= hx[i];
            }
            for r in 0..k {
                let lam = sol[n + r];
                let mut gx = 0.0;
                for (&c, &v) in g_cols[r].iter().zip(&g_vals[r]) {
                    resid[c] -= v * lam;
                    gx += v * sol[c];
                }
                resid[n + r] -= gx;
            }
            let mut corr = resid;
            fac.solve(&mut corr);
            for i in 0..dim {
                sol[i] += corr[i];
            }
        }
        let dx = x
            .iter()
            .zip(&sol[..n])
            .fold(0.0f64, |mx, (&old, &new)| mx.max((new - old).abs()));
        x.copy_from_slice(&sol[..n]);
        lambda.copy_from_slice(&sol[n..]);
        if !has_quad || dx <= 1e-13 * (1.0 + inf_norm(&x)) {
            break;
        }
    }

    // Multiplier signs must match the side each constraint is active on.
    let stol = 1e-9 * inf_norm(&lambda).max(1.0);
    for (a, &l) in active.iter().zip(&lambda) {
        match a.side {
            Side::Upper if l < -stol => return,
            Side::Lower if l > stol => return,
            _ => {}
        }
    }
    let mut cand = report.clone();
    cand.x = x;
    cand.y = vec![0.0; problem.rows.len()];
    cand.ybound = vec![0.0; n];
    for (a, &l) in active.iter().zip(&lambda) {
        if a.is_bound {
            cand.ybound[a.idx] = l;
        } else {
            cand.y[a.idx] = l;
        }
    }
    cand.objective = problem.objective_value(&cand.x);
    let old = crate::kkt_residuals(problem, report);
    let new = crate::kkt_residuals(problem, &cand);
    let old_max = old.primal.max(old.dual).max(old.complementarity);
    let new_max = new.primal.max(new.dual).max(new.complementarity);
    if new_max < old_max {
        report.x = cand.x;
        report.y = cand.y;
        report.ybound = cand.ybound;
        report.objective = cand.objective;
        report.primal_residual = new.primal;
        report.dual_residual = new.dual;
        report.polished = true;
    }
}
