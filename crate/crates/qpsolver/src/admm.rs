//! The operator-splitting engine. User rows are canonicalized into internal
//! rows first: plain rows map one-to-one, each quadratic row expands into one
//! row per atom (carrying the atom's linear form `x_i ± x_j`) plus a gap row
//! for its affine part, and finite variable bounds become identity rows. The
//! constraint set is then a product of intervals and paraboloids, both with
//! cheap exact projections, and the standard two-block splitting applies.

use crate::csc::{inf_norm, Csc};
use crate::ldl;
use crate::order;
use crate::polish;
use crate::scale::{self, Scaling};
use crate::{ConvexProblem, Settings, SolveReport, Status, WarmStart};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RowTag {
    /// Main internal row of user row `r` (plain row or gap row).
    User(usize),
    /// Atom row belonging to quadratic user row `r`.
    AtomOf(usize),
    /// Bound row of variable `v`.
    Bound(usize),
}

#[derive(Debug, Clone)]
pub(crate) enum Group {
    Interval { row: usize },
    Parab { u_start: usize, u_end: usize, gap: usize },
}

pub(crate) struct Canon {
    pub n: usize,
    pub m: usize,
    /// Unscaled internal constraint matrix (m x n).
    pub a: Csc,
    /// Interval bounds per internal row; atom rows carry (-inf, inf).
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Atom weight per internal row (0 outside atom rows).
    pub weights: Vec<f64>,
    pub tags: Vec<RowTag>,
    pub groups: Vec<Group>,
    pub in_parab: Vec<bool>,
    pub is_eq: Vec<bool>,
}

pub(crate) fn canonicalize(p: &ConvexProblem) -> Canon {
    let n = p.num_vars;
    let mut trips: Vec<(usize, usize, f64)> = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut weights = Vec::new();
    let mut tags = Vec::new();
    let mut groups = Vec::new();
    let mut in_parab = Vec::new();
    let mut is_eq = Vec::new();
    let mut rid = 0usize;
    for (r, row) in p.rows.iter().enumerate() {
        if row.quad.is_empty() {
            for (&c, &v) in row.cols.iter().zip(&row.vals) {
                trips.push((rid, c, v));
            }
            lo.push(row.lo);
            hi.push(row.hi);
            weights.push(0.0);
            tags.push(RowTag::User(r));
            in_parab.push(false);
            is_eq.push(row.lo == row.hi);
            groups.push(Group::Interval { row: rid });
            rid += 1;
        } else {
            let u_start = rid;
            for a in &row.quad {
                trips.push((rid, a.i, 1.0));
                if a.j != a.i {
                    trips.push((rid, a.j, a.sign.factor()));
                }
                lo.push(f64::NEG_INFINITY);
                hi.push(f64::INFINITY);
                weights.push(a.w);
                tags.push(RowTag::AtomOf(r));
                in_parab.push(true);
                is_eq.push(false);
                rid += 1;
            }
            for (&c, &v) in row.cols.iter().zip(&row.vals) {
                trips.push((rid, c, v));
            }
            lo.push(f64::NEG_INFINITY);
            hi.push(row.hi);
            weights.push(0.0);
            tags.push(RowTag::User(r));
            in_parab.push(true);
            is_eq.push(false);
            groups.push(Group::Parab { u_start, u_end: rid, gap: rid });
            rid += 1;
        }
    }
    for (v, &(blo, bhi)) in p.bounds.iter().enumerate() {
        if blo.is_finite() || bhi.is_finite() {
            trips.push((rid, v, 1.0));
            lo.push(blo);
            hi.push(bhi);
            weights.push(0.0);
            tags.push(RowTag::Bound(v));
            in_parab.push(false);
            is_eq.push(blo == bhi);
            groups.push(Group::Interval { row: rid });
            rid += 1;
        }
    }
    let a = Csc::from_triplets(rid, n, &trips);
    Canon { n, m: rid, a, lo, hi, weights, tags, groups, in_parab, is_eq }
}

/// Upper-triangle Hessian triplets of the objective.
pub(crate) fn hessian_upper(p: &ConvexProblem) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::with_capacity(3 * p.atoms.len());
    for a in &p.atoms {
        if a.i == a.j {
            t.push((a.i, a.i, 2.0 * a.w));
        } else {
            let (i, j) = if a.i < a.j { (a.i, a.j) } else { (a.j, a.i) };
            t.push((a.i, a.i, 2.0 * a.w));
            t.push((a.j, a.j, 2.0 * a.w));
            t.push((i, j, 2.0 * a.w * a.sign.factor()));
        }
    }
    t
}

/// Projects the scaled iterate onto the scaled constraint set.
fn project(canon: &Canon, slo: &[f64], shi: &[f64], z: &mut [f64]) {
    for g in &canon.groups {
        match *g {
            Group::Interval { row } => {
                z[row] = z[row].max(slo[row]).min(shi[row]);
            }
            Group::Parab { u_start, u_end, gap } => {
                let (head, tail) = z.split_at_mut(gap);
                project_parab(
                    &canon.weights[u_start..u_end],
                    &mut head[u_start..u_end],
                    &mut tail[0],
                    canon.hi[gap],
                );
            }
        }
    }
}

/// Euclidean projection onto `{(u, t) : sum_k w_k u_k^2 + t <= h}`. The
/// optimality system reduces to a scalar root-find in the multiplier `nu`:
/// `u_k = u0_k / (1 + 2 nu w_k)`, `t = t0 - nu`, with `phi(nu) = value - h`
/// strictly decreasing and positive at zero, so safeguarded Newton converges.
fn project_parab(w: &[f64], u: &mut [f64], t: &mut f64, h: f64) {
    let t0 = *t;
    let quad0: f64 = w.iter().zip(u.iter()).map(|(&wk, &uk)| wk * uk * uk).sum();
    if quad0 + t0 <= h {
        return;
    }
    let mut nu_lo = 0.0f64;
    let mut nu_hi = quad0 + t0 - h;
    let tol = 1e-15 * (1.0f64).max(h.abs()).max(t0.abs()).max(quad0);
    let mut nu = 0.0f64;
    for _ in 0..200 {
        let mut phi = t0 - nu - h;
        let mut dphi = -1.0f64;
        for (&wk, &uk) in w.iter().zip(u.iter()) {
            let denom = 1.0 + 2.0 * nu * wk;
            let s = wk * uk * uk / (denom * denom);
            phi += s;
            dphi -= 4.0 * wk * s / denom;
        }
        if phi > 0.0 {
            nu_lo = nu;
        } else {
            nu_hi = nu;
        }
        if phi.abs() <= tol {
            break;
        }
        let mut next = nu - phi / dphi;
        if !(next > nu_lo && next < nu_hi) {
            next = 0.5 * (nu_lo + nu_hi);
        }
        if (next - nu).abs() <= 1e-17 * (1.0 + nu.abs()) {
            nu = next;
            break;
        }
        nu = next;
    }
    for (uk, &wk) in u.iter_mut().zip(w.iter()) {
        *uk /= 1.0 + 2.0 * nu * wk;
    }
    *t = t0 - nu;
}

fn rho_vector(canon: &Canon, rho: f64) -> Vec<f64> {
    canon
        .is_eq
        .iter()
        .map(|&eq| if eq { rho * 1e3 } else { rho })
        .collect()
}

/// Assembles the permuted upper-triangular KKT matrix
/// `[P_s + sigma I, A_s'; A_s, -diag(1/rho)]`.
fn assemble_kkt(
    n: usize,
    m: usize,
    p_upper_scaled: &[(usize, usize, f64)],
    a_s: &Csc,
    rho_vec: &[f64],
    sigma: f64,
    inv_perm: &[usize],
) -> Csc {
    let dim = n + m;
    let mut trips = Vec::with_capacity(p_upper_scaled.len() + n + a_s.nnz() + m);
    for &(i, j, v) in p_upper_scaled {
        trips.push((i, j, v));
    }
    for i in 0..n {
        trips.push((i, i, sigma));
    }
    for col in 0..n {
        for p in a_s.col_ptr[col]..a_s.col_ptr[col + 1] {
            trips.push((col, n + a_s.row_idx[p], a_s.values[p]));
        }
    }
    for r in 0..m {
        trips.push((n + r, n + r, -1.0 / rho_vec[r]));
    }
    let permuted: Vec<(usize, usize, f64)> = trips
        .iter()
        .map(|&(i, j, v)| {
            let (pi, pj) = (inv_perm[i], inv_perm[j]);
            if pi <= pj {
                (pi, pj, v)
            } else {
                (pj, pi, v)
            }
        })
        .collect();
    Csc::from_triplets(dim, dim, &permuted)
}

/// Fill-reducing ordering for the KKT pattern.
fn kkt_ordering(
    n: usize,
    m: usize,
    p_upper: &[(usize, usize, f64)],
    a: &Csc,
) -> (Vec<usize>, Vec<usize>) {
    let dim = n + m;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); dim];
    for &(i, j, _) in p_upper {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for col in 0..n {
        for p in a.col_ptr[col]..a.col_ptr[col + 1] {
            let r = n + a.row_idx[p];
            adj[col].push(r);
            adj[r].push(col);
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let perm = order::min_degree(&adj);
    let inv = order::invert(&perm);
    (perm, inv)
}

struct SupportEval {
    finite: bool,
    value: f64,
}

/// Support function of the constraint set at `dy`, used by the primal
/// infeasibility test. `tiny` absorbs numeric noise in the certificate.
fn support_function(canon: &Canon, dy: &[f64], tiny: f64) -> SupportEval {
    let mut value = 0.0f64;
    for g in &canon.groups {
        match *g {
            Group::Interval { row } => {
                let d = dy[row];
                if d > tiny {
                    if canon.hi[row].is_finite() {
                        value += canon.hi[row] * d;
                    } else {
                        return SupportEval { finite: false, value: 0.0 };
                    }
                } else if d < -tiny {
                    if canon.lo[row].is_finite() {
                        value += canon.lo[row] * d;
                    } else {
                        return SupportEval { finite: false, value: 0.0 };
                    }
                }
            }
            Group::Parab { u_start, u_end, gap } => {
                let dt = dy[gap];
                if dt > tiny {
                    let mut s = canon.hi[gap] * dt;
                    for r in u_start..u_end {
                        s += dy[r] * dy[r] / (4.0 * canon.weights[r] * dt);
                    }
                    value += s;
                } else if dt >= -tiny {
                    for r in u_start..u_end {
                        if dy[r].abs() > tiny {
                            return SupportEval { finite: false, value: 0.0 };
                        }
                    }
                } else {
                    return SupportEval { finite: false, value: 0.0 };
                }
            }
        }
    }
    SupportEval { finite: true, value }
}

pub(crate) fn solve_canonical(
    problem: &ConvexProblem,
    settings: &Settings,
    warm: Option<&WarmStart>,
) -> SolveReport {
    let canon = canonicalize(problem);
    let (n, m) = (canon.n, canon.m);
    let p_upper = hessian_upper(problem);
    let scaling = if settings.scaling_iters > 0 {
        scale::ruiz(
            n,
            m,
            &p_upper,
            &canon.a,
            &problem.linear,
            &canon.in_parab,
            settings.scaling_iters,
        )
    } else {
        Scaling::identity(n, m)
    };
    let Scaling { d, e, c } = &scaling;
    let c = *c;

    // Scaled data.
    let mut a_s = canon.a.clone();
    for col in 0..n {
        for p in a_s.col_ptr[col]..a_s.col_ptr[col + 1] {
            a_s.values[p] *= e[a_s.row_idx[p]] * d[col];
        }
    }
    let q_s: Vec<f64> = problem.linear.iter().zip(d).map(|(&q, &di)| c * q * di).collect();
    let p_upper_scaled: Vec<(usize, usize, f64)> =
        p_upper.iter().map(|&(i, j, v)| (i, j, c * d[i] * d[j] * v)).collect();
    let slo: Vec<f64> = canon.lo.iter().zip(e).map(|(&l, &ei)| l * ei).collect();
    let shi: Vec<f64> = canon.hi.iter().zip(e).map(|(&h, &ei)| h * ei).collect();

    // Scaled Hessian-vector product via the atoms: P_s x = c D P (D x).
    let p_matvec = |x_s: &[f64], out: &mut Vec<f64>, scratch: &mut Vec<f64>| {
        scratch.clear();
        scratch.extend(x_s.iter().zip(d).map(|(&x, &di)| x * di));
        out.clear();
        out.resize(n, 0.0);
        for a in &problem.atoms {
            a.add_grad(scratch, out);
        }
        for (o, &di) in out.iter_mut().zip(d) {
            *o *= c * di;
        }
    };

    let (_perm, inv_perm) = kkt_ordering(n, m, &p_upper_scaled, &a_s);
    let mut rho_base = settings.rho;
    let mut rho_vec = rho_vector(&canon, rho_base);
    let kkt = assemble_kkt(n, m, &p_upper_scaled, &a_s, &rho_vec, settings.sigma, &inv_perm);
    let mut sym = ldl::symbolic(&kkt);
    let mut fac = match ldl::factor(&mut sym, &kkt) {
        Ok(f) => f,
        Err(_) => {
            // Quasi-definiteness makes this unreachable for valid data; bail
            // out with a max-iterations report rather than panicking.
            return failure_report(problem, n, m, Status::MaxIterations);
        }
    };

    // Iterates (scaled space).
    let mut x = vec![0.0f64; n];
    let mut z = vec![0.0f64; m];
    let mut y = vec![0.0f64; m];
    if let Some(w) = warm {
        if w.x.len() == n && w.z.len() == m && w.y.len() == m {
            for i in 0..n {
                x[i] = w.x[i] / d[i];
            }
            for r in 0..m {
                z[r] = w.z[r] * e[r];
                y[r] = c * w.y[r] / e[r];
            }
        }
    }

    let mut x_prev = vec![0.0f64; n];
    let mut y_prev = vec![0.0f64; m];
    let mut rhs = vec![0.0f64; n + m];
    let mut rhs_perm = vec![0.0f64; n + m];
    let mut zcand = vec![0.0f64; m];
    let mut px = Vec::with_capacity(n);
    let mut scratch = Vec::with_capacity(n);
    let mut status = Status::MaxIterations;
    let mut iterations = settings.max_iter;
    let mut rho_updates = 0usize;
    // Earliest iteration allowed to refactor with a rebalanced step
    // parameter; doubles after each update so the tail cannot thrash
    // between two step sizes without ever settling.
    let mut next_adapt = settings.check_interval;
    let mut prim_res = f64::INFINITY;
    let mut dual_res = f64::INFINITY;

    for iter in 1..=settings.max_iter {
        x_prev.copy_from_slice(&x);
        y_prev.copy_from_slice(&y);

        // KKT solve for the affine step.
        for i in 0..n {
            rhs[i] = settings.sigma * x[i] - q_s[i];
        }
        for r in 0..m {
            rhs[n + r] = z[r] - y[r] / rho_vec[r];
        }
        for i in 0..n + m {
            rhs_perm[inv_perm[i]] = rhs[i];
        }
        fac.solve(&mut rhs_perm);
        for i in 0..n + m {
            rhs[i] = rhs_perm[inv_perm[i]];
        }
        let alpha = settings.alpha;
        for i in 0..n {
            x[i] = alpha * rhs[i] + (1.0 - alpha) * x[i];
        }
        for r in 0..m {
            // z_hat = z + (nu - y) / rho, relaxed and shifted by y / rho.
            let z_hat = z[r] + (rhs[n + r] - y[r]) / rho_vec[r];
            zcand[r] = alpha * z_hat + (1.0 - alpha) * z[r] + y[r] / rho_vec[r];
            z[r] = zcand[r];
        }
        project(&canon, &slo, &shi, &mut z);
        for r in 0..m {
            // Moreau identity: zcand already carries the y / rho shift.
            y[r] = rho_vec[r] * (zcand[r] - z[r]);
        }

        let last = iter == settings.max_iter;
        if iter % settings.check_interval != 0 && !last {
            continue;
        }

        // Unscaled residuals.
        let mut ax = vec![0.0f64; m];
        a_s.mul_add(&x, &mut ax);
        p_matvec(&x, &mut px, &mut scratch);
        let mut aty = vec![0.0f64; n];
        a_s.mul_t_add(&y, &mut aty);
        let mut rp: f64 = 0.0;
        let mut ax_n: f64 = 0.0;
        let mut z_n: f64 = 0.0;
        for r in 0..m {
            rp = rp.max(((ax[r] - z[r]) / e[r]).abs());
            ax_n = ax_n.max((ax[r] / e[r]).abs());
            z_n = z_n.max((z[r] / e[r]).abs());
        }
        let mut rd: f64 = 0.0;
        let mut px_n: f64 = 0.0;
        let mut aty_n: f64 = 0.0;
        for i in 0..n {
            let unscale = 1.0 / (c * d[i]);
            rd = rd.max(((px[i] + q_s[i] + aty[i]) * unscale).abs());
            px_n = px_n.max((px[i] * unscale).abs());
            aty_n = aty_n.max((aty[i] * unscale).abs());
        }
        let q_n = inf_norm(&problem.linear);
        let eps_prim = settings.eps_abs + settings.eps_rel * ax_n.max(z_n);
        let eps_dual = settings.eps_abs + settings.eps_rel * px_n.max(aty_n).max(q_n);
        prim_res = rp;
        dual_res = rd;
        if rp <= eps_prim && rd <= eps_dual {
            status = Status::Optimal;
            iterations = iter;
            break;
        }

        // Infeasibility certificates from one-step differences.
        let dy: Vec<f64> = (0..m).map(|r| (y[r] - y_prev[r]) * e[r] / c).collect();
        let dy_norm = inf_norm(&dy);
        if dy_norm > 0.0 {
            let mut atdy = vec![0.0f64; n];
            canon.a.mul_t_add(&dy, &mut atdy);
            if inf_norm(&atdy) <= settings.eps_pinf * dy_norm {
                let sup = support_function(&canon, &dy, settings.eps_pinf * dy_norm);
                if sup.finite && sup.value <= -settings.eps_pinf * dy_norm {
                    status = Status::PrimalInfeasible;
                    iterations = iter;
                    break;
                }
            }
        }
        let dx: Vec<f64> = (0..n).map(|i| (x[i] - x_prev[i]) * d[i]).collect();
        let dx_norm = inf_norm(&dx);
        if dx_norm > 0.0 {
            let mut pdx = vec![0.0f64; n];
            for a in &problem.atoms {
                a.add_grad(&dx, &mut pdx);
            }
            let qdx: f64 = problem.linear.iter().zip(&dx).map(|(&q, &v)| q * v).sum();
            if inf_norm(&pdx) <= settings.eps_dinf * dx_norm
                && qdx <= -settings.eps_dinf * dx_norm
            {
                let mut adx = vec![0.0f64; m];
                canon.a.mul_add(&dx, &mut adx);
                let tiny = settings.eps_dinf * dx_norm;
                let mut recession = true;
                for r in 0..m {
                    let ok = if canon.in_parab[r] {
                        match canon.tags[r] {
                            RowTag::AtomOf(_) => adx[r].abs() <= tiny,
                            _ => adx[r] <= tiny,
                        }
                    } else {
                        (!canon.hi[r].is_finite() || adx[r] <= tiny)
                            && (!canon.lo[r].is_finite() || adx[r] >= -tiny)
                    };
                    if !ok {
                        recession = false;
                        break;
                    }
                }
                if recession {
                    status = Status::DualInfeasible;
                    iterations = iter;
                    break;
                }
            }
        }

        // Adaptive step parameter: balance the normalized residuals.
        if settings.adaptive_rho && !last && iter >= next_adapt {
            let p_ratio = rp / eps_prim.max(1e-30);
            let d_ratio = rd / eps_dual.max(1e-30);
            let factor = (p_ratio / d_ratio.max(1e-30)).sqrt();
            let new_rho = (rho_base * factor).clamp(1e-6, 1e6);
            if (new_rho / rho_base).max(rho_base / new_rho) > 5.0 {
                let old_rho = rho_base;
                rho_base = new_rho;
                for (r, &eq) in canon.is_eq.iter().enumerate() {
                    rho_vec[r] = if eq { new_rho * 1e3 } else { new_rho };
                }
                let kkt2 =
                    assemble_kkt(n, m, &p_upper_scaled, &a_s, &rho_vec, settings.sigma, &inv_perm);
                match ldl::factor(&mut sym, &kkt2) {
                    Ok(f) => {
                        fac = f;
                        rho_updates += 1;
                        let gap = settings
                            .check_interval
                            .saturating_mul(1usize << rho_updates.min(32));
                        next_adapt = iter.saturating_add(gap);
                    }
                    Err(_) => {
                        // Keep the previous factorization.
                        rho_base = old_rho;
                        for (r, &eq) in canon.is_eq.iter().enumerate() {
                            rho_vec[r] = if eq { old_rho * 1e3 } else { old_rho };
                        }
                    }
                }
            }
        }
    }

    // Unscale and assemble the report.
    let x_true: Vec<f64> = x.iter().zip(d).map(|(&xi, &di)| xi * di).collect();
    let z_true: Vec<f64> = z.iter().zip(e).map(|(&zi, &ei)| zi / ei).collect();
    let y_true: Vec<f64> = y.iter().zip(e).map(|(&yi, &ei)| yi * ei / c).collect();
    let mut y_user = vec![0.0f64; problem.rows.len()];
    let mut ybound = vec![0.0f64; n];
    for (r, tag) in canon.tags.iter().enumerate() {
        match *tag {
            RowTag::User(u) => y_user[u] = y_true[r],
            RowTag::Bound(v) => ybound[v] = y_true[r],
            RowTag::AtomOf(_) => {}
        }
    }
    let mut report = SolveReport {
        status,
        objective: problem.objective_value(&x_true),
        x: x_true,
        y: y_user,
        ybound,
        iterations,
        primal_residual: prim_res,
        dual_residual: dual_res,
        polished: false,
        rho_updates,
        z_internal: z_true,
        y_internal: y_true,
    };
    if report.status == Status::Optimal && settings.polish {
        polish::try_polish(problem, &mut report);
    }
    report
}

fn failure_report(problem: &ConvexProblem, n: usize, m: usize, status: Status) -> SolveReport {
    SolveReport {
        status,
        x: vec![0.0; n],
        y: vec![0.0; problem.rows.len()],
        ybound: vec![0.0; n],
        objective: f64::NAN,
        iterations: 0,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        polished: false,
        rho_updates: 0,
        z_internal: vec![0.0; m],
        y_internal: vec![0.0; m],
    }
}
