//! Ruiz equilibration of the stacked data matrix `[P A'; A 0]` plus a scalar
//! cost scaling. Rows belonging to paraboloid groups keep a unit row scale so
//! their constraint-space iterates stay in true units (the projection set is
//! not scale-invariant); their entries still participate in column norms.

use crate::csc::{inf_norm, Csc};

pub(crate) struct Scaling {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub c: f64,
}

const NORM_FLOOR: f64 = 1e-8;
const NORM_CEIL: f64 = 1e8;

fn clamp_norm(x: f64) -> f64 {
    x.clamp(NORM_FLOOR, NORM_CEIL)
}

/// `p_upper` holds the upper triangle of the objective Hessian as triplets.
pub(crate) fn ruiz(
    n: usize,
    m: usize,
    p_upper: &[(usize, usize, f64)],
    a: &Csc,
    q: &[f64],
    in_parab: &[bool],
    iters: usize,
) -> Scaling {
    let mut d = vec![1.0f64; n];
    let mut e = vec![1.0f64; m];
    for _ in 0..iters {
        // Column norms over the scaled [P; A].
        let mut cn = vec![0.0f64; n];
        for &(i, j, v) in p_upper {
            let s = (d[i] * d[j] * v).abs();
            cn[j] = cn[j].max(s);
            cn[i] = cn[i].max(s);
        }
        for col in 0..n {
            for p in a.col_ptr[col]..a.col_ptr[col + 1] {
                let r = a.row_idx[p];
                cn[col] = cn[col].max((e[r] * d[col] * a.values[p]).abs());
            }
        }
        // Row norms over the scaled A.
        let mut rn = vec![0.0f64; m];
        for col in 0..n {
            for p in a.col_ptr[col]..a.col_ptr[col + 1] {
                let r = a.row_idx[p];
                rn[r] = rn[r].max((e[r] * d[col] * a.values[p]).abs());
            }
        }
        for j in 0..n {
            if cn[j] > 0.0 {
                d[j] /= clamp_norm(cn[j]).sqrt();
            }
        }
        for r in 0..m {
            if !in_parab[r] && rn[r] > 0.0 {
                e[r] /= clamp_norm(rn[r]).sqrt();
            }
        }
    }
    // Scalar cost normalization from the scaled objective data.
    let mut col_max = vec![0.0f64; n];
    for &(i, j, v) in p_upper {
        let s = (d[i] * d[j] * v).abs();
        col_max[j] = col_max[j].max(s);
        col_max[i] = col_max[i].max(s);
    }
    let mean_p = if n > 0 {
        col_max.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let qd: Vec<f64> = q.iter().zip(&d).map(|(&qi, &di)| qi * di).collect();
    let denom = mean_p.max(inf_norm(&qd));
    let c = if denom > 0.0 { 1.0 / clamp_norm(denom) } else { 1.0 };
    Scaling { d, e, c }
}

impl Scaling {
    pub(crate) fn identity(n: usize, m: usize) -> Scaling {
        Scaling { d: vec![1.0; n], e: vec![1.0; m], c: 1.0 }
    }
}
