//! Sparse LDL^T factorization of a quasi-definite symmetric matrix given in
//! upper-triangular CSC form (diagonal entries must be present). Up-looking
//! factorization with an elimination-tree symbolic phase that is computed
//! once per sparsity pattern and reused across numeric refactorizations.
//! No pivoting: quasi-definiteness guarantees nonzero pivots in exact
//! arithmetic, and callers regularize to keep them nonzero in floating point.

use crate::csc::Csc;

pub struct Symbolic {
    n: usize,
    parent: Vec<isize>,
    l_col_ptr: Vec<usize>,
    // Work arrays sized once and reused by every numeric factorization.
    flag: Vec<usize>,
    pattern: Vec<usize>,
    l_next: Vec<usize>,
    y: Vec<f64>,
}

pub struct Numeric {
    pub n: usize,
    pub l_col_ptr: Vec<usize>,
    pub l_row_idx: Vec<usize>,
    pub l_values: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Debug)]
pub struct ZeroPivot(pub usize);

impl std::fmt::Display for ZeroPivot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "zero pivot at column {}", self.0)
    }
}

/// Elimination tree and column counts of the factor of `a` (upper CSC).
pub fn symbolic(a: &Csc) -> Symbolic {
    let n = a.n_cols;
    let mut parent = vec![-1isize; n];
    let mut l_nz = vec![0usize; n];
    let mut flag = vec![usize::MAX; n];
    for k in 0..n {
        flag[k] = k;
        for p in a.col_ptr[k]..a.col_ptr[k + 1] {
            let mut i = a.row_idx[p];
            if i >= k {
                continue;
            }
            // Climb the elimination tree; every node passed contributes a
            // nonzero L(k, i), i.e. an entry in column i of L.
            while flag[i] != k {
                if parent[i] == -1 {
                    parent[i] = k as isize;
                }
                l_nz[i] += 1;
                flag[i] = k;
                i = parent[i] as usize;
            }
        }
    }
    let mut l_col_ptr = vec![0usize; n + 1];
    for k in 0..n {
        l_col_ptr[k + 1] = l_col_ptr[k] + l_nz[k];
    }
    Symbolic {
        n,
        parent,
        l_col_ptr,
        flag: vec![usize::MAX; n],
        pattern: vec![0usize; n],
        l_next: vec![0usize; n],
        y: vec![0.0; n],
    }
}

/// Numeric factorization of `a`, which must have the pattern the symbolic
/// phase was computed from.
pub fn factor(sym: &mut Symbolic, a: &Csc) -> Result<Numeric, ZeroPivot> {
    let Symbolic {
        n,
        ref parent,
        ref l_col_ptr,
        ref mut flag,
        ref mut pattern,
        ref mut l_next,
        ref mut y,
    } = *sym;
    let nnz = l_col_ptr[n];
    let mut l_row_idx = vec![0usize; nnz];
    let mut l_values = vec![0.0f64; nnz];
    let mut d = vec![0.0f64; n];
    for k in 0..n {
        // Gather the pattern of row k of L in topological order while
        // scattering column k of A into the dense work vector.
        y[k] = 0.0;
        let mut top = n;
        flag[k] = k;
        l_next[k] = 0;
        for p in a.col_ptr[k]..a.col_ptr[k + 1] {
            let i0 = a.row_idx[p];
            if i0 > k {
                continue;
            }
            y[i0] += a.values[p];
            let mut len = 0usize;
            let mut i = i0;
            while flag[i] != k {
                pattern[len] = i;
                len += 1;
                flag[i] = k;
                i = parent[i] as usize;
            }
            // Reverse the freshly collected path onto the stack tail; the
            // two regions never overlap because row patterns have < n
            // entries in total.
            while len > 0 {
                len -= 1;
                top -= 1;
                pattern[top] = pattern[len];
            }
        }
        // Sparse triangular solve for row k of L.
        let mut dk = y[k];
        y[k] = 0.0;
        for s in top..n {
            let j = pattern[s];
            let yj = y[j];
            y[j] = 0.0;
            let p_start = l_col_ptr[j];
            let p_end = p_start + l_next[j];
            for p in p_start..p_end {
                y[l_row_idx[p]] -= l_values[p] * yj;
            }
            let l_kj = yj / d[j];
            dk -= l_kj * yj;
            l_row_idx[p_end] = k;
            l_values[p_end] = l_kj;
            l_next[j] += 1;
        }
        if dk == 0.0 || !dk.is_finite() {
            return Err(ZeroPivot(k));
        }
        d[k] = dk;
    }
    Ok(Numeric {
        n,
        l_col_ptr: l_col_ptr.clone(),
        l_row_idx,
        l_values,
        d,
    })
}

impl Numeric {
    /// Solves `L D L' x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let xj = b[j];
            if xj != 0.0 {
                for p in self.l_col_ptr[j]..self.l_col_ptr[j + 1] {
                    b[self.l_row_idx[p]] -= self.l_values[p] * xj;
                }
            }
        }
        for j in 0..n {
            b[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut xj = b[j];
            for p in self.l_col_ptr[j]..self.l_col_ptr[j + 1] {
                xj -= self.l_values[p] * b[self.l_row_idx[p]];
            }
            b[j] = xj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_and_solves_spd_system() {
        // A = [4 1 0; 1 3 1; 0 1 2], upper CSC triplets.
        let trips = [
            (0usize, 0usize, 4.0),
            (0, 1, 1.0),
            (1, 1, 3.0),
            (1, 2, 1.0),
            (2, 2, 2.0),
        ];
        let a = Csc::from_triplets(3, 3, &trips);
        let mut sym = symbolic(&a);
        let fac = factor(&mut sym, &a).unwrap();
        let mut b = vec![1.0, 2.0, 3.0];
        fac.solve(&mut b);
        // Verify A x = rhs.
        let full = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let rhs = [1.0, 2.0, 3.0];
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| full[i][j] * b[j]).sum();
            assert!((ax - rhs[i]).abs() < 1e-12, "row {}: {} vs {}", i, ax, rhs[i]);
        }
    }

    #[test]
    fn factors_quasi_definite_system() {
        // [2 0 1; 0 2 1; 1 1 -1]: upper CSC.
        let trips = [
            (0usize, 0usize, 2.0),
            (1, 1, 2.0),
            (0, 2, 1.0),
            (1, 2, 1.0),
            (2, 2, -1.0),
        ];
        let a = Csc::from_triplets(3, 3, &trips);
        let mut sym = symbolic(&a);
        let fac = factor(&mut sym, &a).unwrap();
        assert!(fac.d.iter().any(|&d| d < 0.0));
        let mut b = vec![3.0, 3.0, 0.0];
        fac.solve(&mut b);
        let full = [[2.0, 0.0, 1.0], [0.0, 2.0, 1.0], [1.0, 1.0, -1.0]];
        let rhs = [3.0, 3.0, 0.0];
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| full[i][j] * b[j]).sum();
            assert!((ax - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reuses_symbolic_across_refactors() {
        let mut trips = vec![
            (0usize, 0usize, 4.0),
            (0, 1, 1.0),
            (1, 1, 3.0),
            (1, 2, 1.0),
            (2, 2, 2.0),
        ];
        let a = Csc::from_triplets(3, 3, &trips);
        let mut sym = symbolic(&a);
        let f1 = factor(&mut sym, &a).unwrap();
        for t in trips.iter_mut() {
            t.2 *= 2.0;
        }
        let a2 = Csc::from_triplets(3, 3, &trips);
        let f2 = factor(&mut sym, &a2).unwrap();
        // Same pattern, scaled pivots.
        assert_eq!(f1.l_col_ptr, f2.l_col_ptr);
        for (d1, d2) in f1.d.iter().zip(&f2.d) {
            assert!((2.0 * d1 - d2).abs() < 1e-12);
        }
    }
}
