//! Minimal compressed-sparse-column matrix used for the constraint matrix
//! and the KKT system. Column-major, rows sorted within each column,
//! duplicate entries summed at construction.

#[derive(Debug, Clone)]
pub struct Csc {
    pub n_rows: usize,
    pub n_cols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csc {
    pub fn from_triplets(n_rows: usize, n_cols: usize, trips: &[(usize, usize, f64)]) -> Csc {
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_cols];
        for &(r, c, v) in trips {
            debug_assert!(r < n_rows && c < n_cols);
            by_col[c].push((r, v));
        }
        let mut col_ptr = Vec::with_capacity(n_cols + 1);
        let mut row_idx = Vec::with_capacity(trips.len());
        let mut values = Vec::with_capacity(trips.len());
        col_ptr.push(0);
        for col in &mut by_col {
            col.sort_by_key(|&(r, _)| r);
            let mut i = 0;
            while i < col.len() {
                let r = col[i].0;
                let mut v = col[i].1;
                let mut j = i + 1;
                while j < col.len() && col[j].0 == r {
                    v += col[j].1;
                    j += 1;
                }
                row_idx.push(r);
                values.push(v);
                i = j;
            }
            col_ptr.push(row_idx.len());
        }
        Csc { n_rows, n_cols, col_ptr, row_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// `out += self * x`
    pub fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_rows);
        for c in 0..self.n_cols {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                out[self.row_idx[p]] += self.values[p] * xc;
            }
        }
    }

    /// `out += self' * y`
    pub fn mul_t_add(&self, y: &[f64], out: &mut [f64]) {
        for c in 0..self.n_cols {
            let mut acc = 0.0;
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                acc += self.values[p] * y[self.row_idx[p]];
            }
            out[c] += acc;
        }
    }

}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}
