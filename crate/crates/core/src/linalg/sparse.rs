//! Compressed-row sparse operators and complex DOF fields.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Symmetric sparse real operator in compressed-row layout.
///
/// Symmetry is guaranteed by the assembly path: element matrices are
/// symmetric and both triangles accumulate the identical sequence of
/// contributions, so `A == A^T` bitwise. Entries that sum to exactly zero
/// are dropped.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn identity(n: usize) -> Self {
        SparseOperator {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut b = TripletBuilder::new(d.len());
        for (i, &v) in d.iter().enumerate() {
            b.add(i, i, v);
        }
        b.build()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if *c == i {
                    d[i] = *v;
                }
            }
        }
        d
    }

    /// `y = A x`, row-parallel. Each row is reduced sequentially by one
    /// thread, so the result is bitwise independent of the thread count.
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n, "spmv: dimension mismatch");
        assert_eq!(y.len(), self.n, "spmv: dimension mismatch");
        // Parallelism only pays off past a few thousand rows.
        if self.n < 4096 {
            for i in 0..self.n {
                y[i] = self.row_dot(i, x);
            }
        } else {
            let row_ptr = &self.row_ptr;
            let col_idx = &self.col_idx;
            let vals = &self.vals;
            y.par_iter_mut().enumerate().for_each(|(i, yi)| {
                let mut s = 0.0;
                for k in row_ptr[i]..row_ptr[i + 1] {
                    s += vals[k] * x[col_idx[k]];
                }
                *yi = s;
            });
        }
    }

    #[inline]
    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            s += self.vals[k] * x[self.col_idx[k]];
        }
        s
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.spmv(x, &mut y);
        y
    }

    /// `x^T A y` (sequential reduction).
    pub fn quadratic_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            s += x[i] * self.row_dot(i, y);
        }
        s
    }

    /// Checked spmv for external callers.
    pub fn try_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(self.apply(x))
    }

    /// Extract the principal submatrix on `keep[i] == true` rows/columns.
    /// Returns the submatrix and the old->new index map.
    pub fn restrict(&self, keep: &[bool]) -> (SparseOperator, Vec<Option<usize>>) {
        assert_eq!(keep.len(), self.n);
        let mut map = vec![None; self.n];
        let mut m = 0;
        for i in 0..self.n {
            if keep[i] {
                map[i] = Some(m);
                m += 1;
            }
        }
        let mut b = TripletBuilder::new(m);
        for i in 0..self.n {
            let Some(ni) = map[i] else { continue };
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if let Some(nc) = map[*c] {
                    b.add(ni, nc, *v);
                }
            }
        }
        (b.build(), map)
    }

    /// Weighted sum of operators with a common dimension.
    pub fn linear_combination(terms: &[(f64, &SparseOperator)]) -> SparseOperator {
        assert!(!terms.is_empty());
        let n = terms[0].1.n();
        let mut b = TripletBuilder::new(n);
        for (coef, op) in terms {
            assert_eq!(op.n(), n);
            for i in 0..n {
                let (cols, vals) = op.row(i);
                for (c, v) in cols.iter().zip(vals) {
                    b.add(i, *c, coef * v);
                }
            }
        }
        b.build()
    }

    /// Max-norm of `A - A^T`; zero for all assembled operators.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let mut vt = 0.0;
                let (tc, tv) = self.row(*c);
                for (cc, vv) in tc.iter().zip(tv) {
                    if *cc == i {
                        vt = *vv;
                    }
                }
                worst = worst.max((v - vt).abs());
            }
        }
        worst
    }
}

/// Accumulates (i, j, v) triplets and compresses them into CSR.
///
/// Duplicate entries are summed in insertion order per (i, j) pair, which
/// keeps the two triangles of a symmetric assembly bitwise identical.
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder {
            n,
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, v));
    }

    pub fn build(mut self) -> SparseOperator {
        // Stable sort preserves insertion order within each (i, j) group.
        self.entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        let mut k = 0;
        for i in 0..self.n {
            while k < self.entries.len() && self.entries[k].0 == i {
                let j = self.entries[k].1;
                let mut s = 0.0;
                while k < self.entries.len() && self.entries[k].0 == i && self.entries[k].1 == j {
                    s += self.entries[k].2;
                    k += 1;
                }
                if s != 0.0 {
                    col_idx.push(j);
                    vals.push(s);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        SparseOperator {
            n: self.n,
            row_ptr,
            col_idx,
            vals,
        }
    }
}

/// Paired real/imaginary values over the DOFs of a discrete field.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexField {
    pub fn zeros(n: usize) -> Self {
        ComplexField {
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Self {
        assert_eq!(re.len(), im.len());
        ComplexField { re, im }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn norm2(&self) -> f64 {
        (super::dot(&self.re, &self.re) + super::dot(&self.im, &self.im)).sqrt()
    }

    pub fn sub(&self, other: &ComplexField) -> ComplexField {
        assert_eq!(self.len(), other.len());
        ComplexField {
            re: self.re.iter().zip(&other.re).map(|(a, b)| a - b).collect(),
            im: self.im.iter().zip(&other.im).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add_scalar(&mut self, re: f64, im: f64) {
        for v in &mut self.re {
            *v += re;
        }
        for v in &mut self.im {
            *v += im;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spmv_returns_input() {
        let a = SparseOperator::identity(7);
        let x: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        assert_eq!(a.apply(&x), x);
    }

    #[test]
    fn spmv_reproduces_columns() {
        // Pattern test: A e_i is column i.
        let mut b = TripletBuilder::new(4);
        let dense = [
            [2.0, -1.0, 0.0, 0.0],
            [-1.0, 2.0, -1.0, 0.0],
            [0.0, -1.0, 2.0, -1.0],
            [0.0, 0.0, -1.0, 2.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                if dense[i][j] != 0.0 {
                    b.add(i, j, dense[i][j]);
                }
            }
        }
        let a = b.build();
        for j in 0..4 {
            let mut e = vec![0.0; 4];
            e[j] = 1.0;
            let col = a.apply(&e);
            for i in 0..4 {
                assert_eq!(col[i], dense[i][j]);
            }
        }
    }

    #[test]
    fn duplicate_triplets_are_summed_and_zeros_dropped() {
        let mut b = TripletBuilder::new(2);
        b.add(0, 0, 1.5);
        b.add(0, 0, 2.5);
        b.add(0, 1, 1.0);
        b.add(0, 1, -1.0); // cancels exactly -> dropped
        b.add(1, 1, 3.0);
        let a = b.build();
        assert_eq!(a.nnz(), 2);
        let (cols, vals) = a.row(0);
        assert_eq!(cols, &[0]);
        assert_eq!(vals, &[4.0]);
    }

    #[test]
    fn random_spmv_matches_dense_oracle() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        // Random SPD-ish symmetric matrix: diagonally dominant.
        let mut dense = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < 0.15 {
                    let v = rng.gen::<f64>() - 0.5;
                    dense[i][j] = v;
                    dense[j][i] = v;
                }
            }
        }
        for (i, row) in dense.iter_mut().enumerate() {
            let off: f64 = row.iter().map(|v| v.abs()).sum();
            row[i] = off + 1.0;
        }
        let mut b = TripletBuilder::new(n);
        for i in 0..n {
            for j in 0..n {
                if dense[i][j] != 0.0 {
                    b.add(i, j, dense[i][j]);
                }
            }
        }
        let a = b.build();
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let y = a.apply(&x);
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += dense[i][j] * x[j];
            }
            assert!((y[i] - s).abs() < 1e-13, "row {i}: {} vs {}", y[i], s);
        }
        assert_eq!(a.asymmetry(), 0.0);
    }
}
