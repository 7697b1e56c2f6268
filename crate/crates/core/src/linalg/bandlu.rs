//! Direct solver for the complex frequency-domain system.
//!
//! The complex matrix `A_re + i A_im` is rewritten as the equivalent real
//! block system and factorized with real arithmetic. A reverse Cuthill-McKee
//! reordering is applied first and the real/imaginary unknowns of each node
//! are interleaved, which keeps the block system banded with twice the nodal
//! bandwidth; the band is then factorized by LU with partial pivoting
//! (LAPACK-style band storage).

use super::sparse::{ComplexField, SparseOperator};
use crate::error::{Error, Result};

/// Factorized complex operator.
pub struct ComplexLu {
    n: usize,
    perm: Vec<usize>, // new position -> old node
    band: BandLu,
}

impl ComplexLu {
    /// Factorize `A_re + i A_im`. Both operators share the dimension; the
    /// sparsity patterns may differ.
    pub fn factorize(a_re: &SparseOperator, a_im: &SparseOperator) -> Result<Self> {
        let n = a_re.n();
        if a_im.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a_im.n(),
            });
        }
        let adj = union_adjacency(a_re, a_im);
        let perm = reverse_cuthill_mckee(&adj);
        let mut pos = vec![0usize; n];
        for (p, &old) in perm.iter().enumerate() {
            pos[old] = p;
        }

        // Nodal half-bandwidth after permutation.
        let mut bw = 0usize;
        for (i, nbrs) in adj.iter().enumerate() {
            for &j in nbrs {
                bw = bw.max(pos[i].abs_diff(pos[j]));
            }
        }
        // Interleaved (re, im) unknowns: entries couple 2p and 2q+1.
        let kband = 2 * bw + 1;
        let mut band = BandLu::zeros(2 * n, kband, kband);

        let mut scatter = |op: &SparseOperator, re_part: bool| {
            for i in 0..n {
                let (cols, vals) = op.row(i);
                for (j, v) in cols.iter().zip(vals) {
                    let (pi, pj) = (2 * pos[i], 2 * pos[*j]);
                    if re_part {
                        // [[A_re, .], [., A_re]]
                        band.add(pi, pj, *v);
                        band.add(pi + 1, pj + 1, *v);
                    } else {
                        // [[., -A_im], [A_im, .]]
                        band.add(pi, pj + 1, -*v);
                        band.add(pi + 1, pj, *v);
                    }
                }
            }
        };
        scatter(a_re, true);
        scatter(a_im, false);

        band.factorize()?;
        Ok(ComplexLu { n, perm, band })
    }

    pub fn solve(&self, b: &ComplexField) -> Result<ComplexField> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        let mut rhs = vec![0.0; 2 * self.n];
        for (p, &old) in self.perm.iter().enumerate() {
            rhs[2 * p] = b.re[old];
            rhs[2 * p + 1] = b.im[old];
        }
        self.band.solve(&mut rhs);
        let mut x = ComplexField::zeros(self.n);
        for (p, &old) in self.perm.iter().enumerate() {
            x.re[old] = rhs[2 * p];
            x.im[old] = rhs[2 * p + 1];
        }
        Ok(x)
    }
}

/// Factorize and solve in one call.
pub fn complex_lu_solve(
    a_re: &SparseOperator,
    a_im: &SparseOperator,
    b: &ComplexField,
) -> Result<ComplexField> {
    ComplexLu::factorize(a_re, a_im)?.solve(b)
}

fn union_adjacency(a: &SparseOperator, b: &SparseOperator) -> Vec<Vec<usize>> {
    let n = a.n();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        let (ca, _) = a.row(i);
        let (cb, _) = b.row(i);
        let mut nbrs: Vec<usize> = ca.iter().chain(cb.iter()).copied().collect();
        nbrs.sort_unstable();
        nbrs.dedup();
        adj[i] = nbrs;
    }
    adj
}

/// Reverse Cuthill-McKee node ordering. Returns `perm[new] = old`.
fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        // Lowest-degree unvisited node seeds the next component.
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| adj[i].len());
        let Some(start) = start else { break };
        visited[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| adj[v].len());
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Band matrix in LAPACK storage with `kl` sub- and `ku` superdiagonals
/// plus `kl` fill-in rows for pivoting.
struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Column-major: entry (i, j) at data[j * ldab + (kl + ku + i - j)].
    data: Vec<f64>,
    ldab: usize,
    ipiv: Vec<usize>,
    factorized: bool,
}

impl BandLu {
    fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandLu {
            n,
            kl,
            ku,
            data: vec![0.0; ldab * n],
            ldab,
            ipiv: vec![0; n],
            factorized: false,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + self.ku + self.kl >= j && i <= j + self.kl);
        j * self.ldab + (self.kl + self.ku + i - j)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// LU with partial pivoting; the upper bandwidth grows to `kl + ku`.
    fn factorize(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let kv = kl + ku; // working upper bandwidth
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // Partial pivot among rows j..=j+km.
            let mut p = 0;
            let mut pmax = self.data[self.idx(j, j)].abs();
            for i in 1..=km {
                let v = self.data[self.idx(j + i, j)].abs();
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            if pmax == 0.0 {
                return Err(Error::Factorization(format!(
                    "singular pivot at column {j}"
                )));
            }
            self.ipiv[j] = j + p;
            if p > 0 {
                let hi = (j + kv).min(n - 1);
                for col in j..=hi {
                    let a = self.idx(j, col);
                    let b = self.idx(j + p, col);
                    self.data.swap(a, b);
                }
            }
            let piv = self.data[self.idx(j, j)];
            for i in 1..=km {
                let k = self.idx(j + i, j);
                self.data[k] /= piv;
            }
            let hi = (j + kv).min(n - 1);
            for col in (j + 1)..=hi {
                let ajc = self.data[self.idx(j, col)];
                if ajc != 0.0 {
                    for i in 1..=km {
                        let l = self.data[self.idx(j + i, j)];
                        let k = self.idx(j + i, col);
                        self.data[k] -= l * ajc;
                    }
                }
            }
        }
        self.factorized = true;
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        assert!(self.factorized);
        assert_eq!(b.len(), self.n);
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let kv = kl + ku;
        for j in 0..n.saturating_sub(1) {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            for i in 1..=km {
                b[j + i] -= self.data[self.idx(j + i, j)] * b[j];
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.data[self.idx(j, j)];
            let lo = j.saturating_sub(kv);
            for i in lo..j {
                b[i] -= self.data[self.idx(i, j)] * b[j];
            }
        }
    }
}
