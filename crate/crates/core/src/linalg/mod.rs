//! Sparse symmetric operators, vectors, and the linear solvers used by the
//! controllability loop: preconditioned CG for SPD systems and a real banded
//! LU factorization of the complex frequency-domain system.

mod bandlu;
mod pcg;
mod sparse;

pub use bandlu::{complex_lu_solve, ComplexLu};
pub use pcg::{pcg, PcgOptions, PcgResult};
pub use sparse::{ComplexField, SparseOperator, TripletBuilder};

/// Euclidean dot product with sequential accumulation.
///
/// Reduction order is fixed so results are bitwise reproducible regardless
/// of thread count (parallelism lives in the spmv row partitioning only).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
