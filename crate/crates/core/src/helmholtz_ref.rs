//! Frequency-domain reference: assemble `A = K - omega^2 M - i omega B` on
//! the free DOFs with Dirichlet lifting folded into the right-hand side,
//! solve it directly, and report the Helmholtz residual of a candidate
//! field. The non-lumped variant is the honest Galerkin matrix used by the
//! residual diagnostic; the lumped variant matches the wave steppers for
//! semi-discrete comparisons.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_boundary_mass, assemble_boundary_mass_consistent, assemble_mass_consistent,
    assemble_mass_lumped, assemble_stiffness, assemble_time_harmonic_loads, dirichlet_values,
    FeSpace, HelmholtzProblem,
};
use crate::linalg::{complex_lu_solve, ComplexField, SparseOperator};

pub struct HelmholtzSystem {
    /// Real part `K - omega^2 M` restricted to free DOFs.
    pub a_re: SparseOperator,
    /// Imaginary part `-omega B` restricted to free DOFs.
    pub a_im: SparseOperator,
    /// Right-hand side on free DOFs, Dirichlet lifting included.
    pub b: ComplexField,
    pub lumped: bool,
    free_map: Vec<Option<usize>>,
    dirichlet_re: Vec<f64>,
    dirichlet_im: Vec<f64>,
    n_full: usize,
}

/// Assemble the discrete Helmholtz system for the given space and data.
pub fn assemble_helmholtz(
    space: &FeSpace,
    problem: &HelmholtzProblem,
    lumped: bool,
) -> Result<HelmholtzSystem> {
    let c_elem = problem.c.per_element(&space.mesh)?;
    let inv_c2: Vec<f64> = c_elem.iter().map(|c| 1.0 / (c * c)).collect();
    let k = assemble_stiffness(space);
    let m = if lumped {
        SparseOperator::from_diagonal(&assemble_mass_lumped(space, &inv_c2)?)
    } else {
        assemble_mass_consistent(space, &inv_c2)
    };
    let b_op = if lumped {
        SparseOperator::from_diagonal(&assemble_boundary_mass(space, &c_elem))
    } else {
        assemble_boundary_mass_consistent(space, &c_elem)
    };
    let omega = problem.omega;
    let a_full_re =
        SparseOperator::linear_combination(&[(1.0, &k), (-omega * omega, &m)]);
    let a_full_im = SparseOperator::linear_combination(&[(-omega, &b_op)]);

    let loads = assemble_time_harmonic_loads(space, problem);
    let (lre, lim) = loads.combined();
    let (gd_re, gd_im) = dirichlet_values(space, problem);

    let keep: Vec<bool> = space.dirichlet.iter().map(|d| !d).collect();
    let (a_re, free_map) = a_full_re.restrict(&keep);
    let (a_im, _) = a_full_im.restrict(&keep);

    // b_free = L_free - A[free, constrained] * g_D.
    let n_free = a_re.n();
    let mut b = ComplexField::zeros(n_free);
    for d in 0..space.n_dofs {
        let Some(fd) = free_map[d] else { continue };
        b.re[fd] = lre[d];
        b.im[fd] = lim[d];
    }
    for d in 0..space.n_dofs {
        let Some(fd) = free_map[d] else { continue };
        for (op, sign_im) in [(&a_full_re, false), (&a_full_im, true)] {
            let (cols, vals) = op.row(d);
            for (c, v) in cols.iter().zip(vals) {
                if space.dirichlet[*c] {
                    let g = Complex64::new(gd_re[*c], gd_im[*c]);
                    let coupling = if sign_im {
                        Complex64::new(0.0, *v)
                    } else {
                        Complex64::new(*v, 0.0)
                    };
                    let contrib = coupling * g;
                    b.re[fd] -= contrib.re;
                    b.im[fd] -= contrib.im;
                }
            }
        }
    }

    Ok(HelmholtzSystem {
        a_re,
        a_im,
        b,
        lumped,
        free_map,
        dirichlet_re: gd_re,
        dirichlet_im: gd_im,
        n_full: space.n_dofs,
    })
}

impl HelmholtzSystem {
    /// Direct solve; the result carries the prescribed Dirichlet values on
    /// constrained DOFs.
    pub fn direct_solve(&self) -> Result<ComplexField> {
        let x_free = complex_lu_solve(&self.a_re, &self.a_im, &self.b).map_err(|e| match e {
            Error::Factorization(msg) => Error::Factorization(format!(
                "{msg}; omega^2 may sit on a discrete eigenvalue (resonance)"
            )),
            other => other,
        })?;
        let mut u = ComplexField::zeros(self.n_full);
        for d in 0..self.n_full {
            match self.free_map[d] {
                Some(fd) => {
                    u.re[d] = x_free.re[fd];
                    u.im[d] = x_free.im[fd];
                }
                None => {
                    u.re[d] = self.dirichlet_re[d];
                    u.im[d] = self.dirichlet_im[d];
                }
            }
        }
        Ok(u)
    }

    /// Relative Helmholtz residual `||A u - b||_2 / ||b||_2` of a full-DOF
    /// candidate field.
    pub fn residual(&self, u_full: &ComplexField) -> f64 {
        let n_free = self.a_re.n();
        let mut re = vec![0.0; n_free];
        let mut im = vec![0.0; n_free];
        for d in 0..self.n_full {
            if let Some(fd) = self.free_map[d] {
                re[fd] = u_full.re[d];
                im[fd] = u_full.im[d];
            }
        }
        // (A_re + i A_im)(re + i im) - b
        let mut rr = self.a_re.apply(&re);
        let t = self.a_im.apply(&im);
        for i in 0..n_free {
            rr[i] -= t[i] + self.b.re[i];
        }
        let mut ri = self.a_re.apply(&im);
        let t = self.a_im.apply(&re);
        for i in 0..n_free {
            ri[i] += t[i] - self.b.im[i];
        }
        let num = (crate::linalg::dot(&rr, &rr) + crate::linalg::dot(&ri, &ri)).sqrt();
        let den = self.b.norm2();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

/// Relative distance of `omega^2` to the nearest generalized eigenvalue of
/// `K x = lambda M x` (lumped mass), estimated by a short shift-invert
/// Lanczos recurrence around `omega^2`. Used to warn about resonance in
/// physically bounded (pure Neumann / pure Dirichlet) configurations where
/// the Helmholtz operator is real and can be singular. Returns 0 when the
/// shifted operator is numerically singular.
pub fn resonance_proximity(space: &FeSpace, problem: &HelmholtzProblem) -> Result<f64> {
    let c_elem = problem.c.per_element(&space.mesh)?;
    let inv_c2: Vec<f64> = c_elem.iter().map(|c| 1.0 / (c * c)).collect();
    let k = assemble_stiffness(space);
    let m = assemble_mass_lumped(space, &inv_c2)?;
    let keep: Vec<bool> = space.dirichlet.iter().map(|d| !d).collect();
    let (kf, map) = k.restrict(&keep);
    let mf: Vec<f64> = (0..space.n_dofs)
        .filter(|d| map[*d].is_some())
        .map(|d| m[d])
        .collect();
    let sigma = problem.omega * problem.omega;
    // Shifted operator K - sigma M, factorized once.
    let m_op = SparseOperator::from_diagonal(&mf);
    let shifted = SparseOperator::linear_combination(&[(1.0, &kf), (-sigma, &m_op)]);
    let zero_im = crate::linalg::TripletBuilder::new(shifted.n()).build();
    let lu = match crate::linalg::ComplexLu::factorize(&shifted, &zero_im) {
        Ok(lu) => lu,
        Err(_) => return Ok(0.0), // exactly on a discrete eigenvalue
    };
    let theta_max = shift_invert_lanczos(&lu, &mf, 20);
    if theta_max.abs() < 1e-300 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (sigma.max(1e-300) * theta_max.abs()))
}

/// Largest-magnitude Ritz value of `(K - sigma M)^{-1} M` in the M inner
/// product; its reciprocal is the distance from sigma to the nearest
/// eigenvalue.
fn shift_invert_lanczos(lu: &crate::linalg::ComplexLu, m_diag: &[f64], iters: usize) -> f64 {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let n = m_diag.len();
    if n == 0 {
        return 0.0;
    }
    let steps = iters.min(n);
    let m_dot = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(m_diag)
            .map(|((x, y), m)| x * y * m)
            .sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let nv = m_dot(&v, &v).sqrt();
    for x in &mut v {
        *x /= nv;
    }
    let mut basis = vec![v];
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    for j in 0..steps {
        let mv: Vec<f64> = basis[j].iter().zip(m_diag).map(|(x, m)| x * m).collect();
        let rhs = ComplexField::new(mv, vec![0.0; n]);
        let Ok(sol) = lu.solve(&rhs) else { break };
        let mut w = sol.re;
        let alpha = m_dot(&w, &basis[j]);
        alphas.push(alpha);
        // Full reorthogonalization against the M-orthonormal basis.
        for q in &basis {
            let c = m_dot(&w, q);
            for i in 0..n {
                w[i] -= c * q[i];
            }
        }
        let beta = m_dot(&w, &w).sqrt();
        if beta < 1e-14 || j + 1 == steps {
            break;
        }
        betas.push(beta);
        let next: Vec<f64> = w.iter().map(|x| x / beta).collect();
        basis.push(next);
    }
    tridiagonal_eigenvalues(&alphas, &betas)
        .into_iter()
        .fold(0.0f64, |acc, t| if t.abs() > acc.abs() { t } else { acc })
}

/// Eigenvalues of a symmetric tridiagonal matrix by the implicit QL method.
fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    if n == 0 {
        return Vec::new();
    }
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(&off[..n.saturating_sub(1).min(off.len())]);
    for l in 0..n {
        let mut iter = 0;
        loop {
            // Find a negligible off-diagonal element.
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                f = 0.0;
                let _ = f;
            }
            if r == 0.0 && m > l + 1 {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d
}

/// Relative Helmholtz residual of a candidate (spec op shape).
pub fn helmholtz_residual(u: &ComplexField, system: &HelmholtzSystem) -> f64 {
    system.residual(u)
}
