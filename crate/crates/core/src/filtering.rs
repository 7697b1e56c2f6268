//! Extraction of the fundamental-frequency Helmholtz solution from a
//! periodic wave trajectory, plus the constant-mode compatibility
//! corrections.
//!
//! A `T`-periodic trajectory of the driven wave equation decomposes into
//! the desired harmonic `Re{u exp(-i omega t)}` plus spurious modes: a
//! constant shift, a linear-in-time drift, and higher harmonics. The
//! cumulative quadrature
//!
//!   y_hat = (1/T) int_0^T (y + (i/omega) y_t) exp(i omega t) dt
//!
//! annihilates all of them except the drift, which leaves a constant
//! imaginary offset `-i eta / omega`. Under impedance or Dirichlet
//! conditions the drift coefficient vanishes; in the pure-Neumann case it
//! is recovered from the volume compatibility identity, and in the
//! sound-hard case (impedance but no Dirichlet part) the constant shift of
//! the unfiltered minimizer can alternatively be removed algebraically.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fem::{
    integrate_data_boundary, integrate_data_volume, integrate_field_boundary,
    integrate_field_coeff, AssembledSystem, HelmholtzProblem,
};
use crate::linalg::ComplexField;
use crate::mesh::BoundaryTag;
use crate::timestepping::TrajectorySummary;

/// A filtered time-harmonic field with its mode corrections.
#[derive(Debug, Clone)]
pub struct FilteredSolution {
    pub u: ComplexField,
    /// Linear-in-time drift coefficient; zero unless the boundary is pure
    /// Neumann.
    pub eta: f64,
    /// Imaginary residual of the drift estimate (quadrature-level
    /// diagnostic; the coefficient is real in exact arithmetic).
    pub eta_imag_residual: f64,
    /// Constant shift removed in the sound-hard case; zero otherwise.
    pub lambda_shift: Complex64,
}

/// The accumulated fundamental harmonic of a second-order trajectory.
/// Requires a summary produced with filter accumulation enabled.
pub fn filter_second_order(summary: &TrajectorySummary) -> Result<ComplexField> {
    summary
        .filter_acc
        .clone()
        .ok_or_else(|| Error::invalid("trajectory was integrated without filter accumulation"))
}

/// Drift coefficient for the pure-Neumann problem from the compatibility
/// identity:
///
///   i eta / omega = -( int f + int g_N + int k^2 y_hat ) / ||k||^2.
///
/// Returns `(eta, imaginary residual)`; the identity makes the bracket
/// purely imaginary up to quadrature error.
pub fn eta_neumann(
    sys: &AssembledSystem,
    problem: &HelmholtzProblem,
    y_hat: &ComplexField,
) -> Result<(f64, f64)> {
    let space = &sys.space;
    let only_neumann = space
        .mesh
        .boundary
        .iter()
        .all(|f| f.tag == BoundaryTag::Neumann);
    if !only_neumann {
        return Err(Error::invalid(
            "the drift correction applies to the pure-Neumann problem only",
        ));
    }
    let k2: Vec<f64> = sys.k_elem().iter().map(|k| k * k).collect();
    let k_norm2: f64 = (0..space.mesh.n_elements())
        .map(|e| k2[e] * space.mesh.element_measure(e))
        .sum();
    if k_norm2 <= 0.0 {
        return Err(Error::invalid("||k|| vanishes"));
    }
    let mut bracket = integrate_field_coeff(space, y_hat, &k2);
    if let Some(f) = &problem.f {
        bracket += integrate_data_volume(space, f);
    }
    if let Some(g) = &problem.g_n {
        bracket += integrate_data_boundary(space, BoundaryTag::Neumann, g);
    }
    // i eta / omega = -bracket / ||k||^2  =>  eta = -omega Im(...)... the
    // real part of the bracket is the quadrature residual.
    let i_eta_over_omega = -bracket / k_norm2;
    let eta = i_eta_over_omega.im * sys.omega;
    Ok((eta, i_eta_over_omega.re * sys.omega))
}

/// Constant shift of a sound-hard minimizer (impedance part present, no
/// Dirichlet part):
///
///   lambda = ( int k^2 v + i int_{G_S} k v + int f + int_{G_S} g_S
///              + int_{G_N} g_N ) / ( ||k||^2 + i |k|_{L1(G_S)} ).
///
/// The numerator is the weak compatibility identity, so it vanishes on the
/// true solution and is linear in a constant shift.
pub fn lambda_soundhard(
    sys: &AssembledSystem,
    problem: &HelmholtzProblem,
    v: &ComplexField,
) -> Result<Complex64> {
    let space = &sys.space;
    let has_s = space.has_tag(BoundaryTag::Sommerfeld);
    let has_d = space.has_tag(BoundaryTag::Dirichlet);
    if !has_s || has_d {
        return Err(Error::invalid(
            "the shift correction applies when an impedance part is present and no Dirichlet part",
        ));
    }
    let k_elem = sys.k_elem();
    let k2: Vec<f64> = k_elem.iter().map(|k| k * k).collect();
    let k_norm2: f64 = (0..space.mesh.n_elements())
        .map(|e| k2[e] * space.mesh.element_measure(e))
        .sum();
    let k_l1_gs: f64 = space
        .mesh
        .boundary
        .iter()
        .enumerate()
        .filter(|(_, f)| f.tag == BoundaryTag::Sommerfeld)
        .map(|(fi, f)| k_elem[space.facet_elem[fi]] * space.mesh.facet_measure(f))
        .sum();
    let mut num = integrate_field_coeff(space, v, &k2);
    num += Complex64::new(0.0, 1.0) * integrate_field_boundary(space, BoundaryTag::Sommerfeld, v, &k_elem);
    if let Some(f) = &problem.f {
        num += integrate_data_volume(space, f);
    }
    if let Some(g) = &problem.g_s {
        num += integrate_data_boundary(space, BoundaryTag::Sommerfeld, g);
    }
    if let Some(g) = &problem.g_n {
        num += integrate_data_boundary(space, BoundaryTag::Neumann, g);
    }
    let den = Complex64::new(k_norm2, k_l1_gs);
    Ok(num / den)
}

/// Compose the corrected solution from a filtered trajectory: `u = y_hat`
/// when any impedance or Dirichlet part is present, otherwise the
/// pure-Neumann drift correction `u = y_hat + i eta / omega`.
pub fn correct_filtered(
    sys: &AssembledSystem,
    problem: &HelmholtzProblem,
    y_hat: ComplexField,
) -> Result<FilteredSolution> {
    let space = &sys.space;
    let has_s = space.has_tag(BoundaryTag::Sommerfeld);
    let has_d = space.has_tag(BoundaryTag::Dirichlet);
    let mut out = FilteredSolution {
        u: y_hat,
        eta: 0.0,
        eta_imag_residual: 0.0,
        lambda_shift: Complex64::new(0.0, 0.0),
    };
    if !has_s && !has_d {
        let (eta, resid) = eta_neumann(sys, problem, &out.u)?;
        out.eta = eta;
        out.eta_imag_residual = resid;
        // u = y_hat + i eta / omega.
        out.u.add_scalar(0.0, eta / sys.omega);
    }
    Ok(out)
}

/// The first-order-path filter, `u = (2i / (T omega)) int_0^T v e^{i omega t} dt`,
/// from the accumulated integral `(1/T) int v e^{i omega t} dt`.
pub fn filter_first_order(v_acc: &ComplexField, omega: f64) -> ComplexField {
    // (2i/omega) * acc.
    let scale = 2.0 / omega;
    ComplexField {
        re: v_acc.im.iter().map(|v| -scale * v).collect(),
        im: v_acc.re.iter().map(|v| scale * v).collect(),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fem::{build_space, interpolate, WaveSpeed};
    use crate::mesh::{generate_interval, BoundaryTag};
    use crate::timestepping::accumulate_filter;

    fn neumann_sys(nel: usize, omega: f64) -> (AssembledSystem, HelmholtzProblem) {
        let mesh = Arc::new(
            generate_interval(nel, 0.0, 1.0, BoundaryTag::Neumann, BoundaryTag::Neumann).unwrap(),
        );
        let space = build_space(&mesh, 2).unwrap();
        let problem = HelmholtzProblem::new(omega, WaveSpeed::Constant(1.0)).unwrap();
        let sys = AssembledSystem::assemble(space, &problem).unwrap();
        (sys, problem)
    }

    /// Build the filter accumulator of a synthetic trajectory
    /// y(t) = Re{u e^{-iwt}} + lambda + eta t + Re{gamma e^{-2iwt}}.
    fn synthetic_acc(
        sys: &AssembledSystem,
        u: &ComplexField,
        lambda: f64,
        eta: f64,
        gamma: Complex64,
        steps: usize,
    ) -> ComplexField {
        let n = sys.n_dofs();
        let omega = sys.omega;
        let t_p = sys.period();
        let dt = t_p / steps as f64;
        let mut acc = ComplexField::zeros(n);
        for s in 0..=steps {
            let t = s as f64 * dt;
            let e1 = Complex64::new(0.0, -omega * t).exp();
            let e2 = Complex64::new(0.0, -2.0 * omega * t).exp();
            let mut y = vec![0.0; n];
            let mut yt = vec![0.0; n];
            for i in 0..n {
                let ui = Complex64::new(u.re[i], u.im[i]);
                y[i] = (ui * e1).re + lambda + eta * t + (gamma * e2).re;
                yt[i] = (ui * e1 * Complex64::new(0.0, -omega)).re
                    + eta
                    + (gamma * e2 * Complex64::new(0.0, -2.0 * omega)).re;
            }
            let w = if s == 0 || s == steps {
                0.5 * dt / t_p
            } else {
                dt / t_p
            };
            accumulate_filter(&mut acc, &y, &yt, omega, t, w);
        }
        acc
    }

    #[test]
    fn filter_is_linear() {
        let (sys, _) = neumann_sys(6, 2.0);
        let u1 = interpolate(&sys.space, |p| Complex64::new(p[0], 0.3 - p[0]));
        let u2 = interpolate(&sys.space, |p| Complex64::new(1.0 - p[0] * p[0], 0.1));
        let a = 2.5;
        let acc1 = synthetic_acc(&sys, &u1, 0.0, 0.0, Complex64::new(0.0, 0.0), 32);
        let acc2 = synthetic_acc(&sys, &u2, 0.0, 0.0, Complex64::new(0.0, 0.0), 32);
        let mut combined = ComplexField::zeros(sys.n_dofs());
        for i in 0..sys.n_dofs() {
            combined.re[i] = a * u1.re[i] + u2.re[i];
            combined.im[i] = a * u1.im[i] + u2.im[i];
        }
        let acc12 = synthetic_acc(&sys, &combined, 0.0, 0.0, Complex64::new(0.0, 0.0), 32);
        for i in 0..sys.n_dofs() {
            assert!((acc12.re[i] - (a * acc1.re[i] + acc2.re[i])).abs() < 1e-12);
            assert!((acc12.im[i] - (a * acc1.im[i] + acc2.im[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn spurious_modes_are_removed() {
        // lambda and the second harmonic vanish exactly; the drift leaves
        // its imaginary offset which the compatibility correction removes.
        let (sys, _) = neumann_sys(8, 2.0);
        let u = interpolate(&sys.space, |p| {
            Complex64::new((2.1 * p[0]).sin(), 0.4 * p[0])
        });
        let acc_clean = synthetic_acc(&sys, &u, 0.0, 0.0, Complex64::new(0.0, 0.0), 64);
        let acc_dirty = synthetic_acc(&sys, &u, 3.7, 0.0, Complex64::new(0.9, -1.1), 64);
        for i in 0..sys.n_dofs() {
            assert!((acc_clean.re[i] - acc_dirty.re[i]).abs() < 1e-12);
            assert!((acc_clean.im[i] - acc_dirty.im[i]).abs() < 1e-12);
            assert!((acc_clean.re[i] - u.re[i]).abs() < 1e-12);
            assert!((acc_clean.im[i] - u.im[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonics_up_to_quarter_nyquist_are_annihilated() {
        // DC and every harmonic 2 <= l <= steps/4 vanish to 1e-10 relative.
        let (sys, _) = neumann_sys(4, 2.0);
        let n = sys.n_dofs();
        let omega = sys.omega;
        let steps = 64;
        let t_p = sys.period();
        let dt = t_p / steps as f64;
        for l in 2..=(steps / 4) {
            let gamma = Complex64::new(1.0, 0.7);
            let mut acc = ComplexField::zeros(n);
            for s in 0..=steps {
                let t = s as f64 * dt;
                let el = Complex64::new(0.0, -(l as f64) * omega * t).exp();
                let y = vec![(gamma * el).re; n];
                let yt = vec![(gamma * el * Complex64::new(0.0, -(l as f64) * omega)).re; n];
                let w = if s == 0 || s == steps {
                    0.5 * dt / t_p
                } else {
                    dt / t_p
                };
                accumulate_filter(&mut acc, &y, &yt, omega, t, w);
            }
            for i in 0..n {
                assert!(
                    acc.re[i].abs() < 1e-10 && acc.im[i].abs() < 1e-10,
                    "harmonic {l} leaked: ({}, {})",
                    acc.re[i],
                    acc.im[i]
                );
            }
        }
    }

    #[test]
    fn eta_recovers_injected_drift() {
        // y_hat = u - i s / omega for an injected drift s: the correction
        // returns eta = s given discretely compatible data. Compatibility
        // is arranged with a constant volume source f = -(int k^2 u)/|O|.
        let omega = 0.9;
        let (sys, problem) = neumann_sys(10, omega);
        let u = interpolate(&sys.space, |p| {
            Complex64::new(0.3 + (1.3 * p[0]).cos(), 0.2 * p[0] * p[0])
        });
        let k2: Vec<f64> = sys.k_elem().iter().map(|k| k * k).collect();
        let int_k2_u = integrate_field_coeff(&sys.space, &u, &k2);
        let f_const = -int_k2_u; // |Omega| = 1
        let problem = HelmholtzProblem::new(omega, problem.c)
            .unwrap()
            .with_volume_source(Box::new(move |_| f_const));
        // Sanity: eta = 0 on the compatible field itself.
        let (eta0, _) = eta_neumann(&sys, &problem, &u).unwrap();
        assert!(eta0.abs() < 1e-12, "eta0 = {eta0:.3e}");
        // Inject the drift offset.
        let s = 1.7;
        let mut shifted = u.clone();
        shifted.add_scalar(0.0, -s / omega);
        let (eta, resid) = eta_neumann(&sys, &problem, &shifted).unwrap();
        assert!((eta - s).abs() < 1e-10, "eta = {eta}");
        assert!(resid.abs() < 1e-10);
        // correct_filtered undoes it.
        let fixed = correct_filtered(&sys, &problem, shifted).unwrap();
        for i in 0..sys.n_dofs() {
            assert!((fixed.u.im[i] - u.im[i]).abs() < 1e-10);
        }
        assert!((fixed.eta - s).abs() < 1e-10);
    }

    #[test]
    fn lambda_recovers_injected_shift() {
        // Sound-hard 1D: Neumann at 0, impedance at 1, u = e^{ikx}.
        let k = 2.0 * std::f64::consts::PI;
        let mesh = Arc::new(
            generate_interval(24, 0.0, 1.0, BoundaryTag::Neumann, BoundaryTag::Sommerfeld)
                .unwrap(),
        );
        let space = build_space(&mesh, 2).unwrap();
        let problem = HelmholtzProblem::new(k, WaveSpeed::Constant(1.0))
            .unwrap()
            .with_neumann(Box::new(move |_x, _n| Complex64::new(0.0, -k)));
        let sys = AssembledSystem::assemble(space, &problem).unwrap();
        let u = interpolate(&sys.space, |p| Complex64::new(0.0, k * p[0]).exp());
        // On the true solution the numerator is the weak compatibility
        // identity: lambda = O(quadrature error).
        let l0 = lambda_soundhard(&sys, &problem, &u).unwrap();
        assert!(l0.norm() < 1e-4, "lambda on truth: {l0}");
        // A constant shift is recovered exactly (the formula is affine).
        let mut shifted = u.clone();
        shifted.add_scalar(3.5, 0.0);
        let l = lambda_soundhard(&sys, &problem, &shifted).unwrap();
        assert!((l - l0 - Complex64::new(3.5, 0.0)).norm() < 1e-10, "{l}");
    }

    #[test]
    fn first_order_filter_recovers_u() {
        // v = Re{-i omega u e^{-i omega t}}: the v-filter returns u, and
        // rejects DC and the second harmonic.
        let omega = 2.0;
        let n = 5;
        let u = Complex64::new(0.8, -0.45);
        let t_p = 2.0 * std::f64::consts::PI / omega;
        let steps = 32;
        let dt = t_p / steps as f64;
        let eta = 0.7;
        let gamma = Complex64::new(0.3, 0.2);
        // Accumulate (1/T) int v e^{i omega t} dt with trapezoid weights.
        let mut acc = ComplexField::zeros(n);
        for s in 0..=steps {
            let t = s as f64 * dt;
            let e1 = Complex64::new(0.0, -omega * t).exp();
            let e2 = Complex64::new(0.0, -2.0 * omega * t).exp();
            let v = (Complex64::new(0.0, -omega) * u * e1).re + eta + (gamma * e2).re;
            let w = if s == 0 || s == steps {
                0.5 * dt / t_p
            } else {
                dt / t_p
            };
            let (si, co) = (omega * t).sin_cos();
            for i in 0..n {
                acc.re[i] += w * v * co;
                acc.im[i] += w * v * si;
            }
        }
        let got = filter_first_order(&acc, omega);
        for i in 0..n {
            assert!((got.re[i] - u.re).abs() < 1e-12, "{}", got.re[i]);
            assert!((got.im[i] - u.im).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_accumulator_is_an_error() {
        let (sys, _) = neumann_sys(4, 1.0);
        let summary = crate::timestepping::TrajectorySummary {
            y_end: vec![0.0; sys.n_dofs()],
            yt_end: vec![0.0; sys.n_dofs()],
            filter_acc: None,
            steps_per_period: 8,
            dt: 0.1,
            t_period: 0.8,
        };
        assert!(filter_second_order(&summary).is_err());
    }
}
