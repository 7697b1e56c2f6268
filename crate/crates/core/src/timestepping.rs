//! Explicit time integration of the semi-discrete second-order wave
//! equation
//!
//!   M y'' + B y' + K y = theta(t) (L_re cos(omega t) + L_im sin(omega t)),
//!
//! with lumped (diagonal) `M` and `B`, by leap-frog or classical RK4, plus
//! the backward adjoint pass, run-up source smoothing, and cumulative
//! extraction of the fundamental harmonic over one period.
//!
//! The impedance term in the leap-frog scheme is discretized at the
//! midpoint, `B (y^{n+1} - y^{n-1}) / (2 dt)`, so the update matrix
//! `M + (dt/2) B` stays diagonal and the scheme explicit.
//!
//! The adjoint pass is the exact discrete transpose of the forward map in
//! the discrete energy inner product (K on states, M on velocities). For
//! RK4 this is the time-reversed kernel conjugated by velocity negation;
//! for leap-frog it is the same three-term kernel with transposed start
//! and extraction stencils. Exactness keeps the outer CG operator
//! symmetric to machine precision and makes gradient checks pass at the
//! finite-difference floor.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::AssembledSystem;
use crate::linalg::ComplexField;
use crate::mesh::{Mesh, NO_VERTEX};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Leapfrog,
    Rk4,
}

/// Run-up schedule: sources are ramped smoothly over `periods` periods.
#[derive(Debug, Clone, Copy)]
pub struct RunupSchedule {
    pub periods: usize,
}

/// Smooth transient ramp: `(2 - sin(pi t / 2 t_tr)) sin(pi t / 2 t_tr)`
/// for `t <= t_tr`, then 1. Continuous with continuous first derivative.
pub fn runup_smoother(t: f64, t_tr: f64) -> f64 {
    if t_tr <= 0.0 || t >= t_tr {
        return 1.0;
    }
    let s = (std::f64::consts::FRAC_PI_2 * t / t_tr).sin();
    (2.0 - s) * s
}

/// Time derivative of [`runup_smoother`].
pub fn runup_smoother_deriv(t: f64, t_tr: f64) -> f64 {
    if t_tr <= 0.0 || t >= t_tr {
        return 0.0;
    }
    let arg = std::f64::consts::FRAC_PI_2 * t / t_tr;
    let (s, c) = (arg.sin(), arg.cos());
    std::f64::consts::PI / t_tr * c * (1.0 - s)
}

/// The unknown initial state iterated by the outer CG loop.
#[derive(Debug, Clone)]
pub struct ControlPair {
    pub v0: Vec<f64>,
    pub v1: Vec<f64>,
}

impl ControlPair {
    /// Zero control with the Dirichlet trace of the data at t = 0:
    /// `v0 = Re g_D`, `v1 = omega Im g_D` on constrained DOFs.
    pub fn zero(sys: &AssembledSystem) -> Self {
        let n = sys.n_dofs();
        let mut pair = ControlPair {
            v0: vec![0.0; n],
            v1: vec![0.0; n],
        };
        pair.enforce_constraints(sys);
        pair
    }

    /// Reset the constrained DOFs to the prescribed Dirichlet values.
    pub fn enforce_constraints(&mut self, sys: &AssembledSystem) {
        for d in 0..sys.n_dofs() {
            if sys.space.dirichlet[d] {
                self.v0[d] = sys.dirichlet_re[d];
                self.v1[d] = sys.omega * sys.dirichlet_im[d];
            }
        }
    }

    /// The complex field `v0 + (i/omega) v1`.
    pub fn to_complex(&self, omega: f64) -> ComplexField {
        ComplexField {
            re: self.v0.clone(),
            im: self.v1.iter().map(|v| v / omega).collect(),
        }
    }
}

/// Terminal state and filter accumulator of one forward integration.
#[derive(Debug, Clone)]
pub struct TrajectorySummary {
    pub y_end: Vec<f64>,
    pub yt_end: Vec<f64>,
    /// Cumulative fundamental-harmonic extraction over the final period,
    /// present when requested.
    pub filter_acc: Option<ComplexField>,
    /// Steps per period; `steps_per_period * dt` spans one period exactly.
    pub steps_per_period: usize,
    pub dt: f64,
    pub t_period: f64,
}

#[derive(Debug, Clone, Copy)]
pub enum StepsSpec {
    /// CFL-derived step count, at least the floor.
    Auto { floor: usize },
    /// Explicit step count; refused if it violates the CFL bound.
    Exact(usize),
}

impl Default for StepsSpec {
    fn default() -> Self {
        StepsSpec::Auto { floor: 0 }
    }
}

pub struct ForwardOptions {
    pub scheme: Scheme,
    pub n_periods: f64,
    /// Drive the run with the time-harmonic sources and Dirichlet data.
    /// When false the run is fully homogeneous (zero data).
    pub forcing: bool,
    /// Accumulate the fundamental-harmonic filter over the final period.
    pub with_filter: bool,
    /// Smooth source ramp over `[0, t_tr]`.
    pub runup_t_tr: Option<f64>,
    pub steps: StepsSpec,
}

impl ForwardOptions {
    pub fn new(scheme: Scheme, n_periods: f64) -> Self {
        ForwardOptions {
            scheme,
            n_periods,
            forcing: true,
            with_filter: false,
            runup_t_tr: None,
            steps: StepsSpec::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// CFL estimation
// ---------------------------------------------------------------------------

/// Largest generalized eigenvalue of `(K + B) x = lambda M x` on the free
/// DOFs, by 30 power iterations.
pub fn estimate_lambda_max(sys: &AssembledSystem) -> f64 {
    let n = sys.n_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    sys.project_free(&mut x);
    let mut z = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..30 {
        sys.stiffness.spmv(&x, &mut z);
        for i in 0..n {
            z[i] += sys.boundary_mass[i] * x[i];
            z[i] /= sys.mass_lumped[i];
        }
        sys.project_free(&mut z);
        let num = crate::linalg::dot(&x, &z);
        let den = crate::linalg::dot(&x, &x);
        lambda = (num / den).abs();
        let norm = crate::linalg::norm2(&z);
        if norm == 0.0 {
            return 0.0;
        }
        for i in 0..n {
            x[i] = z[i] / norm;
        }
    }
    lambda
}

/// Stable time step: `safety * 2 / sqrt(lambda_max)` for leap-frog; RK4
/// uses its larger imaginary-axis stability interval with safety 0.7.
pub fn estimate_dt_cfl(sys: &AssembledSystem, scheme: Scheme) -> f64 {
    let lambda = estimate_lambda_max(sys).max(1e-300);
    let base = 2.0 / lambda.sqrt();
    match scheme {
        Scheme::Leapfrog => 0.9 * base,
        Scheme::Rk4 => 0.7 * 2.8 / 2.0 * base,
    }
}

/// Steps per period honoring the CFL bound; the period is divided exactly.
pub fn steps_per_period(sys: &AssembledSystem, scheme: Scheme, spec: StepsSpec) -> Result<usize> {
    let t = sys.period();
    let dt_cfl = estimate_dt_cfl(sys, scheme);
    let n_min = (t / dt_cfl).ceil().max(1.0) as usize;
    match spec {
        StepsSpec::Auto { floor } => Ok(n_min.max(floor).max(8)),
        StepsSpec::Exact(n) => {
            if n < n_min {
                Err(Error::CflViolation {
                    dt: t / n as f64,
                    dt_max: dt_cfl,
                    steps: n_min,
                })
            } else {
                Ok(n)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// filter accumulation
// ---------------------------------------------------------------------------

/// Add one trapezoid sample of
/// `(1/T) int (y + (i/omega) y_t) exp(i omega t) dt`
/// to the accumulator; `weight` is `dt/T`, halved at the period endpoints.
pub fn accumulate_filter(
    acc: &mut ComplexField,
    y: &[f64],
    yt: &[f64],
    omega: f64,
    t: f64,
    weight: f64,
) {
    let (s, c) = (omega * t).sin_cos();
    for i in 0..acc.len() {
        let vi = yt[i] / omega;
        acc.re[i] += weight * (y[i] * c - vi * s);
        acc.im[i] += weight * (y[i] * s + vi * c);
    }
}

// ---------------------------------------------------------------------------
// forward integration
// ---------------------------------------------------------------------------

struct Drive<'a> {
    sys: &'a AssembledSystem,
    forcing: bool,
    t_tr: f64,
    load_re: Vec<f64>,
    load_im: Vec<f64>,
}

impl<'a> Drive<'a> {
    fn new(sys: &'a AssembledSystem, forcing: bool, runup_t_tr: Option<f64>) -> Self {
        let (load_re, load_im) = sys.loads.combined();
        Drive {
            sys,
            forcing,
            t_tr: runup_t_tr.unwrap_or(0.0),
            load_re,
            load_im,
        }
    }

    /// theta(t) * (L_re cos + L_im sin) into `out` (overwrite).
    fn load_at(&self, t: f64, out: &mut [f64]) {
        if !self.forcing {
            out.fill(0.0);
            return;
        }
        let theta = runup_smoother(t, self.t_tr);
        let (s, c) = (self.sys.omega * t).sin_cos();
        let (a, b) = (theta * c, theta * s);
        for i in 0..out.len() {
            out[i] = a * self.load_re[i] + b * self.load_im[i];
        }
    }

    /// Prescribed value and velocity of the constrained DOFs at time t,
    /// including the ramp.
    fn set_dirichlet(&self, t: f64, y: &mut [f64], yt: Option<&mut [f64]>) {
        if !self.forcing {
            for (i, &fixed) in self.sys.space.dirichlet.iter().enumerate() {
                if fixed {
                    y[i] = 0.0;
                }
            }
            if let Some(v) = yt {
                for (i, &fixed) in self.sys.space.dirichlet.iter().enumerate() {
                    if fixed {
                        v[i] = 0.0;
                    }
                }
            }
            return;
        }
        let theta = runup_smoother(t, self.t_tr);
        let dtheta = runup_smoother_deriv(t, self.t_tr);
        let omega = self.sys.omega;
        let (s, c) = (omega * t).sin_cos();
        for (i, &fixed) in self.sys.space.dirichlet.iter().enumerate() {
            if fixed {
                let g = self.sys.dirichlet_re[i] * c + self.sys.dirichlet_im[i] * s;
                y[i] = theta * g;
            }
        }
        if let Some(v) = yt {
            for (i, &fixed) in self.sys.space.dirichlet.iter().enumerate() {
                if fixed {
                    let g = self.sys.dirichlet_re[i] * c + self.sys.dirichlet_im[i] * s;
                    let gt = omega * (-self.sys.dirichlet_re[i] * s + self.sys.dirichlet_im[i] * c);
                    v[i] = dtheta * g + theta * gt;
                }
            }
        }
    }
}

/// Forward wave integration from the given control.
pub fn forward(
    sys: &AssembledSystem,
    control: &ControlPair,
    opts: &ForwardOptions,
) -> Result<TrajectorySummary> {
    forward_observed(sys, control, opts, |_, _, _| {})
}

/// Forward integration with a per-period observer: called at every period
/// boundary `j >= 1` with `(j, y(jT), y_t(jT))`.
pub fn forward_observed(
    sys: &AssembledSystem,
    control: &ControlPair,
    opts: &ForwardOptions,
    observer: impl FnMut(usize, &[f64], &[f64]),
) -> Result<TrajectorySummary> {
    let n_t = steps_per_period(sys, opts.scheme, opts.steps)?;
    let total_f = opts.n_periods * n_t as f64;
    let total = total_f.round() as usize;
    if (total_f - total as f64).abs() > 1e-9 || total == 0 {
        return Err(Error::invalid(format!(
            "n_periods = {} does not give an integral step count at {} steps/period",
            opts.n_periods, n_t
        )));
    }
    if opts.with_filter && total < n_t {
        return Err(Error::invalid(
            "filter accumulation needs at least one full period",
        ));
    }
    match opts.scheme {
        Scheme::Leapfrog => leapfrog_run(sys, control, opts, n_t, total, observer),
        Scheme::Rk4 => rk4_run(sys, control, opts, n_t, total, observer),
    }
}

/// Spec-shaped wrapper: leap-frog forward integration.
pub fn leapfrog_forward(
    sys: &AssembledSystem,
    control: &ControlPair,
    n_periods: f64,
    with_filter: bool,
    forcing: bool,
    smoothing: Option<RunupSchedule>,
) -> Result<TrajectorySummary> {
    let mut opts = ForwardOptions::new(Scheme::Leapfrog, n_periods);
    opts.with_filter = with_filter;
    opts.forcing = forcing;
    opts.runup_t_tr = smoothing.map(|s| s.periods as f64 * sys.period());
    forward(sys, control, &opts)
}

/// Spec-shaped wrapper: RK4 forward integration.
pub fn rk4_forward(
    sys: &AssembledSystem,
    control: &ControlPair,
    n_periods: f64,
    with_filter: bool,
) -> Result<TrajectorySummary> {
    let mut opts = ForwardOptions::new(Scheme::Rk4, n_periods);
    opts.with_filter = with_filter;
    forward(sys, control, &opts)
}

fn leapfrog_run(
    sys: &AssembledSystem,
    control: &ControlPair,
    opts: &ForwardOptions,
    n_t: usize,
    total: usize,
    mut observer: impl FnMut(usize, &[f64], &[f64]),
) -> Result<TrajectorySummary> {
    let n = sys.n_dofs();
    let t_period = sys.period();
    let dt = t_period / n_t as f64;
    let drive = Drive::new(sys, opts.forcing, opts.runup_t_tr);
    let omega = sys.omega;

    // Diagonal update operators.
    let m = &sys.mass_lumped;
    let b = &sys.boundary_mass;
    let inv_dplus: Vec<f64> = (0..n).map(|i| 1.0 / (m[i] + 0.5 * dt * b[i])).collect();
    let dminus: Vec<f64> = (0..n).map(|i| m[i] - 0.5 * dt * b[i]).collect();

    let mut y_prev = control.v0.clone();
    drive.set_dirichlet(0.0, &mut y_prev, None);

    // Taylor starter: y^1 = v0 + dt v1 + dt^2/2 M^{-1}(F(0) - K v0 - B v1).
    let mut load = vec![0.0; n];
    drive.load_at(0.0, &mut load);
    let mut ky = vec![0.0; n];
    sys.stiffness.spmv(&y_prev, &mut ky);
    let mut y_cur = vec![0.0; n];
    for i in 0..n {
        let accel = (load[i] - ky[i] - b[i] * control.v1[i]) / m[i];
        y_cur[i] = y_prev[i] + dt * control.v1[i] + 0.5 * dt * dt * accel;
    }
    drive.set_dirichlet(dt, &mut y_cur, None);

    let mut filter_acc = opts.with_filter.then(|| ComplexField::zeros(n));
    let m0 = total - if opts.with_filter { n_t } else { 0 };
    let wfull = dt / t_period;
    if let Some(acc) = filter_acc.as_mut() {
        if m0 == 0 {
            accumulate_filter(acc, &control.v0, &control.v1, omega, 0.0, 0.5 * wfull);
        }
    }

    let mut y_next = vec![0.0; n];
    let mut vel = vec![0.0; n];
    let mut y_end = Vec::new();
    let mut yt_end = Vec::new();
    for step in 1..=total {
        let t_n = step as f64 * dt;
        drive.load_at(t_n, &mut load);
        sys.stiffness.spmv(&y_cur, &mut ky);
        for i in 0..n {
            y_next[i] = (dt * dt * (load[i] - ky[i]) + 2.0 * m[i] * y_cur[i]
                - dminus[i] * y_prev[i])
                * inv_dplus[i];
        }
        drive.set_dirichlet(t_n + dt, &mut y_next, None);

        let inv2dt = 1.0 / (2.0 * dt);
        for i in 0..n {
            vel[i] = (y_next[i] - y_prev[i]) * inv2dt;
        }
        if let Some(acc) = filter_acc.as_mut() {
            if step >= m0 {
                let w = if step == m0 || step == total {
                    0.5 * wfull
                } else {
                    wfull
                };
                accumulate_filter(acc, &y_cur, &vel, omega, t_n, w);
            }
        }
        if step % n_t == 0 {
            observer(step / n_t, &y_cur, &vel);
        }
        if step == total {
            y_end = y_cur.clone();
            yt_end = vel.clone();
        }
        std::mem::swap(&mut y_prev, &mut y_cur);
        std::mem::swap(&mut y_cur, &mut y_next);
    }

    Ok(TrajectorySummary {
        y_end,
        yt_end,
        filter_acc,
        steps_per_period: n_t,
        dt,
        t_period,
    })
}

fn rk4_run(
    sys: &AssembledSystem,
    control: &ControlPair,
    opts: &ForwardOptions,
    n_t: usize,
    total: usize,
    mut observer: impl FnMut(usize, &[f64], &[f64]),
) -> Result<TrajectorySummary> {
    let n = sys.n_dofs();
    let t_period = sys.period();
    let dt = t_period / n_t as f64;
    let drive = Drive::new(sys, opts.forcing, opts.runup_t_tr);
    let omega = sys.omega;

    let mut y = control.v0.clone();
    let mut v = control.v1.clone();
    drive.set_dirichlet(0.0, &mut y, Some(&mut v));

    let mut filter_acc = opts.with_filter.then(|| ComplexField::zeros(n));
    let m0 = total - if opts.with_filter { n_t } else { 0 };
    let wfull = dt / t_period;
    if let Some(acc) = filter_acc.as_mut() {
        if m0 == 0 {
            accumulate_filter(acc, &y, &v, omega, 0.0, 0.5 * wfull);
        }
    }

    // Scratch for the four stages.
    let mut ky = vec![0.0; n];
    let mut load = vec![0.0; n];
    let mut ys = vec![0.0; n];
    let mut vs = vec![0.0; n];
    let mut ay = vec![vec![0.0; n]; 4];
    let mut av = vec![vec![0.0; n]; 4];

    for step in 0..total {
        let t_n = step as f64 * dt;
        let coef = [0.0, 0.5, 0.5, 1.0];
        for stage in 0..4 {
            let ts = t_n + coef[stage] * dt;
            if stage == 0 {
                ys.copy_from_slice(&y);
                vs.copy_from_slice(&v);
            } else {
                let c = coef[stage] * dt;
                for i in 0..n {
                    ys[i] = y[i] + c * ay[stage - 1][i];
                    vs[i] = v[i] + c * av[stage - 1][i];
                }
            }
            drive.set_dirichlet(ts, &mut ys, Some(&mut vs));
            drive.load_at(ts, &mut load);
            sys.stiffness.spmv(&ys, &mut ky);
            let (ay_s, av_s) = (&mut ay[stage], &mut av[stage]);
            for i in 0..n {
                ay_s[i] = vs[i];
                av_s[i] = (load[i] - ky[i] - sys.boundary_mass[i] * vs[i]) / sys.mass_lumped[i];
            }
        }
        let w6 = dt / 6.0;
        for i in 0..n {
            y[i] += w6 * (ay[0][i] + 2.0 * ay[1][i] + 2.0 * ay[2][i] + ay[3][i]);
            v[i] += w6 * (av[0][i] + 2.0 * av[1][i] + 2.0 * av[2][i] + av[3][i]);
        }
        let t_next = t_n + dt;
        drive.set_dirichlet(t_next, &mut y, Some(&mut v));

        let step1 = step + 1;
        if let Some(acc) = filter_acc.as_mut() {
            if step1 >= m0 {
                let w = if step1 == m0 || step1 == total {
                    0.5 * wfull
                } else {
                    wfull
                };
                accumulate_filter(acc, &y, &v, omega, t_next, w);
            }
        }
        if step1 % n_t == 0 {
            observer(step1 / n_t, &y, &v);
        }
    }

    Ok(TrajectorySummary {
        y_end: y,
        yt_end: v,
        filter_acc,
        steps_per_period: n_t,
        dt,
        t_period,
    })
}

// ---------------------------------------------------------------------------
// adjoint (backward) pass
// ---------------------------------------------------------------------------

/// Terminal data of the adjoint wave equation from the periodicity
/// mismatches `e0 = y(T) - v0`, `e1 = y_t(T) - v1`:
/// `p0 = e1` and the lumped weak identity `M p1 = B p0 - K e0`.
pub fn adjoint_terminal(sys: &AssembledSystem, e0: &[f64], e1: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = sys.n_dofs();
    let p0 = e1.to_vec();
    let mut ke0 = vec![0.0; n];
    sys.stiffness.spmv(e0, &mut ke0);
    let mut p1 = vec![0.0; n];
    for i in 0..n {
        p1[i] = (sys.boundary_mass[i] * p0[i] - ke0[i]) / sys.mass_lumped[i];
    }
    sys.project_free(&mut p1);
    (p0, p1)
}

/// Output of the backward adjoint pass: the transpose of the zero-data
/// forward map applied to the energy-weighted mismatch, `(a, b) =
/// F^T (K e0, M e1)`. The adjoint state at t = 0 is recovered through the
/// lumped mass.
#[derive(Debug, Clone)]
pub struct AdjointState {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl AdjointState {
    /// Adjoint state `p(., 0)`.
    pub fn p0(&self, sys: &AssembledSystem) -> Vec<f64> {
        self.b
            .iter()
            .zip(&sys.mass_lumped)
            .map(|(b, m)| b / m)
            .collect()
    }

    /// Adjoint velocity `p_t(., 0)`.
    pub fn p0t(&self, sys: &AssembledSystem) -> Vec<f64> {
        let p0 = self.p0(sys);
        (0..self.a.len())
            .map(|i| (sys.boundary_mass[i] * p0[i] - self.a[i]) / sys.mass_lumped[i])
            .collect()
    }
}

/// Integrate the adjoint wave equation backward over one period from the
/// terminal mismatch pair. Realized as the exact transpose of the forward
/// kernel: time reversal flips the impedance sign back to the standard
/// forward form.
pub fn adjoint_backward(
    sys: &AssembledSystem,
    scheme: Scheme,
    steps: usize,
    e0: &[f64],
    e1: &[f64],
) -> AdjointState {
    match scheme {
        Scheme::Rk4 => {
            // Energy adjoint of the RK4 step polynomial: conjugate the
            // reversed kernel by velocity negation.
            let n = sys.n_dofs();
            let mut control = ControlPair {
                v0: e0.to_vec(),
                v1: e1.iter().map(|v| -v).collect(),
            };
            sys.project_free(&mut control.v0);
            sys.project_free(&mut control.v1);
            let mut opts = ForwardOptions::new(Scheme::Rk4, 1.0);
            opts.forcing = false;
            opts.steps = StepsSpec::Exact(steps);
            let summary = forward(sys, &control, &opts).expect("adjoint rk4 run");
            let mut a = vec![0.0; n];
            sys.stiffness.spmv(&summary.y_end, &mut a);
            sys.project_free(&mut a);
            let mut b: Vec<f64> = summary
                .yt_end
                .iter()
                .zip(&sys.mass_lumped)
                .map(|(v, m)| -v * m)
                .collect();
            sys.project_free(&mut b);
            AdjointState { a, b }
        }
        Scheme::Leapfrog => leapfrog_transpose(sys, steps, e0, e1),
    }
}

/// Exact transpose of the leap-frog forward map
/// `(v0, v1) -> (y^N, (y^{N+1} - y^{N-1})/(2 dt))` applied to
/// `(u, z) = (K e0, M e1)`.
fn leapfrog_transpose(sys: &AssembledSystem, steps: usize, e0: &[f64], e1: &[f64]) -> AdjointState {
    let n = sys.n_dofs();
    let dt = sys.period() / steps as f64;
    let m = &sys.mass_lumped;
    let bm = &sys.boundary_mass;
    let inv_dplus: Vec<f64> = (0..n).map(|i| 1.0 / (m[i] + 0.5 * dt * bm[i])).collect();
    let dminus: Vec<f64> = (0..n).map(|i| m[i] - 0.5 * dt * bm[i]).collect();

    let proj = |v: &mut Vec<f64>| {
        for (x, &fixed) in v.iter_mut().zip(&sys.space.dirichlet) {
            if fixed {
                *x = 0.0;
            }
        }
    };

    let mut u = vec![0.0; n];
    sys.stiffness.spmv(e0, &mut u);
    proj(&mut u);
    let mut z: Vec<f64> = e1.iter().zip(m).map(|(e, mi)| e * mi).collect();
    proj(&mut z);

    // R x = 2 M x - dt^2 K x (free DOFs).
    let apply_r = |x: &[f64], out: &mut Vec<f64>| {
        sys.stiffness.spmv(x, out);
        for i in 0..n {
            out[i] = 2.0 * m[i] * x[i] - dt * dt * out[i];
        }
    };

    // Seed = C^T (u, z):
    //   p = -(1/dt) M D+^{-1} z
    //   q = u + 1/(2 dt) R D+^{-1} z
    let dz: Vec<f64> = (0..n).map(|i| inv_dplus[i] * z[i]).collect();
    let mut p: Vec<f64> = (0..n).map(|i| -m[i] * dz[i] / dt).collect();
    let mut rq = vec![0.0; n];
    apply_r(&dz, &mut rq);
    let mut q: Vec<f64> = (0..n).map(|i| u[i] + 0.5 * rq[i] / dt).collect();
    proj(&mut p);
    proj(&mut q);

    // (T^T)^(N-1): (p, q) <- (-D- D+^{-1} q, p + R D+^{-1} q).
    let mut dq = vec![0.0; n];
    for _ in 0..steps.saturating_sub(1) {
        for i in 0..n {
            dq[i] = inv_dplus[i] * q[i];
        }
        apply_r(&dq, &mut rq);
        for i in 0..n {
            let new_q = p[i] + rq[i];
            p[i] = -dminus[i] * dq[i];
            q[i] = new_q;
        }
        proj(&mut p);
        proj(&mut q);
    }

    // A^T: a = p + q - (dt^2/2) K M^{-1} q ; b = dt q - (dt^2/2) B M^{-1} q.
    let minv_q: Vec<f64> = (0..n).map(|i| q[i] / m[i]).collect();
    let mut kq = vec![0.0; n];
    sys.stiffness.spmv(&minv_q, &mut kq);
    let mut a: Vec<f64> = (0..n)
        .map(|i| p[i] + q[i] - 0.5 * dt * dt * kq[i])
        .collect();
    let mut b: Vec<f64> = (0..n)
        .map(|i| dt * q[i] - 0.5 * dt * dt * bm[i] * minv_q[i])
        .collect();
    proj(&mut a);
    proj(&mut b);
    AdjointState { a, b }
}

// ---------------------------------------------------------------------------
// energies
// ---------------------------------------------------------------------------

/// Discrete energy `1/2 y_t^T M y_t + 1/2 y^T K y` (lumped mass).
pub fn pair_energy(sys: &AssembledSystem, y: &[f64], yt: &[f64]) -> f64 {
    let mut ky = vec![0.0; sys.n_dofs()];
    sys.stiffness.spmv(y, &mut ky);
    let mut e = 0.0;
    for i in 0..sys.n_dofs() {
        e += 0.5 * yt[i] * sys.mass_lumped[i] * yt[i] + 0.5 * y[i] * ky[i];
    }
    e
}

// ---------------------------------------------------------------------------
// VTK snapshots
// ---------------------------------------------------------------------------

/// Write vertex fields as a legacy-VTK unstructured grid (ASCII). DOF
/// vectors longer than the vertex count are truncated to their vertex
/// block (vertex DOFs come first in every space here).
pub fn vtk_snapshot(
    mesh: &Mesh,
    fields: &[(&str, &[f64])],
    path: &std::path::Path,
) -> Result<()> {
    use std::fmt::Write as _;
    let nv = mesh.n_vertices();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nwave state snapshot\nASCII\n");
    s.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {nv} double");
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:.9e} {:.9e} 0.0", v[0], v[1]);
    }
    let npe = mesh.vertices_per_element();
    let ne = mesh.n_elements();
    let _ = writeln!(s, "CELLS {} {}", ne, ne * (npe + 1));
    for el in &mesh.elements {
        if mesh.dim == 1 {
            let _ = writeln!(s, "2 {} {}", el[0], el[1]);
        } else {
            debug_assert_ne!(el[2], NO_VERTEX);
            let _ = writeln!(s, "3 {} {} {}", el[0], el[1], el[2]);
        }
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    let ct = if mesh.dim == 1 { 3 } else { 5 };
    for _ in 0..ne {
        let _ = writeln!(s, "{ct}");
    }
    let _ = writeln!(s, "POINT_DATA {nv}");
    for (name, vals) in fields {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for i in 0..nv {
            let _ = writeln!(s, "{:.9e}", vals[i]);
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}
