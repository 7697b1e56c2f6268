//! The controllability outer loop: conjugate-gradient minimization of the
//! periodicity-mismatch energy
//!
//!   J(v0, v1) = 1/2 |y(T) - v0|_K^2 + 1/2 |y_t(T) - v1|_M^2
//!
//! over the initial data of the driven wave equation. Each iteration costs
//! one forward and one backward (adjoint) wave solve over a period; the
//! raw gradient is smoothed into the energy space by the coercive elliptic
//! solve `K g0~ = g0` (and `g1~ = M^{-1} g1`), and the CG recurrences run
//! in the energy inner product (K on the 0-components, M on the
//! 1-components).
//!
//! The terminal pair of the current iterate is tracked affinely (the
//! terminal map is affine in the control), so the periodicity misfit and
//! the Helmholtz residual are logged every iteration without extra wave
//! solves.

use std::time::Instant;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fem::{AssembledSystem, HelmholtzProblem};
use crate::filtering::{self, FilteredSolution};
use crate::helmholtz_ref::HelmholtzSystem;
use crate::linalg::{dot, pcg, ComplexField, PcgOptions};
use crate::timestepping::{
    adjoint_backward, forward, forward_observed, steps_per_period, ControlPair, ForwardOptions,
    Scheme, StepsSpec, TrajectorySummary,
};

/// Raw (dual-space) gradient of J; zero on constrained DOFs.
#[derive(Debug, Clone)]
pub struct RawGradient {
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
}

/// Relative-misfit handling when `||f|| + ||g_S||` vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MisfitMode {
    Relative,
    Absolute,
}

/// One CG iteration record, mirroring the history CSV schema.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    pub residual_cg: f64,
    pub misfit_j: f64,
    pub residual_h: Option<f64>,
    pub cumulative_wave_periods: f64,
    pub wall_time_s: f64,
}

/// Stopping rule of the outer CG loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Relative CG residual against the residual at the initial guess.
    CgResidual,
    /// Periodicity misfit relative to the data norm (or absolute when the
    /// data norm vanishes): a fixed-quality target independent of the
    /// initial guess, the fair yardstick for run-up sweeps.
    Misfit,
}

#[derive(Debug, Clone)]
pub struct CmcgOptions {
    pub scheme: Scheme,
    pub tol: f64,
    pub max_iter: usize,
    pub stop: StopRule,
    /// Run-up periods used to build the initial guess (0 disables).
    pub runup_periods: usize,
    /// Apply the fundamental-harmonic filter to the final trajectory.
    pub filter: bool,
    pub steps: StepsSpec,
    /// Tolerance of the Riesz elliptic solve.
    pub riesz_rtol: f64,
}

impl CmcgOptions {
    pub fn new(scheme: Scheme, tol: f64, max_iter: usize) -> Self {
        CmcgOptions {
            scheme,
            tol,
            max_iter,
            stop: StopRule::CgResidual,
            runup_periods: 0,
            filter: false,
            steps: StepsSpec::default(),
            riesz_rtol: 1e-12,
        }
    }
}

pub struct CmcgResult {
    /// The recovered time-harmonic field: `v0 + (i/omega) v1`, or the
    /// filtered/corrected field when filtering was requested.
    pub u: ComplexField,
    pub control: ControlPair,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
    /// Total forward+backward wave-equation periods integrated, run-up
    /// included.
    pub total_wave_periods: f64,
    pub filtered: Option<FilteredSolution>,
}

// ---------------------------------------------------------------------------
// energy inner product and J
// ---------------------------------------------------------------------------

/// Energy inner product of control-shaped pairs:
/// `a0^T K b0 + a1^T M b1`.
pub fn energy_dot(sys: &AssembledSystem, a0: &[f64], a1: &[f64], b0: &[f64], b1: &[f64]) -> f64 {
    let n = sys.n_dofs();
    let mut kb = vec![0.0; n];
    sys.stiffness.spmv(b0, &mut kb);
    let mut s = dot(a0, &kb);
    for i in 0..n {
        s += a1[i] * sys.mass_lumped[i] * b1[i];
    }
    s
}

/// J from a terminal pair: mismatch in the discrete energy norms, with the
/// constrained entries projected out (they carry the periodic Dirichlet
/// data exactly).
pub fn j_from_terminal(
    sys: &AssembledSystem,
    control: &ControlPair,
    y_end: &[f64],
    yt_end: &[f64],
) -> f64 {
    let n = sys.n_dofs();
    let mut e0 = vec![0.0; n];
    let mut e1 = vec![0.0; n];
    for i in 0..n {
        e0[i] = y_end[i] - control.v0[i];
        e1[i] = yt_end[i] - control.v1[i];
    }
    sys.project_free(&mut e0);
    sys.project_free(&mut e1);
    0.5 * energy_dot(sys, &e0, &e1, &e0, &e1)
}

/// Evaluate the periodicity-mismatch energy at a control: one driven
/// forward period. The summary is reusable by the gradient.
pub fn eval_j(
    sys: &AssembledSystem,
    control: &ControlPair,
    scheme: Scheme,
    steps: StepsSpec,
) -> Result<(f64, TrajectorySummary)> {
    let mut opts = ForwardOptions::new(scheme, 1.0);
    opts.steps = steps;
    let summary = forward(sys, control, &opts)?;
    let j = j_from_terminal(sys, control, &summary.y_end, &summary.yt_end);
    Ok((j, summary))
}

/// Raw gradient of J at the control whose forward summary is given: one
/// backward (adjoint) period. Exact for the discrete map, so central
/// finite differences of the discrete J match it to the difference floor.
pub fn eval_gradient(
    sys: &AssembledSystem,
    control: &ControlPair,
    summary: &TrajectorySummary,
    scheme: Scheme,
) -> RawGradient {
    let n = sys.n_dofs();
    let mut e0 = vec![0.0; n];
    let mut e1 = vec![0.0; n];
    for i in 0..n {
        e0[i] = summary.y_end[i] - control.v0[i];
        e1[i] = summary.yt_end[i] - control.v1[i];
    }
    sys.project_free(&mut e0);
    sys.project_free(&mut e1);
    let adj = adjoint_backward(sys, scheme, summary.steps_per_period, &e0, &e1);
    // g = F^T(K e0, M e1) - (K e0, M e1).
    let mut ke0 = vec![0.0; n];
    sys.stiffness.spmv(&e0, &mut ke0);
    let mut g0 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    for i in 0..n {
        g0[i] = adj.a[i] - ke0[i];
        g1[i] = adj.b[i] - sys.mass_lumped[i] * e1[i];
    }
    sys.project_free(&mut g0);
    sys.project_free(&mut g1);
    RawGradient { g0, g1 }
}

// ---------------------------------------------------------------------------
// Riesz representative
// ---------------------------------------------------------------------------

/// Riesz smoothing of the raw gradient: solve `K g0~ = g0` on the free
/// DOFs (deflating the constant when no Dirichlet part pins it) and scale
/// `g1~ = M^{-1} g1`, so energy inner products against the representative
/// reproduce the L2 pairing of the raw gradient.
pub fn riesz_representative(
    sys: &AssembledSystem,
    raw: &RawGradient,
    rtol: f64,
) -> Result<ControlPair> {
    let n = sys.n_dofs();
    let keep: Vec<bool> = sys.space.dirichlet.iter().map(|d| !d).collect();
    let (kf, map) = sys.stiffness.restrict(&keep);
    let mut bf = vec![0.0; kf.n()];
    for d in 0..n {
        if let Some(fd) = map[d] {
            bf[fd] = raw.g0[d];
        }
    }
    let mut opts = PcgOptions::new(rtol, 20 * kf.n() + 100).with_jacobi(&kf);
    if !sys.has_dirichlet() {
        opts.project_constants = true;
    }
    let sol = pcg(&kf, &bf, &opts)?;
    if !sol.converged {
        return Err(Error::NoConvergence(format!(
            "Riesz elliptic solve stalled at relative residual {:.3e} after {} iterations",
            sol.residual_history.last().copied().unwrap_or(f64::NAN),
            sol.iterations
        )));
    }
    let mut g0 = vec![0.0; n];
    for d in 0..n {
        if let Some(fd) = map[d] {
            g0[d] = sol.x[fd];
        }
    }
    let mut g1: Vec<f64> = raw
        .g1
        .iter()
        .zip(&sys.mass_lumped)
        .map(|(g, m)| g / m)
        .collect();
    sys.project_free(&mut g1);
    Ok(ControlPair { v0: g0, v1: g1 })
}

// ---------------------------------------------------------------------------
// stopping criteria
// ---------------------------------------------------------------------------

/// Relative periodicity misfit `sqrt(J) / (||f|| + ||g_S||)`, or the
/// absolute value `sqrt(J)` in absolute mode.
pub fn periodicity_misfit(sys: &AssembledSystem, j: f64, mode: MisfitMode) -> Result<f64> {
    match mode {
        MisfitMode::Absolute => Ok(j.max(0.0).sqrt()),
        MisfitMode::Relative => {
            if sys.misfit_denominator <= 0.0 {
                Err(Error::ZeroMisfitDenominator)
            } else {
                Ok(j.max(0.0).sqrt() / sys.misfit_denominator)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// the CMCG loop
// ---------------------------------------------------------------------------

/// Minimize J by conjugate gradients and return the time-harmonic field.
///
/// `h_ref` enables per-iteration Helmholtz residuals against a reference
/// (typically non-lumped) frequency-domain assembly.
pub fn cmcg_solve(
    sys: &AssembledSystem,
    opts: &CmcgOptions,
    h_ref: Option<&HelmholtzSystem>,
) -> Result<CmcgResult> {
    let clock = Instant::now();
    let n = sys.n_dofs();
    let steps = steps_per_period(sys, opts.scheme, opts.steps)?;
    let steps_spec = StepsSpec::Exact(steps);
    let misfit_mode = if sys.misfit_denominator > 0.0 {
        MisfitMode::Relative
    } else {
        MisfitMode::Absolute
    };
    let mut periods = 0.0f64;

    // Initial guess: zero control, or the ramped run-up state.
    let mut v = ControlPair::zero(sys);
    if opts.runup_periods > 0 {
        let t_tr = opts.runup_periods as f64 * sys.period();
        let mut fo = ForwardOptions::new(opts.scheme, opts.runup_periods as f64);
        fo.runup_t_tr = Some(t_tr);
        fo.steps = steps_spec;
        let s = forward(sys, &v, &fo)?;
        v = ControlPair {
            v0: s.y_end,
            v1: s.yt_end,
        };
        v.enforce_constraints(sys);
        periods += opts.runup_periods as f64;
    }

    // Gradient at the initial guess (driven forward + backward).
    let (j, summary) = eval_j(sys, &v, opts.scheme, steps_spec)?;
    let mut term_y = summary.y_end.clone();
    let mut term_yt = summary.yt_end.clone();
    let g = eval_gradient(sys, &v, &summary, opts.scheme);
    periods += 2.0;
    let gt = riesz_representative(sys, &g, opts.riesz_rtol)?;

    let mut r = gt.clone();
    let mut d = gt;
    let r0_energy = energy_dot(sys, &r.v0, &r.v1, &r.v0, &r.v1);
    let mut history = Vec::new();
    let record = |iter: usize,
                      rel: f64,
                      j: f64,
                      u_probe: Option<&ComplexField>,
                      periods: f64,
                      history: &mut Vec<IterationRecord>| {
        let misfit = periodicity_misfit(sys, j, misfit_mode).unwrap_or(f64::NAN);
        let residual_h = match (h_ref, u_probe) {
            (Some(hs), Some(u)) => Some(hs.residual(u)),
            _ => None,
        };
        history.push(IterationRecord {
            iter,
            residual_cg: rel,
            misfit_j: misfit,
            residual_h,
            cumulative_wave_periods: periods,
            wall_time_s: clock.elapsed().as_secs_f64(),
        });
    };

    let u_of = |v: &ControlPair| v.to_complex(sys.omega);
    record(0, 1.0, j, Some(&u_of(&v)), periods, &mut history);

    let initially_done = match opts.stop {
        StopRule::CgResidual => r0_energy <= 0.0,
        StopRule::Misfit => {
            history.last().map(|r| r.misfit_j <= opts.tol).unwrap_or(false) || r0_energy <= 0.0
        }
    };
    if initially_done {
        // Zero initial residual: the control already minimizes J.
        let (filtered, u, extra) = finalize(sys, &v, opts, steps_spec)?;
        return Ok(CmcgResult {
            u,
            control: v,
            history,
            converged: true,
            iterations: 0,
            total_wave_periods: periods + extra,
            filtered,
        });
    }

    let mut rr = r0_energy;
    let mut j_cur = j;
    let mut converged = false;
    let mut iterations = 0;
    let mut stop_reason: Option<&str> = None;

    for iter in 1..=opts.max_iter {
        // Zero-data forward/backward pair from the direction d: the linear
        // part of the gradient map.
        let mut fo = ForwardOptions::new(opts.scheme, 1.0);
        fo.forcing = false;
        fo.steps = steps_spec;
        let sd = forward(sys, &d, &fo)?;
        let gd = {
            let mut e0 = vec![0.0; n];
            let mut e1 = vec![0.0; n];
            for i in 0..n {
                e0[i] = sd.y_end[i] - d.v0[i];
                e1[i] = sd.yt_end[i] - d.v1[i];
            }
            sys.project_free(&mut e0);
            sys.project_free(&mut e1);
            let adj = adjoint_backward(sys, opts.scheme, steps, &e0, &e1);
            let mut ke0 = vec![0.0; n];
            sys.stiffness.spmv(&e0, &mut ke0);
            let mut g0 = vec![0.0; n];
            let mut g1 = vec![0.0; n];
            for i in 0..n {
                g0[i] = adj.a[i] - ke0[i];
                g1[i] = adj.b[i] - sys.mass_lumped[i] * e1[i];
            }
            sys.project_free(&mut g0);
            sys.project_free(&mut g1);
            RawGradient { g0, g1 }
        };
        periods += 2.0;
        let gtd = riesz_representative(sys, &gd, opts.riesz_rtol)?;

        let denom = energy_dot(sys, &gtd.v0, &gtd.v1, &d.v0, &d.v1);
        if !(denom > 0.0) {
            // Numerically semidefinite direction: cannot improve further.
            stop_reason = Some("indefinite curvature");
            iterations = iter - 1;
            break;
        }
        let alpha = rr / denom;

        // v <- v - alpha d ; track the driven terminal pair affinely:
        // S(v - alpha d) = S(v) - alpha S_0(d).
        for i in 0..n {
            if !sys.space.dirichlet[i] {
                v.v0[i] -= alpha * d.v0[i];
                v.v1[i] -= alpha * d.v1[i];
                term_y[i] -= alpha * sd.y_end[i];
                term_yt[i] -= alpha * sd.yt_end[i];
            }
        }
        // r <- r - alpha g~(d).
        for i in 0..n {
            r.v0[i] -= alpha * gtd.v0[i];
            r.v1[i] -= alpha * gtd.v1[i];
        }
        let rr_new = energy_dot(sys, &r.v0, &r.v1, &r.v0, &r.v1);
        let beta = rr_new / rr;
        debug_assert!(beta >= 0.0);
        for i in 0..n {
            d.v0[i] = r.v0[i] + beta * d.v0[i];
            d.v1[i] = r.v1[i] + beta * d.v1[i];
        }
        rr = rr_new;
        iterations = iter;

        j_cur = j_from_terminal(sys, &v, &term_y, &term_yt);
        let rel = (rr / r0_energy).max(0.0).sqrt();
        record(iter, rel, j_cur, Some(&u_of(&v)), periods, &mut history);
        let stop_value = match opts.stop {
            StopRule::CgResidual => rel,
            StopRule::Misfit => history.last().map(|r| r.misfit_j).unwrap_or(f64::NAN),
        };
        if stop_value <= opts.tol {
            converged = true;
            break;
        }
    }
    let _ = j_cur;
    if let Some(reason) = stop_reason {
        // Recorded as non-converged; the best iterate is returned.
        let _ = reason;
    }

    let (filtered, u, extra) = finalize(sys, &v, opts, steps_spec)?;
    Ok(CmcgResult {
        u,
        control: v,
        history,
        converged,
        iterations,
        total_wave_periods: periods + extra,
        filtered,
    })
}

/// Apply the final filtering pass when requested: one extra driven forward
/// period accumulating the fundamental harmonic of the minimizing
/// trajectory.
fn finalize(
    sys: &AssembledSystem,
    v: &ControlPair,
    opts: &CmcgOptions,
    steps: StepsSpec,
) -> Result<(Option<FilteredSolution>, ComplexField, f64)> {
    if !opts.filter {
        return Ok((None, v.to_complex(sys.omega), 0.0));
    }
    let mut fo = ForwardOptions::new(opts.scheme, 1.0);
    fo.steps = steps;
    fo.with_filter = true;
    let summary = forward(sys, v, &fo)?;
    let y_hat = filtering::filter_second_order(&summary)?;
    // The drift correction needs the problem data integrals, which the
    // assembled system carries via its loads; reconstruct the pieces the
    // formula needs directly from the stored load vectors would tie it to
    // the basis, so the caller-facing path goes through the problem. Here
    // the correction is deferred to `cmcg_solve_problem`.
    Ok((
        Some(FilteredSolution {
            u: y_hat.clone(),
            eta: 0.0,
            eta_imag_residual: 0.0,
            lambda_shift: Complex64::new(0.0, 0.0),
        }),
        y_hat,
        1.0,
    ))
}

/// CMCG with the filtering corrections wired to the problem data: the
/// pure-Neumann drift correction needs the data integrals of the
/// compatibility identity.
pub fn cmcg_solve_problem(
    sys: &AssembledSystem,
    problem: &HelmholtzProblem,
    opts: &CmcgOptions,
    h_ref: Option<&HelmholtzSystem>,
) -> Result<CmcgResult> {
    let mut result = cmcg_solve(sys, opts, h_ref)?;
    if let Some(filtered) = result.filtered.take() {
        let corrected = filtering::correct_filtered(sys, problem, filtered.u)?;
        result.u = corrected.u.clone();
        result.filtered = Some(corrected);
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// do-nothing comparator
// ---------------------------------------------------------------------------

pub struct DoNothingResult {
    /// Periodicity misfit |w^(l)|_J at each period boundary l = 1..n.
    pub misfit: Vec<f64>,
    /// The extracted field w(., nT) + (i/omega) w_t(., nT).
    pub w_final: ComplexField,
    pub misfit_mode: MisfitMode,
    pub steps_per_period: usize,
}

/// Integrate the driven wave equation from zero data for `n_periods`
/// periods without any controllability, reporting the periodicity misfit
/// of each period-boundary state.
pub fn do_nothing_solve(
    sys: &AssembledSystem,
    n_periods: usize,
    smoothing: Option<usize>,
    scheme: Scheme,
    steps: StepsSpec,
) -> Result<DoNothingResult> {
    if n_periods < 1 {
        return Err(Error::invalid("do-nothing needs at least one period"));
    }
    let misfit_mode = if sys.misfit_denominator > 0.0 {
        MisfitMode::Relative
    } else {
        MisfitMode::Absolute
    };
    let control = ControlPair::zero(sys);
    // One extra period so the misfit of the state at nT (which compares
    // consecutive period boundaries) is available.
    let mut fo = ForwardOptions::new(scheme, (n_periods + 1) as f64);
    fo.steps = steps;
    fo.runup_t_tr = smoothing.map(|ell| ell as f64 * sys.period());
    let mut boundary_states: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(n_periods + 1);
    let mut w_final = ComplexField::zeros(sys.n_dofs());
    let summary = forward_observed(sys, &control, &fo, |j, y, yt| {
        if j <= n_periods {
            boundary_states.push((y.to_vec(), yt.to_vec()));
        }
        if j == n_periods {
            w_final = ComplexField {
                re: y.to_vec(),
                im: yt.iter().map(|v| v / sys.omega).collect(),
            };
        }
    })?;
    let _ = summary;

    // J of the state at l T is the energy mismatch between consecutive
    // period boundaries.
    let mut misfit = Vec::with_capacity(n_periods);
    for l in 1..=n_periods {
        let (ref y_l, ref yt_l) = boundary_states[l - 1];
        let probe = ControlPair {
            v0: y_l.clone(),
            v1: yt_l.clone(),
        };
        let (y_next, yt_next) = if l < boundary_states.len() {
            (&boundary_states[l].0, &boundary_states[l].1)
        } else {
            (&summary.y_end, &summary.yt_end)
        };
        let j = j_from_terminal(sys, &probe, y_next, yt_next);
        misfit.push(periodicity_misfit(sys, j, misfit_mode)?);
    }
    Ok(DoNothingResult {
        misfit,
        w_final,
        misfit_mode,
        steps_per_period: summary.steps_per_period,
    })
}

// ---------------------------------------------------------------------------
// first-order (mixed) path
// ---------------------------------------------------------------------------

use crate::hdg1d::{
    filtered_field, hdg_adjoint, hdg_rk4_forward, post_process_field, project_neumann_flux,
    ElementField, HdgSpaces, HdgState,
};

#[derive(Debug, Clone)]
pub struct MixedCmcgOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub steps_floor: usize,
    /// Apply the superconvergent local post-processing to the filtered
    /// output.
    pub post_process: bool,
}

impl MixedCmcgOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        MixedCmcgOptions {
            tol,
            max_iter,
            steps_floor: 0,
            post_process: true,
        }
    }
}

pub struct MixedCmcgResult {
    /// Filter-extracted field (post-processed when requested).
    pub u: ElementField,
    /// Filter-extracted field without post-processing.
    pub u_plain: ElementField,
    pub control: HdgState,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub total_wave_periods: f64,
}

/// Evaluate the mixed periodicity-mismatch energy at a control: one driven
/// forward period. Returns the energy and the terminal state.
pub fn eval_j_mixed(
    spaces: &HdgSpaces,
    control: &HdgState,
    steps: usize,
) -> Result<(f64, HdgState)> {
    let summary = hdg_rk4_forward(spaces, control, 1, steps, true, false)?;
    let mut e = summary.end.clone();
    e.axpy(-1.0, control);
    Ok((0.5 * spaces.energy_dot(&e, &e), summary.end))
}

/// Energy gradient of the mixed functional at a control whose driven
/// terminal state is given: the backward adjoint pass applied to the
/// terminal mismatch, minus the mismatch.
pub fn eval_gradient_mixed(
    spaces: &HdgSpaces,
    control: &HdgState,
    terminal: &HdgState,
    steps: usize,
) -> HdgState {
    let mut e = terminal.clone();
    e.axpy(-1.0, control);
    let mut g = hdg_adjoint(spaces, &e, steps);
    g.axpy(-1.0, &e);
    project_neumann_flux(spaces, &mut g);
    g
}

/// CMCG on the first-order formulation: CG iterates on the initial pair
/// `(p0, v0)` in the energy (weighted `L2`) inner product; no elliptic
/// Riesz solve is needed. Returns the filter-extracted field.
pub fn cmcg_solve_mixed(spaces: &HdgSpaces, opts: &MixedCmcgOptions) -> Result<MixedCmcgResult> {
    let clock = Instant::now();
    let steps = spaces.steps_per_period(opts.steps_floor);
    let misfit_mode = if spaces.misfit_denominator > 0.0 {
        MisfitMode::Relative
    } else {
        MisfitMode::Absolute
    };
    let misfit = |j: f64| -> f64 {
        match misfit_mode {
            MisfitMode::Relative => j.max(0.0).sqrt() / spaces.misfit_denominator,
            MisfitMode::Absolute => j.max(0.0).sqrt(),
        }
    };
    let mut periods = 0.0f64;
    let mut x = HdgState::zeros(spaces);

    let (j0, mut term) = eval_j_mixed(spaces, &x, steps)?;
    let g = eval_gradient_mixed(spaces, &x, &term, steps);
    periods += 2.0;
    let mut r = g.clone();
    let mut d = g;
    let r0 = spaces.energy_dot(&r, &r);
    let mut history = vec![IterationRecord {
        iter: 0,
        residual_cg: 1.0,
        misfit_j: misfit(j0),
        residual_h: None,
        cumulative_wave_periods: periods,
        wall_time_s: clock.elapsed().as_secs_f64(),
    }];

    let mut converged = r0 <= 0.0;
    let mut iterations = 0;
    let mut rr = r0;
    if !converged {
        for iter in 1..=opts.max_iter {
            let w = hdg_rk4_forward(spaces, &d, 1, steps, false, false)?.end;
            let mut e_d = w.clone();
            e_d.axpy(-1.0, &d);
            let mut z = hdg_adjoint(spaces, &e_d, steps);
            z.axpy(-1.0, &e_d);
            project_neumann_flux(spaces, &mut z);
            periods += 2.0;

            let denom = spaces.energy_dot(&z, &d);
            if !(denom > 0.0) {
                iterations = iter - 1;
                break;
            }
            let alpha = rr / denom;
            x.axpy(-alpha, &d);
            term.axpy(-alpha, &w);
            r.axpy(-alpha, &z);
            let rr_new = spaces.energy_dot(&r, &r);
            let beta = rr_new / rr;
            for i in 0..d.p.len() {
                d.p[i] = r.p[i] + beta * d.p[i];
                d.v[i] = r.v[i] + beta * d.v[i];
            }
            rr = rr_new;
            iterations = iter;

            let mut e = term.clone();
            e.axpy(-1.0, &x);
            let j = 0.5 * spaces.energy_dot(&e, &e);
            let rel = (rr / r0).max(0.0).sqrt();
            history.push(IterationRecord {
                iter,
                residual_cg: rel,
                misfit_j: misfit(j),
                residual_h: None,
                cumulative_wave_periods: periods,
                wall_time_s: clock.elapsed().as_secs_f64(),
            });
            if rel <= opts.tol {
                converged = true;
                break;
            }
        }
    }

    // Final filtered extraction over one driven period.
    let summary = hdg_rk4_forward(spaces, &x, 1, steps, true, true)?;
    periods += 1.0;
    let acc = summary.filter.expect("filter requested");
    let u_plain = filtered_field(spaces, &acc.v);
    let u = if opts.post_process {
        let uv = crate::filtering::filter_first_order(&acc.v, spaces.omega);
        let uvhat = crate::filtering::filter_first_order(&acc.vhat, spaces.omega);
        post_process_field(spaces, &uv, &uvhat)
    } else {
        ElementField {
            coeffs: u_plain.coeffs.clone(),
            nb: u_plain.nb,
        }
    };

    Ok(MixedCmcgResult {
        u,
        u_plain,
        control: x,
        history,
        converged,
        iterations,
        total_wave_periods: periods,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fem::{build_space, WaveSpeed};
    use crate::mesh::{generate_interval, BoundaryTag};

    fn sound_soft_1d(nel: usize, order: usize, k: f64) -> (AssembledSystem, HelmholtzProblem) {
        // u = -e^{ikx}: g_D = -1 at x = 0, the impedance trace vanishes.
        let mesh = Arc::new(
            generate_interval(nel, 0.0, 1.0, BoundaryTag::Dirichlet, BoundaryTag::Sommerfeld)
                .unwrap(),
        );
        let space = build_space(&mesh, order).unwrap();
        let problem = HelmholtzProblem::new(k, WaveSpeed::Constant(1.0))
            .unwrap()
            .with_dirichlet(Box::new(|_| Complex64::new(-1.0, 0.0)));
        let sys = AssembledSystem::assemble(space, &problem).unwrap();
        (sys, problem)
    }

    #[test]
    fn j_is_nonnegative_for_random_controls() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let (sys, _) = sound_soft_1d(8, 1, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut c = ControlPair::zero(&sys);
            for i in 0..sys.n_dofs() {
                if !sys.space.dirichlet[i] {
                    c.v0[i] = rng.gen::<f64>() - 0.5;
                    c.v1[i] = rng.gen::<f64>() - 0.5;
                }
            }
            let (j, _) = eval_j(&sys, &c, Scheme::Rk4, StepsSpec::Auto { floor: 16 }).unwrap();
            assert!(j >= 0.0);
        }
    }

    #[test]
    fn riesz_inverts_constructed_right_hand_side() {
        let (sys, _) = sound_soft_1d(16, 2, 3.0);
        let n = sys.n_dofs();
        // g0 = K w for a known free-DOF w: the representative returns w.
        let mut w = vec![0.0; n];
        for (i, p) in sys.space.dof_coords.iter().enumerate() {
            if !sys.space.dirichlet[i] {
                w[i] = (2.2 * p[0]).sin();
            }
        }
        // K restricted to free DOFs applied to w.
        let keep: Vec<bool> = sys.space.dirichlet.iter().map(|d| !d).collect();
        let (kf, map) = sys.stiffness.restrict(&keep);
        let mut wf = vec![0.0; kf.n()];
        for d in 0..n {
            if let Some(fd) = map[d] {
                wf[fd] = w[d];
            }
        }
        let gf = kf.apply(&wf);
        let mut g0 = vec![0.0; n];
        for d in 0..n {
            if let Some(fd) = map[d] {
                g0[d] = gf[fd];
            }
        }
        let raw = RawGradient {
            g0,
            g1: vec![0.0; n],
        };
        let gt = riesz_representative(&sys, &raw, 1e-13).unwrap();
        for d in 0..n {
            assert!((gt.v0[d] - w[d]).abs() < 1e-9, "dof {d}");
            assert_eq!(gt.v1[d], 0.0);
        }

        // Zero right-hand side gives the zero representative.
        let zero = RawGradient {
            g0: vec![0.0; n],
            g1: vec![0.0; n],
        };
        let gz = riesz_representative(&sys, &zero, 1e-12).unwrap();
        assert!(gz.v0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn riesz_projects_constants_without_dirichlet() {
        let mesh = Arc::new(
            generate_interval(12, 0.0, 1.0, BoundaryTag::Neumann, BoundaryTag::Neumann).unwrap(),
        );
        let space = build_space(&mesh, 1).unwrap();
        let problem = HelmholtzProblem::new(2.0, WaveSpeed::Constant(1.0)).unwrap();
        let sys = AssembledSystem::assemble(space, &problem).unwrap();
        let n = sys.n_dofs();
        let g0: Vec<f64> = (0..n).map(|i| (i as f64 * 0.77).sin()).collect();
        let raw = RawGradient {
            g0,
            g1: vec![0.0; n],
        };
        let gt = riesz_representative(&sys, &raw, 1e-12).unwrap();
        let mean: f64 = gt.v0.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-10, "mean {mean:.3e}");
    }

    #[test]
    fn zero_sources_converge_in_zero_iterations() {
        let mesh = Arc::new(
            generate_interval(8, 0.0, 1.0, BoundaryTag::Dirichlet, BoundaryTag::Sommerfeld)
                .unwrap(),
        );
        let space = build_space(&mesh, 1).unwrap();
        let problem = HelmholtzProblem::new(2.0, WaveSpeed::Constant(1.0)).unwrap();
        let sys = AssembledSystem::assemble(space, &problem).unwrap();
        let opts = CmcgOptions::new(Scheme::Rk4, 1e-10, 50);
        let res = cmcg_solve(&sys, &opts, None).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
        assert!(res.u.norm2() == 0.0);
    }

    #[test]
    fn first_history_record_has_unit_residual() {
        let (sys, _) = sound_soft_1d(12, 1, 2.5);
        let mut opts = CmcgOptions::new(Scheme::Rk4, 1e-6, 40);
        opts.steps = StepsSpec::Auto { floor: 32 };
        let res = cmcg_solve(&sys, &opts, None).unwrap();
        assert_eq!(res.history[0].iter, 0);
        assert_eq!(res.history[0].residual_cg, 1.0);
        // J never increases along the iteration (up to roundoff).
        for w in res.history.windows(2) {
            assert!(
                w[1].misfit_j <= w[0].misfit_j + 1e-12,
                "misfit grew: {} -> {}",
                w[0].misfit_j,
                w[1].misfit_j
            );
        }
        assert!(res.converged);
    }

    #[test]
    fn constrained_dofs_stay_fixed_across_iterations() {
        let (sys, _) = sound_soft_1d(12, 2, 2.0);
        let mut opts = CmcgOptions::new(Scheme::Rk4, 1e-8, 60);
        opts.steps = StepsSpec::Auto { floor: 32 };
        let res = cmcg_solve(&sys, &opts, None).unwrap();
        for d in 0..sys.n_dofs() {
            if sys.space.dirichlet[d] {
                assert_eq!(res.control.v0[d], sys.dirichlet_re[d]);
                assert_eq!(res.control.v1[d], sys.omega * sys.dirichlet_im[d]);
            }
        }
    }

    #[test]
    fn do_nothing_zero_sources_triggers_absolute_mode() {
        let mesh = Arc::new(
            generate_interval(8, 0.0, 1.0, BoundaryTag::Dirichlet, BoundaryTag::Sommerfeld)
                .unwrap(),
        );
        let space = build_space(&mesh, 1).unwrap();
        let problem = HelmholtzProblem::new(2.0, WaveSpeed::Constant(1.0)).unwrap();
        let sys = AssembledSystem::assemble(space, &problem).unwrap();
        let res =
            do_nothing_solve(&sys, 3, None, Scheme::Rk4, StepsSpec::Auto { floor: 16 }).unwrap();
        assert_eq!(res.misfit_mode, MisfitMode::Absolute);
        assert!(res.misfit.iter().all(|m| *m == 0.0));
        assert!(res.w_final.norm2() == 0.0);
    }

    use num_complex::Complex64;
}
