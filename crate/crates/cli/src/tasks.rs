//! Task execution: scenario assembly and artifact emission.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;

use cmcg::controllability::{
    cmcg_solve_mixed, cmcg_solve_problem, do_nothing_solve, CmcgOptions, IterationRecord,
    MixedCmcgOptions,
};
use cmcg::error::{Error, Result};
use cmcg::fem::{
    build_space, l2_error_vs, AssembledSystem, FeSpace, HelmholtzProblem, VelocityRaster,
    WaveSpeed,
};
use cmcg::helmholtz_ref::{assemble_helmholtz, resonance_proximity};
use cmcg::hdg1d::{build_hdg, MassCoeff};
use cmcg::mesh::{
    generate_interval, generate_rect_with_obstacle, read_mesh_text, Box2, Mesh, Obstacle,
};
use cmcg::timestepping::{vtk_snapshot, StepsSpec};
use cmcg::util::fit_log_slope;

use crate::config::{
    Config, Domain, Formulation, MassCoeffSpec, ObstacleSpec, Reference, SourceSpec, Task,
};

pub fn run(cfg: &Config, out: &Path, quiet: bool) -> Result<()> {
    match cfg.task {
        Task::Solve => solve(cfg, out, quiet),
        Task::Direct => direct(cfg, out, quiet),
        Task::Converge => converge(cfg, out, quiet),
        Task::Compare => compare(cfg, out, quiet),
        Task::RunupStudy => runup_study(cfg, out, quiet),
    }
}

// ---------------------------------------------------------------------------
// scenario assembly
// ---------------------------------------------------------------------------

fn build_mesh(cfg: &Config) -> Result<Arc<Mesh>> {
    let mesh = match &cfg.domain {
        Domain::Interval {
            a,
            b,
            elements,
            left,
            right,
        } => generate_interval(*elements, *a, *b, left.to_mesh(), right.to_mesh())?,
        Domain::Rectangle {
            x0,
            y0,
            lx,
            ly,
            h,
            obstacle,
        } => {
            let dom = Box2 {
                x0: *x0,
                y0: *y0,
                lx: *lx,
                ly: *ly,
            };
            let obs = match obstacle {
                ObstacleSpec::None => Obstacle::None,
                ObstacleSpec::Square { center, side } => Obstacle::Square {
                    center: *center,
                    side: *side,
                },
                ObstacleSpec::Cavity {
                    center,
                    outer,
                    wall,
                    gap,
                } => Obstacle::OpenCavity {
                    center: *center,
                    outer: *outer,
                    wall: *wall,
                    gap: *gap,
                },
            };
            generate_rect_with_obstacle(dom, obs, *h)?
        }
        Domain::File { path } => read_mesh_text(Path::new(path))?,
    };
    Ok(Arc::new(mesh))
}

fn wave_speed(cfg: &Config) -> Result<WaveSpeed> {
    match (&cfg.physics.c, &cfg.physics.c_raster) {
        (Some(c), None) => Ok(WaveSpeed::Constant(*c)),
        (None, Some(path)) => Ok(VelocityRaster::read(Path::new(path))?.into_wave_speed()),
        (None, None) => Ok(WaveSpeed::Constant(1.0)),
        (Some(_), Some(_)) => Err(Error::invalid("give either physics.c or physics.c_raster")),
    }
}

fn constant_c(cfg: &Config) -> Result<f64> {
    match (&cfg.physics.c, &cfg.physics.c_raster) {
        (Some(c), None) => Ok(*c),
        (None, None) => Ok(1.0),
        _ => Err(Error::invalid(
            "this source kind needs a constant wave speed",
        )),
    }
}

fn build_problem(cfg: &Config) -> Result<HelmholtzProblem> {
    let omega = cfg.physics.omega;
    let mut problem = HelmholtzProblem::new(omega, wave_speed(cfg)?)?;
    // Volume source.
    match &cfg.physics.f {
        SourceSpec::None => {}
        SourceSpec::Constant { re, im } => {
            let (re, im) = (*re, *im);
            problem = problem.with_volume_source(Box::new(move |_| Complex64::new(re, im)));
        }
        SourceSpec::Gaussian {
            center,
            decay,
            amplitude,
        } => {
            let (c, d, a) = (*center, *decay, *amplitude);
            problem = problem.with_volume_source(Box::new(move |x| {
                let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                Complex64::new(a * (-d * r2).exp(), 0.0)
            }));
        }
        SourceSpec::QuarticBump => {
            let k = omega / constant_c(cfg)?;
            problem = problem.with_volume_source(Box::new(move |x| {
                let t = x[0];
                let u = 16.0 * t * t * (t - 1.0) * (t - 1.0);
                let upp = 32.0 * (6.0 * t * t - 6.0 * t + 1.0);
                Complex64::new(-upp - k * k * u, 0.0)
            }));
        }
        SourceSpec::PlaneWave { .. } => {
            return Err(Error::invalid("plane_wave is boundary data, not a volume source"))
        }
    }
    // Dirichlet data.
    match &cfg.physics.g_d {
        SourceSpec::None => {}
        SourceSpec::Constant { re, im } => {
            let (re, im) = (*re, *im);
            problem = problem.with_dirichlet(Box::new(move |_| Complex64::new(re, im)));
        }
        _ => return Err(Error::invalid("g_d must be none or constant")),
    }
    // Neumann data.
    match &cfg.physics.g_n {
        SourceSpec::None => {}
        SourceSpec::Constant { re, im } => {
            let (re, im) = (*re, *im);
            problem = problem.with_neumann(Box::new(move |_, _| Complex64::new(re, im)));
        }
        _ => return Err(Error::invalid("g_n must be none or constant")),
    }
    // Impedance data.
    match &cfg.physics.g_s {
        SourceSpec::None => {}
        SourceSpec::Constant { re, im } => {
            let (re, im) = (*re, *im);
            problem = problem.with_impedance(Box::new(move |_, _| Complex64::new(re, im)));
        }
        SourceSpec::PlaneWave { angle_deg } => {
            let k = omega / constant_c(cfg)?;
            problem = problem.with_impedance(cmcg::fem::plane_wave_scatter_data(
                k,
                angle_deg.to_radians(),
            ));
        }
        _ => return Err(Error::invalid("g_s must be none, constant or plane_wave")),
    }
    Ok(problem)
}

fn steps_spec(cfg: &Config) -> StepsSpec {
    if cfg.discretization.steps_per_period > 0 {
        StepsSpec::Exact(cfg.discretization.steps_per_period)
    } else {
        StepsSpec::Auto {
            floor: cfg.discretization.steps_per_period_floor,
        }
    }
}

/// Run-up length so a wave crosses the domain diagonal once.
fn auto_runup(cfg: &Config, mesh: &Mesh, c_min: f64) -> usize {
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for v in &mesh.vertices {
        for d in 0..2 {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    let diag = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
    let t = 2.0 * std::f64::consts::PI / cfg.physics.omega;
    (diag / (t * c_min)).ceil() as usize
}

fn cmcg_options(cfg: &Config, mesh: &Mesh, c_min: f64) -> CmcgOptions {
    let mut opts = CmcgOptions::new(
        cfg.discretization.scheme.to_scheme(),
        cfg.solver.tol,
        cfg.solver.max_iter,
    );
    opts.runup_periods = if cfg.solver.runup_auto {
        auto_runup(cfg, mesh, c_min)
    } else {
        cfg.solver.runup_periods
    };
    opts.filter = cfg.solver.filter;
    opts.steps = steps_spec(cfg);
    opts.stop = match cfg.solver.stop {
        crate::config::StopRuleSpec::CgResidual => cmcg::controllability::StopRule::CgResidual,
        crate::config::StopRuleSpec::Misfit => cmcg::controllability::StopRule::Misfit,
    };
    opts
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

fn write_history(records: &[IterationRecord], path: &Path) -> Result<()> {
    let mut s = String::from("# cmcg-history-v1\n");
    s.push_str("iter,residual_cg,misfit_J,residual_H,cumulative_wave_periods,wall_time_s\n");
    for r in records {
        let h = r
            .residual_h
            .map(|v| format!("{v:.17e}"))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{:.17e},{:.17e},{},{:.17e},{:.6}",
            r.iter, r.residual_cg, r.misfit_j, h, r.cumulative_wave_periods, r.wall_time_s
        );
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn write_solution_nodal(space: &FeSpace, u: &cmcg::ComplexField, path: &Path) -> Result<()> {
    let mut s = String::from("# cmcg-solution-v1\n");
    if space.mesh.dim == 1 {
        s.push_str("x,re_u,im_u\n");
    } else {
        s.push_str("x,y,re_u,im_u\n");
    }
    // Rows in coordinate order for 1D so the profile reads top to bottom.
    let mut order: Vec<usize> = (0..space.n_dofs).collect();
    if space.mesh.dim == 1 {
        order.sort_by(|a, b| {
            space.dof_coords[*a][0]
                .partial_cmp(&space.dof_coords[*b][0])
                .unwrap()
        });
    }
    for d in order {
        let p = space.dof_coords[d];
        if space.mesh.dim == 1 {
            let _ = writeln!(s, "{:.17e},{:.17e},{:.17e}", p[0], u.re[d], u.im[d]);
        } else {
            let _ = writeln!(
                s,
                "{:.17e},{:.17e},{:.17e},{:.17e}",
                p[0], p[1], u.re[d], u.im[d]
            );
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// tasks
// ---------------------------------------------------------------------------

fn solve(cfg: &Config, out: &Path, quiet: bool) -> Result<()> {
    match cfg.discretization.formulation {
        Formulation::SecondOrder => solve_second_order(cfg, out, quiet),
        Formulation::FirstOrder => solve_first_order(cfg, out, quiet),
    }
}

fn solve_second_order(cfg: &Config, out: &Path, quiet: bool) -> Result<()> {
    let mesh = build_mesh(cfg)?;
    let problem = build_problem(cfg)?;
    let space = build_space(&mesh, cfg.discretization.order)?;
    let href = if cfg.solver.track_helmholtz_residual {
        Some(assemble_helmholtz(&space, &problem, cfg.solver.lumped_reference)?)
    } else {
        None
    };
    let sys = AssembledSystem::assemble(space, &problem)?;
    let c_min = sys.c_elem.iter().cloned().fold(f64::INFINITY, f64::min);
    let opts = cmcg_options(cfg, &mesh, c_min);
    let res = cmcg_solve_problem(&sys, &problem, &opts, href.as_ref())?;
    if !quiet {
        println!(
            "cmcg: {} iterations, converged = {}, wave periods = {}",
            res.iterations, res.converged, res.total_wave_periods
        );
    }
    if cfg.output.history {
        write_history(&res.history, &out.join("history.csv"))?;
    }
    if cfg.output.solution {
        write_solution_nodal(&sys.space, &res.u, &out.join("solution.csv"))?;
    }
    if cfg.output.vtk_snapshots {
        vtk_snapshot(
            &mesh,
            &[("re_u", &res.u.re), ("im_u", &res.u.im)],
            &out.join("solution.vtk"),
        )?;
    }
    Ok(())
}

fn solve_first_order(cfg: &Config, out: &Path, quiet: bool) -> Result<()> {
    let mesh = build_mesh(cfg)?;
    let problem = build_problem(cfg)?;
    let mass = match cfg.discretization.mass_coeff {
        MassCoeffSpec::InvC2 => MassCoeff::InvC2,
        MassCoeffSpec::InvC => MassCoeff::InvC,
    };
    let spaces = build_hdg(&mesh, cfg.discretization.order, &problem, mass)?;
    let mut opts = MixedCmcgOptions::new(cfg.solver.tol, cfg.solver.max_iter);
    opts.steps_floor = cfg.discretization.steps_per_period_floor;
    opts.post_process = cfg.solver.post_process;
    let res = cmcg_solve_mixed(&spaces, &opts)?;
    if !quiet {
        println!(
            "cmcg (first-order): {} iterations, converged = {}",
            res.iterations, res.converged
        );
    }
    if cfg.output.history {
        write_history(&res.history, &out.join("history.csv"))?;
    }
    if cfg.output.solution {
        // Sample each element at its endpoints and midpoint.
        let mut s = String::from("# cmcg-solution-v1\nx,re_u,im_u\n");
        for e in 0..spaces.nel {
            let [a, b, _] = mesh.elements[e];
            let (xa, xb) = (mesh.vertices[a][0], mesh.vertices[b][0]);
            for x in [xa, 0.5 * (xa + xb), xb] {
                let v = res.u.eval(&spaces, e, x);
                let _ = writeln!(s, "{:.17e},{:.17e},{:.17e}", x, v.re, v.im);
            }
        }
        std::fs::write(out.join("solution.csv"), s)?;
    }
    Ok(())
}

fn direct(cfg: &Config, out: &Path, quiet: bool) -> Result<()> {
    let mesh = build_mesh(cfg)?;
    let problem = build_problem(cfg)?;
    let space = build_space(&mesh, cfg.discretization.order)?;
    // Physically bounded problems can sit on a resonance; warn when
    // omega^2 is within 1% of a coarse eigenvalue estimate.
    let bounded = !mesh
        .boundary
        .iter()
        .any(|f| f.tag == cmcg::mesh::BoundaryTag::Sommerfeld);
    if bounded {
        let prox = resonance_proximity(&space, &problem)?;
        if prox < 0.01 && !quiet {
            eprintln!(
                "warning: omega^2 lies within {:.2}% of a discrete eigenvalue estimate; \
                 the Helmholtz system may be near-singular",
                prox * 100.0
            );
        }
    }
    let href = assemble_helmholtz(&space, &problem, cfg.solver.lumped_reference)?;
    let u = href.direct_solve()?;
    if !quiet {
        println!("direct: residual = {:.3e}", href.residual(&u));
    }
    if cfg.output.solution {
        write_solution_nodal(&space, &u, &out.join("solution.csv"))?;
    }
    if cfg.output.vtk_snapshots {
        vtk_snapshot(
            &mesh,
            &[("re_u", &u.re), ("im_u", &u.im)],
            &out.join("solution.vtk"),
        )?;
    }
    Ok(())
}

fn reference_solution(reference: Reference, k: f64) -> Option<Box<dyn Fn([f64; 2]) -> Complex64>> {
    match reference {
        Reference::Direct => None,
        Reference::ExpIkxNeg => Some(Box::new(move |p| -Complex64::new(0.0, k * p[0]).exp())),
        Reference::ExpIkx => Some(Box::new(move |p| Complex64::new(0.0, k * p[0]).exp())),
        Reference::QuarticBump => Some(Box::new(move |p| {
            let t = p[0];
            Complex64::new(16.0 * t * t * (t - 1.0) * (t - 1.0), 0.0)
        })),
    }
}

fn converge(cfg: &Config, out: &Path, quiet: bool) -> Result<()> {
    let Domain::Interval {
        a,
        b,
        left,
        right,
        ..
    } = cfg.domain
    else {
        return Err(Error::invalid("the converge task sweeps 1D meshes"));
    };
    let k = cfg.physics.omega / constant_c(cfg)?;
    let exact = reference_solution(cfg.converge.reference, k);
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for &nel in &cfg.converge.mesh_sizes {
        let mesh = Arc::new(generate_interval(nel, a, b, left.to_mesh(), right.to_mesh())?);
        let problem = build_problem(cfg)?;
        let err = match cfg.discretization.formulation {
            Formulation::SecondOrder => {
                let space = build_space(&mesh, cfg.discretization.order)?;
                let sys = AssembledSystem::assemble(space, &problem)?;
                let mut opts = cmcg_options(cfg, &mesh, 1.0);
                opts.steps = StepsSpec::Auto {
                    floor: cfg.converge.steps_scale * nel,
                };
                opts.filter = true;
                let res = cmcg_solve_problem(&sys, &problem, &opts, None)?;
                match &exact {
                    Some(f) => l2_error_vs(&sys.space, &res.u, f),
                    None => {
                        let href = assemble_helmholtz(&sys.space, &problem, false)?;
                        let u_star = href.direct_solve()?;
                        res.u.sub(&u_star).norm2()
                    }
                }
            }
            Formulation::FirstOrder => {
                let mass = match cfg.discretization.mass_coeff {
                    MassCoeffSpec::InvC2 => MassCoeff::InvC2,
                    MassCoeffSpec::InvC => MassCoeff::InvC,
                };
                let spaces = build_hdg(&mesh, cfg.discretization.order, &problem, mass)?;
                let mut opts = MixedCmcgOptions::new(cfg.solver.tol, cfg.solver.max_iter);
                opts.steps_floor = cfg.converge.steps_scale * nel;
                opts.post_process = cfg.solver.post_process;
                let res = cmcg_solve_mixed(&spaces, &opts)?;
                match &exact {
                    Some(f) => res.u.l2_error_vs(&spaces, |x| f([x, 0.0])),
                    None => {
                        return Err(Error::invalid(
                            "first-order converge needs an analytic reference",
                        ))
                    }
                }
            }
        };
        let h = (b - a) / nel as f64;
        if !quiet {
            println!("converge: n = {nel:4}, h = {h:.4e}, error = {err:.6e}");
        }
        rows.push((h, err));
    }
    let mut s = String::from("# cmcg-orders-v1\nh,error,slope\n");
    for (i, (h, e)) in rows.iter().enumerate() {
        let slope = if i == 0 {
            String::new()
        } else {
            let (h0, e0) = rows[i - 1];
            format!("{:.6}", (e / e0).ln() / (h / h0).ln())
        };
        let _ = writeln!(s, "{h:.17e},{e:.17e},{slope}");
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let fitted = fit_log_slope(&hs, &es);
    let _ = writeln!(s, "# fitted slope: {fitted:.6}");
    std::fs::write(out.join("orders.csv"), s)?;
    if !quiet {
        println!("converge: fitted slope {fitted:.3}");
    }
    Ok(())
}

fn compare(cfg: &Config, out: &Path, quiet: bool) -> Result<()> {
    let mesh = build_mesh(cfg)?;
    let problem = build_problem(cfg)?;
    let space = build_space(&mesh, cfg.discretization.order)?;
    let sys = AssembledSystem::assemble(space, &problem)?;
    let c_min = sys.c_elem.iter().cloned().fold(f64::INFINITY, f64::min);
    let opts = cmcg_options(cfg, &mesh, c_min);
    let res = cmcg_solve_problem(&sys, &problem, &opts, None)?;
    if !quiet {
        println!(
            "compare: cmcg used {} iterations ({} wave periods), final misfit {:.3e}",
            res.iterations,
            res.total_wave_periods,
            res.history.last().map(|r| r.misfit_j).unwrap_or(f64::NAN)
        );
    }
    let periods = cfg.solver.periods.max(res.total_wave_periods.ceil() as usize);
    let scheme = cfg.discretization.scheme.to_scheme();
    let smoothing = cfg.solver.runup_auto.then(|| auto_runup(cfg, &mesh, c_min));
    let dn = do_nothing_solve(&sys, periods, smoothing, scheme, steps_spec(cfg))?;
    if !quiet {
        println!(
            "compare: do-nothing misfit after {} periods = {:.3e}",
            periods,
            dn.misfit.last().copied().unwrap_or(f64::NAN)
        );
    }
    if cfg.output.history {
        write_history(&res.history, &out.join("history.csv"))?;
    }
    // Side-by-side misfit table indexed by wave-equation periods.
    let mut s = String::from("# cmcg-compare-v1\nperiods,cmcg_misfit,do_nothing_misfit\n");
    let max_p = periods;
    for p in 1..=max_p {
        let cm = res
            .history
            .iter()
            .take_while(|r| r.cumulative_wave_periods <= p as f64)
            .last()
            .map(|r| format!("{:.17e}", r.misfit_j))
            .unwrap_or_default();
        let dnm = dn
            .misfit
            .get(p - 1)
            .map(|v| format!("{v:.17e}"))
            .unwrap_or_default();
        let _ = writeln!(s, "{p},{cm},{dnm}");
    }
    std::fs::write(out.join("compare.csv"), s)?;
    if cfg.output.vtk_snapshots {
        vtk_snapshot(
            &mesh,
            &[("re_w", &dn.w_final.re), ("im_w", &dn.w_final.im)],
            &out.join("do_nothing_final.vtk"),
        )?;
    }
    Ok(())
}

fn runup_study(cfg: &Config, out: &Path, quiet: bool) -> Result<()> {
    let mesh = build_mesh(cfg)?;
    let problem = build_problem(cfg)?;
    let space = build_space(&mesh, cfg.discretization.order)?;
    let sys = AssembledSystem::assemble(space, &problem)?;
    let c_min = sys.c_elem.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut s = String::from("# cmcg-runup-v1\nell,iterations,total_periods,converged\n");
    for &ell in &cfg.runup.ells {
        let mut opts = cmcg_options(cfg, &mesh, c_min);
        opts.runup_periods = ell;
        let res = cmcg_solve_problem(&sys, &problem, &opts, None)?;
        let total = ell + 2 * res.iterations;
        if !quiet {
            println!(
                "runup-study: ell = {ell:3} -> {} iterations, {} total periods",
                res.iterations, total
            );
        }
        let _ = writeln!(s, "{ell},{},{},{}", res.iterations, total, res.converged);
    }
    std::fs::write(out.join("runup.csv"), s)?;
    Ok(())
}
