//! Integration tests of the first-order (mixed) CMCG path: convergence and
//! superconvergence, gradient correctness, and the agreement of the two
//! reconstruction routes.

use std::sync::Arc;

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use cmcg::controllability::{cmcg_solve_mixed, eval_gradient_mixed, eval_j_mixed, MixedCmcgOptions};
use cmcg::fem::{HelmholtzProblem, WaveSpeed};
use cmcg::hdg1d::{build_hdg, HdgSpaces, HdgState, MassCoeff};
use cmcg::mesh::{generate_interval, BoundaryTag};
use cmcg::util::fit_log_slope;

fn sound_soft_spaces(nel: usize, order: usize, k: f64) -> HdgSpaces {
    let mesh = Arc::new(
        generate_interval(nel, 0.0, 1.0, BoundaryTag::Dirichlet, BoundaryTag::Sommerfeld).unwrap(),
    );
    let problem = HelmholtzProblem::new(k, WaveSpeed::Constant(1.0))
        .unwrap()
        .with_dirichlet(Box::new(|_| Complex64::new(-1.0, 0.0)));
    build_hdg(&mesh, order, &problem, MassCoeff::InvC2).unwrap()
}

#[test]
fn mixed_gradient_matches_central_differences() {
    let k = 5.0 * std::f64::consts::PI / 4.0;
    let spaces = sound_soft_spaces(8, 2, k);
    let steps = spaces.steps_per_period(64);
    let n = spaces.nel * spaces.nb;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut x = HdgState::zeros(&spaces);
    for v in x.p.iter_mut().chain(x.v.iter_mut()) {
        *v = rng.gen::<f64>() - 0.5;
    }
    let (_, term) = eval_j_mixed(&spaces, &x, steps).unwrap();
    let g = eval_gradient_mixed(&spaces, &x, &term, steps);
    let xnorm = spaces.energy_dot(&x, &x).sqrt();
    let eps = 1e-5 * xnorm;
    for dir in 0..5 {
        let mut d = HdgState::zeros(&spaces);
        for v in d.p.iter_mut().chain(d.v.iter_mut()) {
            *v = rng.gen::<f64>() - 0.5;
        }
        let mut plus = x.clone();
        plus.axpy(eps, &d);
        let mut minus = x.clone();
        minus.axpy(-eps, &d);
        let (jp, _) = eval_j_mixed(&spaces, &plus, steps).unwrap();
        let (jm, _) = eval_j_mixed(&spaces, &minus, steps).unwrap();
        let fd = (jp - jm) / (2.0 * eps);
        // The gradient lives in the energy inner product.
        let pairing = spaces.energy_dot(&g, &d);
        let rel = (fd - pairing).abs() / pairing.abs().max(1e-300);
        assert!(
            rel < 1e-6,
            "direction {dir}: fd {fd:.12e} vs <g,d>_E {pairing:.12e} (rel {rel:.2e})",
        );
    }
    let _ = n;
}

#[test]
fn zero_data_converges_immediately() {
    let mesh = Arc::new(
        generate_interval(6, 0.0, 1.0, BoundaryTag::Dirichlet, BoundaryTag::Sommerfeld).unwrap(),
    );
    let problem = HelmholtzProblem::new(2.0, WaveSpeed::Constant(1.0)).unwrap();
    let spaces = build_hdg(&mesh, 2, &problem, MassCoeff::InvC2).unwrap();
    let res = cmcg_solve_mixed(&spaces, &MixedCmcgOptions::new(1e-10, 50)).unwrap();
    assert!(res.converged);
    assert_eq!(res.iterations, 0);
    assert!(res.u.coeffs.norm2() < 1e-14);
}

#[test]
fn hdg_r2_converges_and_superconverges() {
    // u = -e^{ikx}: plain filtered output at order r+1, post-processed at
    // r+2.
    let k = 5.0 * std::f64::consts::PI / 4.0;
    let exact = move |x: f64| -Complex64::new(0.0, k * x).exp();
    let mut plain = Vec::new();
    let mut post = Vec::new();
    let mut hs = Vec::new();
    for nel in [8usize, 16, 32, 64] {
        let spaces = sound_soft_spaces(nel, 2, k);
        let mut opts = MixedCmcgOptions::new(1e-12, 2000);
        opts.steps_floor = 32 * nel;
        let res = cmcg_solve_mixed(&spaces, &opts).unwrap();
        assert!(res.converged, "nel = {nel}");
        plain.push(res.u_plain.l2_error_vs(&spaces, exact));
        post.push(res.u.l2_error_vs(&spaces, exact));
        hs.push(1.0 / nel as f64);
    }
    let s_plain = fit_log_slope(&hs, &plain);
    let s_post = fit_log_slope(&hs, &post);
    assert!(
        s_plain >= 2.8,
        "plain HDG order {s_plain:.2}: errors {plain:?}"
    );
    assert!(
        s_post >= 3.7,
        "post-processed order {s_post:.2}: errors {post:?}"
    );
    // Superconvergence gains at least one power: errors visibly smaller.
    for (p, q) in plain.iter().zip(&post) {
        assert!(q < p);
    }
}

#[test]
fn reconstruction_routes_agree() {
    // The direct reconstruction from the minimizer and the filtered
    // extraction agree to discretization order on sound-soft problems.
    let k = 5.0 * std::f64::consts::PI / 4.0;
    let mut diffs = Vec::new();
    let mut hs = Vec::new();
    for nel in [8usize, 16, 32] {
        let spaces = sound_soft_spaces(nel, 2, k);
        let mut opts = MixedCmcgOptions::new(1e-12, 2000);
        opts.steps_floor = 32 * nel;
        let res = cmcg_solve_mixed(&spaces, &opts).unwrap();
        let u21 = cmcg::hdg1d::reconstruct_from_control(&spaces, &res.control);
        // Evaluate the difference in L2 by sampling the plain route.
        let (qx, qw) = cmcg::fem::quadrature::gauss_legendre(5);
        let mut acc = 0.0;
        for e in 0..spaces.nel {
            for (q, w) in qw.iter().enumerate() {
                let x = e as f64 / nel as f64 + qx[q] / nel as f64;
                let d = u21.eval(&spaces, e, x) - res.u_plain.eval(&spaces, e, x);
                acc += w / nel as f64 * d.norm_sqr();
            }
        }
        diffs.push(acc.sqrt());
        hs.push(1.0 / nel as f64);
    }
    // Both reconstruct u; their difference vanishes at least at the lower
    // route's order (r for the divergence route).
    let slope = fit_log_slope(&hs, &diffs);
    assert!(slope >= 1.6, "route agreement order {slope:.2}: {diffs:?}");
    assert!(diffs.last().unwrap() < &1e-3);
}
