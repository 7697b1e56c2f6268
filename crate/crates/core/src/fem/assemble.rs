//! Operator and load assembly for the second-order formulation.
//!
//! Assembled objects: stiffness `K`, consistent and lumped `1/c^2` mass,
//! lumped `1/c` boundary mass on the impedance part, and the time-harmonic
//! load pair such that the discrete drive at time `t` is
//! `L_re cos(omega t) + L_im sin(omega t)` (the real part of the complex
//! load times `exp(-i omega t)`).
//!
//! Volume terms use Gauss rules exact for degree `2 r`; boundary terms use
//! trace rules of the same exactness. Element matrices are symmetric and
//! both triangles accumulate identical contributions, so assembled
//! operators are symmetric bitwise.

use num_complex::Complex64;

use super::problem::HelmholtzProblem;
use super::quadrature::{
    gauss_legendre, gauss_lobatto, lagrange_derivs, lagrange_values, triangle_rule,
};
use super::space::FeSpace;
use crate::error::{Error, Result};
use crate::linalg::{ComplexField, SparseOperator, TripletBuilder};
use crate::mesh::BoundaryTag;

/// Time-harmonic load vectors: volume (`f_*`) and boundary (`g_*`) parts.
#[derive(Debug, Clone)]
pub struct Loads {
    pub f_re: Vec<f64>,
    pub f_im: Vec<f64>,
    pub g_re: Vec<f64>,
    pub g_im: Vec<f64>,
}

impl Loads {
    /// Combined complex load vector (volume + boundary).
    pub fn combined(&self) -> (Vec<f64>, Vec<f64>) {
        let re = self
            .f_re
            .iter()
            .zip(&self.g_re)
            .map(|(a, b)| a + b)
            .collect();
        let im = self
            .f_im
            .iter()
            .zip(&self.g_im)
            .map(|(a, b)| a + b)
            .collect();
        (re, im)
    }
}

// ---------------------------------------------------------------------------
// local basis evaluation
// ---------------------------------------------------------------------------

/// Barycentric gradients of a triangle, row i = grad lambda_i.
fn grad_lambda(p: [[f64; 2]; 3], area: f64) -> [[f64; 2]; 3] {
    let f = 1.0 / (2.0 * area);
    [
        [f * (p[1][1] - p[2][1]), f * (p[2][0] - p[1][0])],
        [f * (p[2][1] - p[0][1]), f * (p[0][0] - p[2][0])],
        [f * (p[0][1] - p[1][1]), f * (p[1][0] - p[0][0])],
    ]
}

/// Values of the local triangle basis at a barycentric point.
fn tri_basis_values(order: usize, l: [f64; 3]) -> Vec<f64> {
    match order {
        1 => vec![l[0], l[1], l[2]],
        2 => vec![
            l[0] * (2.0 * l[0] - 1.0),
            l[1] * (2.0 * l[1] - 1.0),
            l[2] * (2.0 * l[2] - 1.0),
            4.0 * l[0] * l[1],
            4.0 * l[1] * l[2],
            4.0 * l[2] * l[0],
        ],
        _ => unreachable!(),
    }
}

/// Derivatives of the local triangle basis with respect to the barycentric
/// coordinates at a barycentric point; row i = dphi_i/dlambda.
fn tri_basis_dlambda(order: usize, l: [f64; 3]) -> Vec<[f64; 3]> {
    match order {
        1 => vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        2 => vec![
            [4.0 * l[0] - 1.0, 0.0, 0.0],
            [0.0, 4.0 * l[1] - 1.0, 0.0],
            [0.0, 0.0, 4.0 * l[2] - 1.0],
            [4.0 * l[1], 4.0 * l[0], 0.0],
            [0.0, 4.0 * l[2], 4.0 * l[1]],
            [4.0 * l[2], 0.0, 4.0 * l[0]],
        ],
        _ => unreachable!(),
    }
}

fn tri_corners(space: &FeSpace, e: usize) -> ([[f64; 2]; 3], f64) {
    let el = &space.mesh.elements[e];
    let p = [
        space.mesh.vertices[el[0]],
        space.mesh.vertices[el[1]],
        space.mesh.vertices[el[2]],
    ];
    (p, space.mesh.element_measure(e))
}

// ---------------------------------------------------------------------------
// operators
// ---------------------------------------------------------------------------

/// Stiffness `K_ij = int grad(phi_i) . grad(phi_j)`.
pub fn assemble_stiffness(space: &FeSpace) -> SparseOperator {
    let nd = space.dofs_per_elem;
    let mut tb = TripletBuilder::new(space.n_dofs);
    if space.mesh.dim == 1 {
        let (nodes, _) = gauss_lobatto(space.order);
        let (qx, qw) = gauss_legendre(space.order + 1);
        let dphi: Vec<Vec<f64>> = qx.iter().map(|&t| lagrange_derivs(&nodes, t)).collect();
        for e in 0..space.mesh.n_elements() {
            let h = space.mesh.element_measure(e);
            let mut kloc = vec![0.0; nd * nd];
            for (q, w) in qw.iter().enumerate() {
                for i in 0..nd {
                    for j in 0..nd {
                        // Scale applied to the commutative product so the
                        // local matrix stays symmetric bitwise.
                        kloc[i * nd + j] += (w / h) * (dphi[q][i] * dphi[q][j]);
                    }
                }
            }
            scatter(&mut tb, space.element_dofs(e), &kloc);
        }
    } else {
        let rule = triangle_rule(2 * space.order);
        for e in 0..space.mesh.n_elements() {
            let (p, area) = tri_corners(space, e);
            let gl = grad_lambda(p, area);
            let mut kloc = vec![0.0; nd * nd];
            for (l, w) in rule {
                let dl = tri_basis_dlambda(space.order, *l);
                let mut g = vec![[0.0; 2]; nd];
                for i in 0..nd {
                    for j in 0..3 {
                        g[i][0] += dl[i][j] * gl[j][0];
                        g[i][1] += dl[i][j] * gl[j][1];
                    }
                }
                for i in 0..nd {
                    for j in 0..nd {
                        kloc[i * nd + j] += w * area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                    }
                }
            }
            scatter(&mut tb, space.element_dofs(e), &kloc);
        }
    }
    tb.build()
}

/// Consistent mass `M_ij = int coeff phi_i phi_j`, `coeff` per element
/// (typically `1/c^2`).
pub fn assemble_mass_consistent(space: &FeSpace, coeff: &[f64]) -> SparseOperator {
    assert_eq!(coeff.len(), space.mesh.n_elements());
    let nd = space.dofs_per_elem;
    let mut tb = TripletBuilder::new(space.n_dofs);
    if space.mesh.dim == 1 {
        let (nodes, _) = gauss_lobatto(space.order);
        let (qx, qw) = gauss_legendre(space.order + 1);
        let phi: Vec<Vec<f64>> = qx.iter().map(|&t| lagrange_values(&nodes, t)).collect();
        for e in 0..space.mesh.n_elements() {
            let h = space.mesh.element_measure(e);
            let mut mloc = vec![0.0; nd * nd];
            for (q, w) in qw.iter().enumerate() {
                let scale = coeff[e] * w * h;
                for i in 0..nd {
                    for j in 0..nd {
                        mloc[i * nd + j] += scale * (phi[q][i] * phi[q][j]);
                    }
                }
            }
            scatter(&mut tb, space.element_dofs(e), &mloc);
        }
    } else {
        let rule = triangle_rule(2 * space.order);
        for e in 0..space.mesh.n_elements() {
            let (_, area) = tri_corners(space, e);
            let mut mloc = vec![0.0; nd * nd];
            for (l, w) in rule {
                let v = tri_basis_values(space.order, *l);
                let scale = coeff[e] * w * area;
                for i in 0..nd {
                    for j in 0..nd {
                        mloc[i * nd + j] += scale * (v[i] * v[j]);
                    }
                }
            }
            scatter(&mut tb, space.element_dofs(e), &mloc);
        }
    }
    tb.build()
}

/// Order-preserving lumped mass diagonal.
///
/// 1D: Gauss-Lobatto nodal weights (row sums of the consistent matrix).
/// 2D P1: row sums (area/3 per corner). 2D P2: positive nodal weights from
/// the bubble-enriched cubic rule with the centroid mass folded back
/// proportionally (1/11 vertices, 8/33 midpoints of the area); exact for
/// linears and mass-preserving.
pub fn assemble_mass_lumped(space: &FeSpace, coeff: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(coeff.len(), space.mesh.n_elements());
    let mut diag = vec![0.0; space.n_dofs];
    if space.mesh.dim == 1 {
        let (_, w) = gauss_lobatto(space.order);
        for e in 0..space.mesh.n_elements() {
            let h = space.mesh.element_measure(e);
            for (i, &d) in space.element_dofs(e).iter().enumerate() {
                diag[d] += coeff[e] * w[i] * h;
            }
        }
    } else {
        let weights: Vec<f64> = match space.order {
            1 => vec![1.0 / 3.0; 3],
            2 => vec![
                1.0 / 11.0,
                1.0 / 11.0,
                1.0 / 11.0,
                8.0 / 33.0,
                8.0 / 33.0,
                8.0 / 33.0,
            ],
            _ => unreachable!(),
        };
        for e in 0..space.mesh.n_elements() {
            let area = space.mesh.element_measure(e);
            for (i, &d) in space.element_dofs(e).iter().enumerate() {
                diag[d] += coeff[e] * weights[i] * area;
            }
        }
    }
    if let Some(i) = diag.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::invalid(format!(
            "nonpositive lumped mass entry at DOF {i}: unsupported element/order combination"
        )));
    }
    Ok(diag)
}

/// Lumped boundary mass on the Sommerfeld part with coefficient `1/c`:
/// diagonal `B_ii ~ int_{Gamma_S} (1/c) phi_i^2` lumped on the trace.
/// Returns the zero diagonal when `Gamma_S` is empty.
pub fn assemble_boundary_mass(space: &FeSpace, c_elem: &[f64]) -> Vec<f64> {
    let mut diag = vec![0.0; space.n_dofs];
    for (fi, f) in space.mesh.boundary.iter().enumerate() {
        if f.tag != BoundaryTag::Sommerfeld {
            continue;
        }
        let c = c_elem[space.facet_elem[fi]];
        let dofs = &space.facet_dofs[fi];
        if space.mesh.dim == 1 {
            diag[dofs[0]] += 1.0 / c;
        } else {
            let len = space.mesh.facet_measure(f);
            let w: &[f64] = match space.order {
                1 => &[0.5, 0.5],
                2 => &[1.0 / 6.0, 1.0 / 6.0, 4.0 / 6.0],
                _ => unreachable!(),
            };
            for (i, &d) in dofs.iter().enumerate() {
                diag[d] += w[i] * len / c;
            }
        }
    }
    diag
}

/// Consistent boundary mass on the Sommerfeld part (used by the
/// frequency-domain reference assembly).
pub fn assemble_boundary_mass_consistent(space: &FeSpace, c_elem: &[f64]) -> SparseOperator {
    let mut tb = TripletBuilder::new(space.n_dofs);
    let tn = space.trace_nodes();
    for (fi, f) in space.mesh.boundary.iter().enumerate() {
        if f.tag != BoundaryTag::Sommerfeld {
            continue;
        }
        let c = c_elem[space.facet_elem[fi]];
        let dofs = &space.facet_dofs[fi];
        if space.mesh.dim == 1 {
            tb.add(dofs[0], dofs[0], 1.0 / c);
        } else {
            let len = space.mesh.facet_measure(f);
            let (qx, qw) = gauss_legendre(space.order + 1);
            let nd = dofs.len();
            let mut bloc = vec![0.0; nd * nd];
            for (q, w) in qw.iter().enumerate() {
                let v = lagrange_values(&tn, qx[q]);
                let scale = w * len / c;
                for i in 0..nd {
                    for j in 0..nd {
                        bloc[i * nd + j] += scale * (v[i] * v[j]);
                    }
                }
            }
            scatter(&mut tb, dofs, &bloc);
        }
    }
    tb.build()
}

fn scatter(tb: &mut TripletBuilder, dofs: &[usize], local: &[f64]) {
    let nd = dofs.len();
    for i in 0..nd {
        for j in 0..nd {
            let v = local[i * nd + j];
            if v != 0.0 {
                tb.add(dofs[i], dofs[j], v);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// loads and data integrals
// ---------------------------------------------------------------------------

/// Assemble the time-harmonic volume and boundary loads. At time `t` the
/// discrete load is `(F_re + G_re) cos(omega t) + (F_im + G_im) sin(omega t)`
/// since `Re{z exp(-i omega t)} = Re(z) cos + Im(z) sin`.
pub fn assemble_time_harmonic_loads(space: &FeSpace, problem: &HelmholtzProblem) -> Loads {
    let n = space.n_dofs;
    let mut loads = Loads {
        f_re: vec![0.0; n],
        f_im: vec![0.0; n],
        g_re: vec![0.0; n],
        g_im: vec![0.0; n],
    };
    if let Some(f) = &problem.f {
        for_volume_quad(space, |x, dofs, phi, dmeas| {
            let v = f(x);
            for (i, &d) in dofs.iter().enumerate() {
                loads.f_re[d] += dmeas * v.re * phi[i];
                loads.f_im[d] += dmeas * v.im * phi[i];
            }
        });
    }
    for (tag, data) in [
        (BoundaryTag::Sommerfeld, &problem.g_s),
        (BoundaryTag::Neumann, &problem.g_n),
    ] {
        let Some(g) = data else { continue };
        for_boundary_quad(space, tag, |x, n_out, dofs, phi, dmeas| {
            let v = g(x, n_out);
            for (i, &d) in dofs.iter().enumerate() {
                loads.g_re[d] += dmeas * v.re * phi[i];
                loads.g_im[d] += dmeas * v.im * phi[i];
            }
        });
    }
    loads
}

/// Complex Dirichlet values at constrained DOFs (zero elsewhere).
pub fn dirichlet_values(space: &FeSpace, problem: &HelmholtzProblem) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; space.n_dofs];
    let mut im = vec![0.0; space.n_dofs];
    if let Some(g) = &problem.g_d {
        for d in 0..space.n_dofs {
            if space.dirichlet[d] {
                let v = g(space.dof_coords[d]);
                re[d] = v.re;
                im[d] = v.im;
            }
        }
    }
    (re, im)
}

/// Visit volume quadrature points: callback(x, element dofs, basis values,
/// weight * measure).
pub fn for_volume_quad(space: &FeSpace, mut cb: impl FnMut([f64; 2], &[usize], &[f64], f64)) {
    integrate_per_element(space, |_e, x, dofs, phi, dmeas| cb(x, dofs, phi, dmeas));
}

/// Visit boundary quadrature points on facets with the given tag:
/// callback(x, outward normal, facet dofs, trace basis values, weight * ds).
pub fn for_boundary_quad(
    space: &FeSpace,
    tag: BoundaryTag,
    mut cb: impl FnMut([f64; 2], [f64; 2], &[usize], &[f64], f64),
) {
    let tn = space.trace_nodes();
    for (fi, f) in space.mesh.boundary.iter().enumerate() {
        if f.tag != tag {
            continue;
        }
        let n_out = space.mesh.facet_normal(f);
        let dofs = &space.facet_dofs[fi];
        if space.mesh.dim == 1 {
            let x = space.mesh.vertices[f.vertices[0]];
            cb(x, n_out, dofs, &[1.0], 1.0);
        } else {
            let a = space.mesh.vertices[f.vertices[0]];
            let b = space.mesh.vertices[f.vertices[1]];
            let len = space.mesh.facet_measure(f);
            let (qx, qw) = gauss_legendre(space.order + 1);
            for (q, w) in qw.iter().enumerate() {
                let t = qx[q];
                let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                let phi = lagrange_values(&tn, t);
                cb(x, n_out, dofs, &phi, w * len);
            }
        }
    }
}

/// `int_Omega coeff(x) u_h(x) dx` with `coeff` per element, complex field.
pub fn integrate_field_coeff(space: &FeSpace, u: &ComplexField, coeff: &[f64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    integrate_per_element(space, |e, _x, dofs, phi, dmeas| {
        let mut v = Complex64::new(0.0, 0.0);
        for (i, &d) in dofs.iter().enumerate() {
            v += Complex64::new(u.re[d], u.im[d]) * phi[i];
        }
        acc += coeff[e] * v * dmeas;
    });
    acc
}

/// Volume quadrature visit with the element index exposed.
pub fn integrate_per_element(
    space: &FeSpace,
    mut cb: impl FnMut(usize, [f64; 2], &[usize], &[f64], f64),
) {
    if space.mesh.dim == 1 {
        let (nodes, _) = gauss_lobatto(space.order);
        let (qx, qw) = gauss_legendre(space.order + 1);
        let phis: Vec<Vec<f64>> = qx.iter().map(|&t| lagrange_values(&nodes, t)).collect();
        for e in 0..space.mesh.n_elements() {
            let [a, b, _] = space.mesh.elements[e];
            let (xa, xb) = (space.mesh.vertices[a][0], space.mesh.vertices[b][0]);
            let h = xb - xa;
            for (q, w) in qw.iter().enumerate() {
                cb(
                    e,
                    [xa + qx[q] * h, 0.0],
                    space.element_dofs(e),
                    &phis[q],
                    w * h,
                );
            }
        }
    } else {
        let rule = triangle_rule(2 * space.order);
        for e in 0..space.mesh.n_elements() {
            let (p, area) = tri_corners(space, e);
            for (l, w) in rule {
                let x = [
                    l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                    l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
                ];
                let phi = tri_basis_values(space.order, *l);
                cb(e, x, space.element_dofs(e), &phi, w * area);
            }
        }
    }
}

/// `int_Omega f(x) dx` for complex data.
pub fn integrate_data_volume(
    space: &FeSpace,
    f: impl Fn([f64; 2]) -> Complex64,
) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    integrate_per_element(space, |_e, x, _d, _p, dmeas| acc += f(x) * dmeas);
    acc
}

/// `int_{tagged boundary} g(x, n) ds` for complex boundary data.
pub fn integrate_data_boundary(
    space: &FeSpace,
    tag: BoundaryTag,
    g: impl Fn([f64; 2], [f64; 2]) -> Complex64,
) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for_boundary_quad(space, tag, |x, n, _d, _p, dmeas| acc += g(x, n) * dmeas);
    acc
}

/// `int_{tagged boundary} coeff u_h ds` with `coeff` per facet element.
pub fn integrate_field_boundary(
    space: &FeSpace,
    tag: BoundaryTag,
    u: &ComplexField,
    coeff_elem: &[f64],
) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    let tn = space.trace_nodes();
    for (fi, f) in space.mesh.boundary.iter().enumerate() {
        if f.tag != tag {
            continue;
        }
        let coeff = coeff_elem[space.facet_elem[fi]];
        let dofs = &space.facet_dofs[fi];
        if space.mesh.dim == 1 {
            acc += coeff * Complex64::new(u.re[dofs[0]], u.im[dofs[0]]);
        } else {
            let len = space.mesh.facet_measure(f);
            let (qx, qw) = gauss_legendre(space.order + 1);
            for (q, w) in qw.iter().enumerate() {
                let phi = lagrange_values(&tn, qx[q]);
                let mut v = Complex64::new(0.0, 0.0);
                for (i, &d) in dofs.iter().enumerate() {
                    v += Complex64::new(u.re[d], u.im[d]) * phi[i];
                }
                acc += coeff * v * w * len;
            }
        }
    }
    acc
}

/// L2 norm of complex volume data.
pub fn l2_norm_data_volume(space: &FeSpace, f: impl Fn([f64; 2]) -> Complex64) -> f64 {
    let mut acc = 0.0;
    integrate_per_element(space, |_e, x, _d, _p, dmeas| acc += f(x).norm_sqr() * dmeas);
    acc.sqrt()
}

/// L2 norm of complex boundary data on the tagged part.
pub fn l2_norm_data_boundary(
    space: &FeSpace,
    tag: BoundaryTag,
    g: impl Fn([f64; 2], [f64; 2]) -> Complex64,
) -> f64 {
    let mut acc = 0.0;
    for_boundary_quad(space, tag, |x, n, _d, _p, dmeas| {
        acc += g(x, n).norm_sqr() * dmeas
    });
    acc.sqrt()
}

/// L2 error of a FE field against a closed-form solution, with elevated
/// quadrature so the measurement does not pollute convergence rates.
pub fn l2_error_vs(
    space: &FeSpace,
    u: &ComplexField,
    exact: impl Fn([f64; 2]) -> Complex64,
) -> f64 {
    let mut acc = 0.0;
    if space.mesh.dim == 1 {
        let (nodes, _) = gauss_lobatto(space.order);
        let (qx, qw) = gauss_legendre((space.order + 3).min(6));
        for e in 0..space.mesh.n_elements() {
            let [a, b, _] = space.mesh.elements[e];
            let (xa, xb) = (space.mesh.vertices[a][0], space.mesh.vertices[b][0]);
            let h = xb - xa;
            let dofs = space.element_dofs(e);
            for (q, w) in qw.iter().enumerate() {
                let phi = lagrange_values(&nodes, qx[q]);
                let mut v = Complex64::new(0.0, 0.0);
                for (i, &d) in dofs.iter().enumerate() {
                    v += Complex64::new(u.re[d], u.im[d]) * phi[i];
                }
                let x = [xa + qx[q] * h, 0.0];
                acc += (v - exact(x)).norm_sqr() * w * h;
            }
        }
    } else {
        let rule = triangle_rule(5);
        for e in 0..space.mesh.n_elements() {
            let (p, area) = tri_corners(space, e);
            let dofs = space.element_dofs(e);
            for (l, w) in rule {
                let x = [
                    l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                    l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
                ];
                let phi = tri_basis_values(space.order, *l);
                let mut v = Complex64::new(0.0, 0.0);
                for (i, &d) in dofs.iter().enumerate() {
                    v += Complex64::new(u.re[d], u.im[d]) * phi[i];
                }
                acc += (v - exact(x)).norm_sqr() * w * area;
            }
        }
    }
    acc.sqrt()
}

/// Nodal interpolation of complex data.
pub fn interpolate(space: &FeSpace, f: impl Fn([f64; 2]) -> Complex64) -> ComplexField {
    let mut u = ComplexField::zeros(space.n_dofs);
    for d in 0..space.n_dofs {
        let v = f(space.dof_coords[d]);
        u.re[d] = v.re;
        u.im[d] = v.im;
    }
    u
}

// ---------------------------------------------------------------------------
// assembled system
// ---------------------------------------------------------------------------

/// Everything the explicit wave steppers need, assembled once.
pub struct AssembledSystem {
    pub space: FeSpace,
    pub stiffness: SparseOperator,
    pub mass_lumped: Vec<f64>,
    /// Lumped Gamma_S boundary mass with coefficient 1/c.
    pub boundary_mass: Vec<f64>,
    pub loads: Loads,
    pub dirichlet_re: Vec<f64>,
    pub dirichlet_im: Vec<f64>,
    pub c_elem: Vec<f64>,
    pub omega: f64,
    /// `||f||_{L2(Omega)} + ||g_S||_{L2(Gamma_S)}`, the relative-misfit
    /// denominator; zero when there are no such sources.
    pub misfit_denominator: f64,
}

impl AssembledSystem {
    pub fn assemble(space: FeSpace, problem: &HelmholtzProblem) -> Result<Self> {
        let c_elem = problem.c.per_element(&space.mesh)?;
        let inv_c2: Vec<f64> = c_elem.iter().map(|c| 1.0 / (c * c)).collect();
        let stiffness = assemble_stiffness(&space);
        let mass_lumped = assemble_mass_lumped(&space, &inv_c2)?;
        let boundary_mass = assemble_boundary_mass(&space, &c_elem);
        let loads = assemble_time_harmonic_loads(&space, problem);
        let (dirichlet_re, dirichlet_im) = dirichlet_values(&space, problem);
        let mut denom = 0.0;
        if let Some(f) = &problem.f {
            denom += l2_norm_data_volume(&space, f);
        }
        if let Some(g) = &problem.g_s {
            denom += l2_norm_data_boundary(&space, BoundaryTag::Sommerfeld, g);
        }
        Ok(AssembledSystem {
            space,
            stiffness,
            mass_lumped,
            boundary_mass,
            loads,
            dirichlet_re,
            dirichlet_im,
            c_elem,
            omega: problem.omega,
            misfit_denominator: denom,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }

    pub fn has_dirichlet(&self) -> bool {
        self.space.dirichlet.iter().any(|d| *d)
    }

    /// k = omega / c per element.
    pub fn k_elem(&self) -> Vec<f64> {
        self.c_elem.iter().map(|c| self.omega / c).collect()
    }

    /// Consistent `1/c^2` mass (not stored; assembled on demand).
    pub fn mass_consistent(&self) -> SparseOperator {
        let inv_c2: Vec<f64> = self.c_elem.iter().map(|c| 1.0 / (c * c)).collect();
        assemble_mass_consistent(&self.space, &inv_c2)
    }

    /// Zero the constrained entries of a vector in place.
    pub fn project_free(&self, v: &mut [f64]) {
        for (x, &fixed) in v.iter_mut().zip(&self.space.dirichlet) {
            if fixed {
                *x = 0.0;
            }
        }
    }

    /// Dirichlet trace values at time t: Re{g_D e^{-i omega t}} and its
    /// time derivative.
    pub fn dirichlet_at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let (c, s) = ((self.omega * t).cos(), (self.omega * t).sin());
        let n = self.n_dofs();
        let mut val = vec![0.0; n];
        let mut dval = vec![0.0; n];
        for d in 0..n {
            if self.space.dirichlet[d] {
                val[d] = self.dirichlet_re[d] * c + self.dirichlet_im[d] * s;
                dval[d] = self.omega * (-self.dirichlet_re[d] * s + self.dirichlet_im[d] * c);
            }
        }
        (val, dval)
    }
}
