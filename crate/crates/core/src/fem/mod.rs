//! Continuous Lagrange finite elements and assembly of the second-order
//! wave / Helmholtz operators with order-preserving mass lumping.

mod assemble;
mod problem;
pub mod quadrature;
mod raster;
mod space;

pub use assemble::{
    assemble_boundary_mass, assemble_boundary_mass_consistent, assemble_mass_consistent,
    assemble_mass_lumped, assemble_stiffness, assemble_time_harmonic_loads, dirichlet_values,
    for_boundary_quad, for_volume_quad, integrate_data_boundary, integrate_data_volume,
    integrate_field_boundary, integrate_field_coeff, integrate_per_element, interpolate,
    l2_error_vs, l2_norm_data_boundary, l2_norm_data_volume, AssembledSystem, Loads,
};
pub use problem::{
    plane_wave, plane_wave_scatter_data, BoundaryData, HelmholtzProblem, ScalarData, WaveSpeed,
};
pub use raster::VelocityRaster;
pub use space::{build_space, FeSpace};
