//! Controllability-method solvers for the Helmholtz equation.
//!
//! Instead of attacking the indefinite frequency-domain system head on, the
//! solvers here integrate the time-dependent wave equation and steer its
//! initial data towards the `T`-periodic state with a conjugate-gradient
//! iteration on the periodicity-mismatch energy (CMCG). The time-harmonic
//! field is then read off the periodic trajectory; a spectral filter removes
//! the spurious constant, linear-in-time and higher-harmonic modes that can
//! contaminate the minimizer under Neumann or impedance-only boundary
//! conditions.
//!
//! Two discretization paths are provided:
//!
//! * second-order form: continuous Lagrange elements (`P1`/`P2` in 1D/2D,
//!   `P3` in 1D) with order-preserving mass lumping, leap-frog or RK4 time
//!   stepping and an `H1` Riesz smoothing solve per CG iteration
//!   ([`controllability`]);
//! * first-order (mixed) form in 1D: hybridizable discontinuous Galerkin
//!   elements with a block-diagonal mass matrix, RK4 stepping and a local
//!   superconvergent post-processing ([`hdg1d`]).
//!
//! A sparse direct solve of the frequency-domain system ([`helmholtz_ref`])
//! provides the reference solution and the Helmholtz residual diagnostic.

pub mod controllability;
pub mod error;
pub mod fem;
pub mod filtering;
pub mod hdg1d;
pub mod helmholtz_ref;
pub mod linalg;
pub mod mesh;
pub mod timestepping;
pub mod util;

pub use error::{Error, Result};
pub use linalg::{ComplexField, SparseOperator};
pub use mesh::{BoundaryTag, Mesh};
