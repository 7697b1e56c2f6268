//! Problem data for the Helmholtz boundary-value problem
//!
//!   -Laplace(u) - k^2 u = f        in Omega,   k = omega / c,
//!   du/dn - i k u       = g_S      on Gamma_S,
//!   du/dn               = g_N      on Gamma_N,
//!   u                   = g_D      on Gamma_D,
//!
//! and its time-domain counterpart driven by Re{ data * exp(-i omega t) }.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Complex-valued field of position.
pub type ScalarData = Box<dyn Fn([f64; 2]) -> Complex64 + Send + Sync>;
/// Complex-valued boundary data of position and outward unit normal.
pub type BoundaryData = Box<dyn Fn([f64; 2], [f64; 2]) -> Complex64 + Send + Sync>;

/// Wave speed c(x) > 0.
pub enum WaveSpeed {
    Constant(f64),
    /// One value per mesh element.
    PerElement(Vec<f64>),
    Function(Box<dyn Fn([f64; 2]) -> f64 + Send + Sync>),
}

impl WaveSpeed {
    /// Per-element values, sampled at centroids for the function variant.
    pub fn per_element(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        let vals = match self {
            WaveSpeed::Constant(c) => vec![*c; mesh.n_elements()],
            WaveSpeed::PerElement(v) => {
                if v.len() != mesh.n_elements() {
                    return Err(Error::DimensionMismatch {
                        expected: mesh.n_elements(),
                        got: v.len(),
                    });
                }
                v.clone()
            }
            WaveSpeed::Function(f) => (0..mesh.n_elements())
                .map(|e| f(mesh.element_centroid(e)))
                .collect(),
        };
        if vals.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::invalid("wave speed must be positive everywhere"));
        }
        Ok(vals)
    }
}

/// Geometry-independent problem data: frequency, medium, sources.
pub struct HelmholtzProblem {
    /// Angular frequency (rad/s).
    pub omega: f64,
    pub c: WaveSpeed,
    pub f: Option<ScalarData>,
    pub g_d: Option<ScalarData>,
    pub g_n: Option<BoundaryData>,
    pub g_s: Option<BoundaryData>,
}

impl HelmholtzProblem {
    pub fn new(omega: f64, c: WaveSpeed) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(Error::invalid("omega must be positive"));
        }
        Ok(HelmholtzProblem {
            omega,
            c,
            f: None,
            g_d: None,
            g_n: None,
            g_s: None,
        })
    }

    /// Period of the time-harmonic drive.
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }

    pub fn with_volume_source(mut self, f: ScalarData) -> Self {
        self.f = Some(f);
        self
    }

    pub fn with_dirichlet(mut self, g: ScalarData) -> Self {
        self.g_d = Some(g);
        self
    }

    pub fn with_neumann(mut self, g: BoundaryData) -> Self {
        self.g_n = Some(g);
        self
    }

    pub fn with_impedance(mut self, g: BoundaryData) -> Self {
        self.g_s = Some(g);
        self
    }
}

/// Incident plane wave exp(i k x . d) with direction angle theta.
pub fn plane_wave(k: f64, theta_rad: f64) -> impl Fn([f64; 2]) -> Complex64 + Copy {
    move |x: [f64; 2]| {
        let phase = k * (x[0] * theta_rad.cos() + x[1] * theta_rad.sin());
        Complex64::new(0.0, phase).exp()
    }
}

/// Impedance data of a scattering problem on the total field:
/// g_S = -(d/dn - i k) u_in for the incident plane wave.
pub fn plane_wave_scatter_data(k: f64, theta_rad: f64) -> BoundaryData {
    let uin = plane_wave(k, theta_rad);
    let d = [theta_rad.cos(), theta_rad.sin()];
    Box::new(move |x, n| {
        let u = uin(x);
        let dn = Complex64::new(0.0, k * (d[0] * n[0] + d[1] * n[1])) * u;
        -(dn - Complex64::new(0.0, k) * u)
    })
}
