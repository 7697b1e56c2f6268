//! Declarative run configuration. Unknown keys are rejected everywhere so
//! typos fail loudly instead of silently running defaults.

use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// One of: solve | direct | converge | compare | runup-study.
    pub task: Task,
    pub domain: Domain,
    pub physics: Physics,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub converge: Converge,
    #[serde(default)]
    pub runup: Runup,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Solve,
    Direct,
    Converge,
    Compare,
    RunupStudy,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Interval {
        a: f64,
        b: f64,
        elements: usize,
        left: Tag,
        right: Tag,
    },
    Rectangle {
        x0: f64,
        y0: f64,
        lx: f64,
        ly: f64,
        h: f64,
        #[serde(default)]
        obstacle: ObstacleSpec,
    },
    File {
        path: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Dirichlet,
    Neumann,
    Sommerfeld,
}

impl Tag {
    pub fn to_mesh(self) -> cmcg::mesh::BoundaryTag {
        match self {
            Tag::Dirichlet => cmcg::mesh::BoundaryTag::Dirichlet,
            Tag::Neumann => cmcg::mesh::BoundaryTag::Neumann,
            Tag::Sommerfeld => cmcg::mesh::BoundaryTag::Sommerfeld,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ObstacleSpec {
    #[default]
    None,
    Square {
        center: [f64; 2],
        side: f64,
    },
    Cavity {
        center: [f64; 2],
        outer: f64,
        wall: f64,
        gap: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub omega: f64,
    /// Constant wave speed, or a raster file.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub c_raster: Option<String>,
    #[serde(default)]
    pub f: SourceSpec,
    #[serde(default)]
    pub g_d: SourceSpec,
    #[serde(default)]
    pub g_n: SourceSpec,
    #[serde(default)]
    pub g_s: SourceSpec,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    #[default]
    None,
    Constant {
        #[serde(default)]
        re: f64,
        #[serde(default)]
        im: f64,
    },
    /// `amplitude * exp(-decay * |x - center|^2)`, real-valued.
    Gaussian {
        center: [f64; 2],
        decay: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Volume source of the manufactured quartic-bump solution
    /// `u = 16 x^2 (1-x)^2` on the unit interval (needs constant c).
    QuarticBump,
    /// Impedance data of total-field plane-wave scattering,
    /// `g_S = -(d/dn - ik) u_in` (needs constant c).
    PlaneWave {
        angle_deg: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    #[serde(default)]
    pub formulation: Formulation,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub scheme: SchemeSpec,
    /// 0 = CFL-derived step count.
    #[serde(default)]
    pub steps_per_period: usize,
    #[serde(default)]
    pub steps_per_period_floor: usize,
    /// HDG v-equation mass coefficient.
    #[serde(default)]
    pub mass_coeff: MassCoeffSpec,
}

fn default_order() -> usize {
    2
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization {
            formulation: Formulation::SecondOrder,
            order: 2,
            scheme: SchemeSpec::Rk4,
            steps_per_period: 0,
            steps_per_period_floor: 0,
            mass_coeff: MassCoeffSpec::InvC2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    #[default]
    SecondOrder,
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeSpec {
    Leapfrog,
    #[default]
    Rk4,
}

impl SchemeSpec {
    pub fn to_scheme(self) -> cmcg::timestepping::Scheme {
        match self {
            SchemeSpec::Leapfrog => cmcg::timestepping::Scheme::Leapfrog,
            SchemeSpec::Rk4 => cmcg::timestepping::Scheme::Rk4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MassCoeffSpec {
    #[default]
    InvC2,
    InvC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopRuleSpec {
    #[default]
    CgResidual,
    Misfit,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solver {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub stop: StopRuleSpec,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub runup_periods: usize,
    /// Pick the run-up length so a wave crosses the domain once.
    #[serde(default)]
    pub runup_auto: bool,
    #[serde(default)]
    pub filter: bool,
    #[serde(default = "default_true")]
    pub post_process: bool,
    #[serde(default)]
    pub track_helmholtz_residual: bool,
    /// Periods integrated by the do-nothing comparator.
    #[serde(default = "default_periods")]
    pub periods: usize,
    /// Assemble the frequency-domain reference with lumped mass.
    #[serde(default)]
    pub lumped_reference: bool,
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    2000
}
fn default_true() -> bool {
    true
}
fn default_periods() -> usize {
    100
}

impl Default for Solver {
    fn default() -> Self {
        Solver {
            tol: default_tol(),
            stop: StopRuleSpec::default(),
            max_iter: default_max_iter(),
            runup_periods: 0,
            runup_auto: false,
            filter: false,
            post_process: true,
            track_helmholtz_residual: false,
            periods: default_periods(),
            lumped_reference: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Converge {
    #[serde(default = "default_sizes")]
    pub mesh_sizes: Vec<usize>,
    /// Steps-per-period floor scale: floor = scale * elements.
    #[serde(default = "default_steps_scale")]
    pub steps_scale: usize,
    #[serde(default)]
    pub reference: Reference,
}

fn default_sizes() -> Vec<usize> {
    vec![8, 16, 32, 64]
}
fn default_steps_scale() -> usize {
    32
}

impl Default for Converge {
    fn default() -> Self {
        Converge {
            mesh_sizes: default_sizes(),
            steps_scale: default_steps_scale(),
            reference: Reference::Direct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Non-lumped direct solve on the same mesh.
    #[default]
    Direct,
    /// u = -exp(ikx) (1D benchmark).
    ExpIkxNeg,
    /// u = exp(ikx) (1D benchmark).
    ExpIkx,
    /// u = 16 x^2 (1-x)^2 (1D benchmark).
    QuarticBump,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Runup {
    #[serde(default = "default_ells")]
    pub ells: Vec<usize>,
}

fn default_ells() -> Vec<usize> {
    vec![0, 2, 5, 10, 20]
}

impl Default for Runup {
    fn default() -> Self {
        Runup {
            ells: default_ells(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_true")]
    pub history: bool,
    #[serde(default = "default_true")]
    pub solution: bool,
    #[serde(default)]
    pub vtk_snapshots: bool,
}

impl Default for Output {
    fn default() -> Self {
        Output {
            history: true,
            solution: true,
            vtk_snapshots: false,
        }
    }
}
