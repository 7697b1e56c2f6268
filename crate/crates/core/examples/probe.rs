use std::sync::Arc;
use cmcg::controllability::*;
use cmcg::fem::{build_space, AssembledSystem, HelmholtzProblem, WaveSpeed};
use cmcg::mesh::{generate_rect_with_obstacle, Box2, Obstacle};
use cmcg::timestepping::*;

fn main() {
    let k = 2.0 * std::f64::consts::PI;
    let dom = Box2 { x0: 0.0, y0: 0.0, lx: 5.0, ly: 5.0 };
    let obs = Obstacle::Square { center: [2.5, 2.5], side: 1.0 };
    let mesh = Arc::new(generate_rect_with_obstacle(dom, obs, 1.0/12.0).unwrap());
    let space = build_space(&mesh, 1).unwrap();
    let problem = HelmholtzProblem::new(k, WaveSpeed::Constant(1.0)).unwrap()
        .with_impedance(cmcg::fem::plane_wave_scatter_data(k, 135f64.to_radians()));
    let sys = AssembledSystem::assemble(space, &problem).unwrap();
    let steps = steps_per_period(&sys, Scheme::Leapfrog, StepsSpec::Auto { floor: 48 }).unwrap();
    println!("steps/period = {steps}, dofs = {}", sys.n_dofs());
    for ell in [0usize, 2, 5, 10, 20] {
        // Build the run-up state exactly as cmcg_solve does.
        let mut v = ControlPair::zero(&sys);
        if ell > 0 {
            let mut fo = ForwardOptions::new(Scheme::Leapfrog, ell as f64);
            fo.runup_t_tr = Some(ell as f64 * sys.period());
            fo.steps = StepsSpec::Exact(steps);
            let s = forward(&sys, &v, &fo).unwrap();
            v = ControlPair { v0: s.y_end, v1: s.yt_end };
            v.enforce_constraints(&sys);
        }
        let (j, summary) = eval_j(&sys, &v, Scheme::Leapfrog, StepsSpec::Exact(steps)).unwrap();
        let g = eval_gradient(&sys, &v, &summary, Scheme::Leapfrog);
        let gt = riesz_representative(&sys, &g, 1e-12).unwrap();
        let r0 = energy_dot(&sys, &gt.v0, &gt.v1, &gt.v0, &gt.v1);
        println!("ell={ell:3}: J = {j:.6e}, r0_energy = {r0:.6e}");
    }
}
