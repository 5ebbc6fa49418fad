//! Redundant terminal equalities: nullspace projection against relaxing the
//! equalities into interior-point boxes.

use trajsqp::problems::instance_seed;
use trajsqp::{problem_library, solve_default, EqMode, ProblemParams, SolverSettings};

fn main() {
    let instances = 20;
    for mode in [EqMode::Projection, EqMode::Ipm] {
        let settings = SolverSettings::default().with_eq_mode(mode);
        let mut solved = 0;
        let mut iters = 0;
        for i in 0..instances {
            let params = ProblemParams {
                seed: instance_seed(0, i),
                rank_deficient: true,
                ..ProblemParams::default()
            };
            let problem = problem_library("unicycle_reach", &params).expect("built-in problem");
            let (_, rep) = solve_default(&problem, &settings);
            if rep.converged() {
                solved += 1;
                iters += rep.iterations;
            }
        }
        let mean = if solved > 0 {
            iters as f64 / solved as f64
        } else {
            f64::NAN
        };
        println!("{mode:?}: solved {solved}/{instances}, mean iterations {mean:.1}");
    }
}
