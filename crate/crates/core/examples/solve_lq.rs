//! A random equality-constrained LQ problem is solved by one full Newton step.

use trajsqp::problems::lq::{lq_random, LqShape};
use trajsqp::{solve_default, SolverSettings};

fn main() {
    let shape = LqShape {
        horizon: 10,
        nx: 4,
        nu: 3,
        nc: 1,
        ns: 1,
        implicit: true,
        ..LqShape::default()
    };
    let problem = lq_random(&shape, 7);
    let settings = SolverSettings {
        abs_tol: 1e-8,
        ..SolverSettings::default()
    };
    let (sol, rep) = solve_default(&problem, &settings);
    println!(
        "status {:?} after {} iteration(s)",
        rep.status, rep.iterations
    );
    println!("step length {}", rep.trace[0].alpha);
    println!("final KKT {:.2e}", rep.final_kkt.total);
    println!("x_N = {:.4?}", sol.x[shape.horizon].as_slice());
}
