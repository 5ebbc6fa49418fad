//! Nonlinear swing-up with force limits, printing the iteration trace.

use trajsqp::{problem_library, solve_default, ProblemParams, SolverSettings};

fn main() {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let problem = problem_library(
        "cartpole_swingup",
        &ProblemParams {
            seed,
            ..ProblemParams::default()
        },
    )
    .expect("built-in problem");
    let (sol, rep) = solve_default(&problem, &SolverSettings::default());
    println!("iter   kkt        mu         sigma    alpha    corrector");
    for r in &rep.trace {
        println!(
            "{:>4}   {:.2e}   {:.2e}   {:>6}   {:.4}   {:?}",
            r.iter,
            r.kkt.total,
            r.mu,
            r.sigma.map_or("-".into(), |s| format!("{s:.3}")),
            r.alpha,
            r.corrector_accepted
        );
    }
    println!(
        "{:?}: KKT {:.2e}, {} linear solves",
        rep.status, rep.final_kkt.total, rep.qp_count
    );
    let n = problem.horizon();
    println!(
        "final state (cart, angle, velocities) = {:.3?}",
        sol.x[n].as_slice()
    );
}
