//! A one-stage problem whose Gauss-Newton model cannot see the curvature of
//! a circle constraint. The line search fails, the barrier state is reset and
//! a short forced step leaves the stall.

use trajsqp::problems::circle_stall;
use trajsqp::{solve_default, SolverSettings};

fn main() {
    let offset = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.3);
    let (sol, rep) = solve_default(&circle_stall(offset), &SolverSettings::default());
    for r in &rep.trace {
        let tag = if r.escape {
            "escape"
        } else if r.forced {
            "forced"
        } else {
            ""
        };
        println!(
            "{:>3}  kkt {:.2e}  mu_start {:.2e}  alpha {:.4}  trials {:>2}  {tag}",
            r.iter, r.kkt.total, r.mu_start, r.alpha, r.ls_trials
        );
    }
    println!(
        "{:?} with {} escape(s); x_1 = {:.4?}",
        rep.status,
        rep.escapes,
        sol.x[1].as_slice()
    );
}
