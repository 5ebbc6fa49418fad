//! Cross-checks against the dense references: one structured step against the
//! dense KKT solve, and a full solve against the dense barrier method.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajsqp::model::evaluate_all;
use trajsqp::oracle::{assemble_dense, dense_barrier_solve, dense_solve, DenseBarrierSettings};
use trajsqp::problems::lq::{lq_random, LqShape};
use trajsqp::sqp::structured_step;
use trajsqp::verify::{random_iterate, rel_step_diff};
use trajsqp::{problem_library, solve_default, EqualityModes, ProblemParams, SolverSettings};

fn main() {
    let shape = LqShape {
        horizon: 6,
        npsi: 2,
        nphi: 2,
        implicit: true,
        ..LqShape::default()
    };
    let problem = lq_random(&shape, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let iter = random_iterate(&problem, EqualityModes::default(), &mut rng);
    let (lqs, term) = evaluate_all(&problem, &iter, false).expect("finite data");
    let (mu, rho) = (0.1, 1e-8);
    let dense = assemble_dense(&lqs, &term, &iter.t, &iter.nu, mu, rho, None);
    let sol = dense_solve(&dense).expect("dense solve");
    let step = structured_step(&lqs, &term, &iter.t, &iter.nu, mu, rho, None, None)
        .expect("structured step");
    println!(
        "dense system {}x{}: structured vs dense step, relative L-inf {:.2e}",
        dense.dim(),
        dense.dim(),
        rel_step_diff(&step, &dense.unpack(&sol.sol))
    );

    let problem =
        problem_library("double_integrator", &ProblemParams::default()).expect("built-in problem");
    let reference =
        dense_barrier_solve(&problem, None, &DenseBarrierSettings::default()).expect("reference");
    let settings = SolverSettings {
        abs_tol: 1e-8,
        ..SolverSettings::default()
    };
    let (sol, rep) = solve_default(&problem, &settings);
    let diff = (0..problem.horizon())
        .map(|k| (&sol.u[k] - &reference.iterate.u[k]).amax())
        .fold(0.0_f64, f64::max);
    println!(
        "double integrator: SQP {} iterations, dense barrier {} iterations, max input difference {diff:.2e}",
        rep.iterations, reference.iterations
    );
}
