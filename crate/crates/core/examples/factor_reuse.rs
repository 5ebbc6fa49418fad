//! One factorization, several right-hand sides: the backward pass over
//! Hessians and Jacobians is done once, and each feedforward pass only pushes
//! a new gradient through it.

use trajsqp::model::{evaluate_all, Iterate};
use trajsqp::problems::lq::{lq_random, LqShape};
use trajsqp::riccati::{factorize, feedforward, forward_rollout, presolve_all, ZeroOrderRhs};
use trajsqp::EqualityModes;

fn main() {
    let problem = lq_random(&LqShape::default(), 1);
    let iter = Iterate::hold_initial_state(&problem, EqualityModes::default());
    let (lqs, term) = evaluate_all(&problem, &iter, false).expect("finite data");
    let rhs = ZeroOrderRhs::from_lqs(&lqs, &term.grad);
    let fact = factorize(
        presolve_all(lqs, None, false).expect("presolve"),
        &term.hess,
    )
    .expect("factorization");
    println!("V_xx at node 0:\n{:.4}", fact.v_xx[0]);

    for scale in [1.0, 0.5, -2.0] {
        let q_x = rhs.q_x.iter().map(|v| v * scale).collect();
        let q_u = rhs.q_u.iter().map(|v| v * scale).collect();
        let q_y = rhs.q_y.iter().map(|v| v * scale).collect();
        let ff = feedforward(&fact, &rhs.with_gradients(q_x, q_u, q_y)).expect("feedforward");
        let dx = forward_rollout(&fact, &ff).expect("rollout");
        println!(
            "gradient scale {scale:>4}: V_x(0) = {:.4?}, |dx_N| = {:.4}",
            ff.v_x[0].as_slice(),
            dx[dx.len() - 1].norm()
        );
    }
}
