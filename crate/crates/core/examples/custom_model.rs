//! A user-defined stage: a planar point with quadratic drag, explicit Euler
//! dynamics written implicitly as `f = x + dt·g(x, u) − y`, and a speed limit
//! as a state-input inequality.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use trajsqp::{
    solve_default, OcpProblem, QuadraticTerminal, SolverSettings, StageDims, StageJacobians,
    StageModel, StageValues,
};

const DT: f64 = 0.05;
const DRAG: f64 = 0.3;
const U_MAX: f64 = 4.0;

struct DragPoint;

impl StageModel for DragPoint {
    fn dims(&self) -> StageDims {
        StageDims {
            npsi: 4,
            ..StageDims::unconstrained(4, 2, 4)
        }
    }

    fn values(&self, x: &DVector<f64>, u: &DVector<f64>, y: &DVector<f64>) -> StageValues {
        let (vx, vy) = (x[2], x[3]);
        let speed = (vx * vx + vy * vy).sqrt();
        let next = DVector::from_vec(vec![
            x[0] + DT * vx,
            x[1] + DT * vy,
            vx + DT * (u[0] - DRAG * speed * vx),
            vy + DT * (u[1] - DRAG * speed * vy),
        ]);
        StageValues {
            cost: 0.5 * 1e-2 * u.norm_squared(),
            f: next - y,
            psi: DVector::from_vec(vec![
                u[0] - U_MAX,
                -u[0] - U_MAX,
                u[1] - U_MAX,
                -u[1] - U_MAX,
            ]),
            ..StageValues::zeros(&self.dims())
        }
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>, _y: &DVector<f64>) -> StageJacobians {
        let d = self.dims();
        let mut j = StageJacobians::zeros(&d);
        let (vx, vy) = (x[2], x[3]);
        let s = (vx * vx + vy * vy).sqrt().max(1e-12);
        // d(speed·v)/dv = speed·I + v vᵀ / speed
        let dv = DMatrix::from_row_slice(
            2,
            2,
            &[s + vx * vx / s, vx * vy / s, vx * vy / s, s + vy * vy / s],
        );
        j.f_x = DMatrix::identity(4, 4);
        j.f_x[(0, 2)] = DT;
        j.f_x[(1, 3)] = DT;
        let mut block = j.f_x.view_mut((2, 2), (2, 2));
        block -= dv * (DT * DRAG);
        j.f_u[(2, 0)] = DT;
        j.f_u[(3, 1)] = DT;
        j.f_y = -DMatrix::identity(4, 4);
        j.l_u = u * 1e-2;
        j.l_uu = DMatrix::identity(2, 2) * 1e-2;
        j.psi_u = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        j
    }
}

fn main() {
    let n = 40;
    let stages: Vec<Arc<dyn StageModel>> = (0..n)
        .map(|_| Arc::new(DragPoint) as Arc<dyn StageModel>)
        .collect();
    let terminal = QuadraticTerminal {
        weight: DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 100.0, 10.0, 10.0])),
        reference: DVector::from_vec(vec![1.0, 0.5, 0.0, 0.0]),
    };
    let problem = OcpProblem::new("drag_point", DVector::zeros(4), stages, Arc::new(terminal))
        .expect("consistent dimensions");
    let report = trajsqp::model::validate_problem(&problem);
    assert!(report.is_valid(), "{:?}", report.errors);

    let (sol, rep) = solve_default(&problem, &SolverSettings::default());
    println!(
        "{:?} in {} iterations, KKT {:.2e}",
        rep.status, rep.iterations, rep.final_kkt.total
    );
    println!("x_N = {:.3?}", sol.x[n].as_slice());
    let peak = sol.u.iter().map(|u| u.amax()).fold(0.0_f64, f64::max);
    println!("peak input {peak:.3} (limit {U_MAX})");
}
