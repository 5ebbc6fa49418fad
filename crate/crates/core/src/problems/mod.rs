//! Built-in benchmark problems.
//!
//! Each builder takes a [`ProblemParams`] whose `seed` randomizes the instance
//! (targets, initial states, random matrices); everything else has a
//! per-problem default.

pub mod dynamics;
pub mod lq;

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Mat, Vector};
use crate::model::{
    OcpProblem, QuadraticTerminal, StageDims, StageJacobians, StageModel, StageValues,
};
use dynamics::{rk4_step, CartPole, ContinuousDynamics, Pendulum, Unicycle};
pub use lq::{lq_random, LqShape, LqStage};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProblemError {
    #[error("unknown problem '{0}' (see list-problems)")]
    Unknown(String),
    #[error("invalid parameter for {problem}: {reason}")]
    InvalidParams {
        problem: &'static str,
        reason: String,
    },
}

/// Instance parameters. Unset fields take the problem's default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemParams {
    pub seed: u64,
    pub horizon: Option<usize>,
    pub dt: Option<f64>,
    /// Bound on every input component (`|u_i| ≤ limit`).
    pub input_limit: Option<f64>,
    /// unicycle_reach: stack redundant terminal rows.
    pub rank_deficient: bool,
    /// lq_random: fixed shape; random per seed when unset.
    pub lq: Option<LqShape>,
    /// lq_random: include inequality rows in the random shape.
    pub lq_inequalities: bool,
}

/// Name and one-line description of every built-in problem.
pub const PROBLEMS: &[(&str, &str)] = &[
    ("lq_random", "random strictly convex LQ with optional c/s/ψ/φ rows and implicit dynamics"),
    ("double_integrator", "1-D double integrator to a random target, |u| ≤ 1 and velocity bounds, N = 50, dt = 0.02"),
    ("pendulum_swingup", "damped pendulum swing-up with RK4 dynamics and torque limits"),
    ("cartpole_swingup", "cart-pole swing-up with RK4 dynamics and force limits, N = 50, dt = 0.03"),
    ("unicycle_reach", "unicycle placing an offset hand point at a random target (hard terminal equality); rank_deficient adds redundant rows"),
    ("masspoint_obstacle", "planar point mass passing a circular keep-out region active on the middle stages only"),
];

/// Builds a problem by name.
pub fn problem_library(name: &str, params: &ProblemParams) -> Result<OcpProblem, ProblemError> {
    if params.horizon == Some(0) {
        return Err(ProblemError::InvalidParams {
            problem: "any",
            reason: "horizon must be at least 1".into(),
        });
    }
    if params.dt.is_some_and(|dt| !(dt > 0.0)) {
        return Err(ProblemError::InvalidParams {
            problem: "any",
            reason: "dt must be positive".into(),
        });
    }
    match name {
        "lq_random" => {
            let shape = match &params.lq {
                Some(s) => s.clone(),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_1a9e);
                    let mut s = LqShape::random(&mut rng, params.lq_inequalities);
                    if let Some(n) = params.horizon {
                        s.horizon = n;
                    }
                    s
                }
            };
            shape
                .check()
                .map_err(|reason| ProblemError::InvalidParams {
                    problem: "lq_random",
                    reason,
                })?;
            Ok(lq_random(&shape, params.seed))
        }
        "double_integrator" => Ok(double_integrator(params)),
        "pendulum_swingup" => Ok(pendulum_swingup(params)),
        "cartpole_swingup" => Ok(cartpole_swingup(params)),
        "unicycle_reach" => Ok(unicycle_reach(params)),
        "masspoint_obstacle" => Ok(masspoint_obstacle(params)),
        other => Err(ProblemError::Unknown(other.to_string())),
    }
}

/// A vector function of the next state `y` only.
pub trait PointConstraint: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, y: &Vector) -> Vector;
    fn jacobian(&self, y: &Vector) -> Mat;
}

/// `lo ≤ y_i ≤ hi` for selected components, as `≤ 0` rows.
#[derive(Debug, Clone)]
pub struct StateBox {
    pub index: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
    pub ny: usize,
}

impl PointConstraint for StateBox {
    fn dim(&self) -> usize {
        2 * self.index.len()
    }
    fn eval(&self, y: &Vector) -> Vector {
        let m = self.index.len();
        Vector::from_fn(2 * m, |r, _| {
            let i = self.index[r % m];
            if r < m {
                y[i] - self.hi
            } else {
                self.lo - y[i]
            }
        })
    }
    fn jacobian(&self, _y: &Vector) -> Mat {
        let m = self.index.len();
        let mut j = Mat::zeros(2 * m, self.ny);
        for (r, &i) in self.index.iter().enumerate() {
            j[(r, i)] = 1.0;
            j[(m + r, i)] = -1.0;
        }
        j
    }
}

/// Point `(p_x + d cos θ, p_y + d sin θ)` minus a target.
#[derive(Debug, Clone)]
pub struct HandPoint {
    pub offset: f64,
    pub target: [f64; 2],
}

impl PointConstraint for HandPoint {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, y: &Vector) -> Vector {
        let (s, c) = y[2].sin_cos();
        Vector::from_vec(vec![
            y[0] + self.offset * c - self.target[0],
            y[1] + self.offset * s - self.target[1],
        ])
    }
    fn jacobian(&self, y: &Vector) -> Mat {
        let (s, c) = y[2].sin_cos();
        Mat::from_row_slice(
            2,
            3,
            &[1.0, 0.0, -self.offset * s, 0.0, 1.0, self.offset * c],
        )
    }
}

/// Planar position `(y_0, y_1)` minus a target.
#[derive(Debug, Clone)]
pub struct Position {
    pub target: [f64; 2],
    pub ny: usize,
}

impl PointConstraint for Position {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, y: &Vector) -> Vector {
        Vector::from_vec(vec![y[0] - self.target[0], y[1] - self.target[1]])
    }
    fn jacobian(&self, _y: &Vector) -> Mat {
        let mut j = Mat::zeros(2, self.ny);
        j[(0, 0)] = 1.0;
        j[(1, 1)] = 1.0;
        j
    }
}

/// Keep-out disk `r² − |p − c|² ≤ 0` on the planar position `(y_0, y_1)`.
#[derive(Debug, Clone)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
    pub ny: usize,
}

impl PointConstraint for Disk {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, y: &Vector) -> Vector {
        let (dx, dy) = (y[0] - self.center[0], y[1] - self.center[1]);
        Vector::from_element(1, self.radius * self.radius - dx * dx - dy * dy)
    }
    fn jacobian(&self, y: &Vector) -> Mat {
        let mut j = Mat::zeros(1, self.ny);
        j[(0, 0)] = -2.0 * (y[0] - self.center[0]);
        j[(0, 1)] = -2.0 * (y[1] - self.center[1]);
        j
    }
}

/// Unit-circle equality `|p|² − 1 = 0` on the planar position `(y_0, y_1)`.
#[derive(Debug, Clone)]
pub struct Circle {
    pub ny: usize,
}

impl PointConstraint for Circle {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, y: &Vector) -> Vector {
        Vector::from_element(1, y[0] * y[0] + y[1] * y[1] - 1.0)
    }
    fn jacobian(&self, y: &Vector) -> Mat {
        let mut j = Mat::zeros(1, self.ny);
        j[(0, 0)] = 2.0 * y[0];
        j[(0, 1)] = 2.0 * y[1];
        j
    }
}

/// Explicit discrete dynamics `y = F(x, u)`.
#[derive(Clone)]
pub enum Discretization {
    Linear {
        a: Mat,
        b: Mat,
    },
    Rk4 {
        model: Arc<dyn ContinuousDynamics>,
        dt: f64,
    },
}

impl Discretization {
    fn step(&self, x: &Vector, u: &Vector) -> (Vector, Mat, Mat) {
        match self {
            Self::Linear { a, b } => (a * x + b * u, a.clone(), b.clone()),
            Self::Rk4 { model, dt } => rk4_step(model.as_ref(), x, u, *dt),
        }
    }
}

/// Quadratic tracking cost, explicit dynamics written as `F(x, u) − y = 0`,
/// optional input box, and constraints on the next state.
#[derive(Clone)]
pub struct TrackingStage {
    pub dynamics: Discretization,
    pub q: Mat,
    pub x_ref: Vector,
    pub r: Mat,
    pub u_ref: Vector,
    pub input_limit: Option<f64>,
    pub equalities: Vec<Arc<dyn PointConstraint>>,
    pub inequalities: Vec<Arc<dyn PointConstraint>>,
}

impl TrackingStage {
    fn nx(&self) -> usize {
        self.x_ref.len()
    }
    fn nu(&self) -> usize {
        self.u_ref.len()
    }
    fn stack(list: &[Arc<dyn PointConstraint>], y: &Vector) -> (Vector, Mat) {
        let m: usize = list.iter().map(|c| c.dim()).sum();
        let mut v = Vector::zeros(m);
        let mut j = Mat::zeros(m, y.len());
        let mut r = 0;
        for c in list {
            let d = c.dim();
            v.rows_mut(r, d).copy_from(&c.eval(y));
            j.view_mut((r, 0), (d, y.len())).copy_from(&c.jacobian(y));
            r += d;
        }
        (v, j)
    }
}

impl StageModel for TrackingStage {
    fn dims(&self) -> StageDims {
        let nx = self.nx();
        StageDims {
            nx,
            nu: self.nu(),
            ny: nx,
            nc: 0,
            ns: self.equalities.iter().map(|c| c.dim()).sum(),
            npsi: if self.input_limit.is_some() {
                2 * self.nu()
            } else {
                0
            },
            nphi: self.inequalities.iter().map(|c| c.dim()).sum(),
        }
    }

    fn values(&self, x: &Vector, u: &Vector, y: &Vector) -> StageValues {
        let ex = x - &self.x_ref;
        let eu = u - &self.u_ref;
        let (next, _, _) = self.dynamics.step(x, u);
        let nu = self.nu();
        let psi = match self.input_limit {
            Some(lim) => {
                Vector::from_fn(
                    2 * nu,
                    |r, _| if r < nu { u[r] - lim } else { -lim - u[r - nu] },
                )
            }
            None => Vector::zeros(0),
        };
        StageValues {
            cost: 0.5 * ex.dot(&(&self.q * &ex)) + 0.5 * eu.dot(&(&self.r * &eu)),
            f: next - y,
            c: Vector::zeros(0),
            s: Self::stack(&self.equalities, y).0,
            psi,
            phi: Self::stack(&self.inequalities, y).0,
        }
    }

    fn jacobians(&self, x: &Vector, u: &Vector, y: &Vector) -> StageJacobians {
        let (nx, nu) = (self.nx(), self.nu());
        let (_, a, b) = self.dynamics.step(x, u);
        let (_, s_y) = Self::stack(&self.equalities, y);
        let (_, phi_y) = Self::stack(&self.inequalities, y);
        let psi_u = match self.input_limit {
            Some(_) => {
                let mut m = Mat::zeros(2 * nu, nu);
                for i in 0..nu {
                    m[(i, i)] = 1.0;
                    m[(nu + i, i)] = -1.0;
                }
                m
            }
            None => Mat::zeros(0, nu),
        };
        StageJacobians {
            l_x: &self.q * (x - &self.x_ref),
            l_u: &self.r * (u - &self.u_ref),
            l_xx: self.q.clone(),
            l_uu: self.r.clone(),
            l_ux: Mat::zeros(nu, nx),
            f_x: a,
            f_u: b,
            f_y: -Mat::identity(nx, nx),
            c_x: Mat::zeros(0, nx),
            c_u: Mat::zeros(0, nu),
            s_x: Mat::zeros(s_y.nrows(), nx),
            s_y,
            psi_x: Mat::zeros(psi_u.nrows(), nx),
            psi_u,
            phi_x: Mat::zeros(phi_y.nrows(), nx),
            phi_y,
        }
    }
}

fn diag(v: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_column_slice(v))
}

fn build(
    name: &str,
    x0: Vector,
    stages: Vec<TrackingStage>,
    terminal: QuadraticTerminal,
) -> OcpProblem {
    let stages: Vec<Arc<dyn StageModel>> = stages
        .into_iter()
        .map(|s| Arc::new(s) as Arc<dyn StageModel>)
        .collect();
    OcpProblem::new(name, x0, stages, Arc::new(terminal))
        .expect("built-in problem dimensions are consistent")
}

/// Position/velocity double integrator driven to a random position at rest.
pub fn double_integrator(p: &ProblemParams) -> OcpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.horizon.unwrap_or(50);
    let dt = p.dt.unwrap_or(0.02);
    let target = rng.random_range(-1.0..1.0);
    let a = Mat::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b = Mat::from_row_slice(2, 1, &[0.5 * dt * dt, dt]);
    let x_ref = Vector::from_vec(vec![target, 0.0]);
    let stage = TrackingStage {
        dynamics: Discretization::Linear { a, b },
        q: diag(&[0.1, 0.01]) * dt,
        x_ref: x_ref.clone(),
        r: diag(&[0.01]) * dt,
        u_ref: Vector::zeros(1),
        input_limit: Some(p.input_limit.unwrap_or(1.0)),
        equalities: Vec::new(),
        inequalities: vec![Arc::new(StateBox {
            index: vec![1],
            lo: -2.0,
            hi: 2.0,
            ny: 2,
        })],
    };
    let terminal = QuadraticTerminal {
        weight: diag(&[10.0, 1.0]),
        reference: x_ref,
    };
    build(
        "double_integrator",
        Vector::zeros(2),
        vec![stage; n],
        terminal,
    )
}

/// Pendulum from (near) hanging down to upright.
pub fn pendulum_swingup(p: &ProblemParams) -> OcpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.horizon.unwrap_or(50);
    let dt = p.dt.unwrap_or(0.05);
    let x0 = Vector::from_vec(vec![
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    ]);
    let x_ref = Vector::from_vec(vec![PI, 0.0]);
    let stage = TrackingStage {
        dynamics: Discretization::Rk4 {
            model: Arc::new(Pendulum::default()),
            dt,
        },
        q: diag(&[0.0, 0.0]),
        x_ref: x_ref.clone(),
        r: diag(&[0.01]) * dt,
        u_ref: Vector::zeros(1),
        input_limit: Some(p.input_limit.unwrap_or(5.0)),
        equalities: Vec::new(),
        inequalities: Vec::new(),
    };
    let terminal = QuadraticTerminal {
        weight: diag(&[10.0, 1.0]),
        reference: x_ref,
    };
    build("pendulum_swingup", x0, vec![stage; n], terminal)
}

/// Cart-pole swing-up from a perturbed hanging state to upright at a random
/// cart position.
pub fn cartpole_swingup(p: &ProblemParams) -> OcpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.horizon.unwrap_or(50);
    let dt = p.dt.unwrap_or(0.03);
    let x0 = Vector::from_vec(vec![
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    ]);
    let x_ref = Vector::from_vec(vec![rng.random_range(-0.3..0.3), PI, 0.0, 0.0]);
    let stage = TrackingStage {
        dynamics: Discretization::Rk4 {
            model: Arc::new(CartPole::default()),
            dt,
        },
        q: diag(&[0.0, 0.0, 0.0, 0.0]),
        x_ref: x_ref.clone(),
        r: diag(&[0.001]) * dt,
        u_ref: Vector::zeros(1),
        input_limit: Some(p.input_limit.unwrap_or(30.0)),
        equalities: Vec::new(),
        inequalities: Vec::new(),
    };
    let terminal = QuadraticTerminal {
        weight: diag(&[10.0, 10.0, 1.0, 1.0]),
        reference: x_ref,
    };
    build("cartpole_swingup", x0, vec![stage; n], terminal)
}

/// Offset of the unicycle hand point from the axle.
pub const UNICYCLE_HAND_OFFSET: f64 = 0.3;

/// Unicycle placing its hand point at a random target with a hard terminal
/// equality. The rank-deficient variant stacks the hand rows twice and also
/// pins the axle position, consistently with some final heading: four
/// independent rows on a three-dimensional state, reachable through a
/// two-dimensional last input.
pub fn unicycle_reach(p: &ProblemParams) -> OcpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.horizon.unwrap_or(40);
    let dt = p.dt.unwrap_or(0.05);
    let radius = rng.random_range(0.5..1.5);
    let angle = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
    let heading = angle + rng.random_range(-0.5..0.5);
    let hand = [radius * angle.cos(), radius * angle.sin()];
    let d = UNICYCLE_HAND_OFFSET;
    let axle = [hand[0] - d * heading.cos(), hand[1] - d * heading.sin()];

    let base = TrackingStage {
        dynamics: Discretization::Rk4 {
            model: Arc::new(Unicycle),
            dt,
        },
        q: diag(&[0.0, 0.0, 0.0]),
        x_ref: Vector::zeros(3),
        r: diag(&[0.1, 0.1]) * dt,
        u_ref: Vector::zeros(2),
        input_limit: p.input_limit,
        equalities: Vec::new(),
        inequalities: Vec::new(),
    };
    let mut stages = vec![base; n];
    let hand_c: Arc<dyn PointConstraint> = Arc::new(HandPoint {
        offset: d,
        target: hand,
    });
    let last = stages.last_mut().expect("n ≥ 1");
    last.equalities.push(hand_c.clone());
    if p.rank_deficient {
        last.equalities.push(hand_c);
        last.equalities.push(Arc::new(Position {
            target: axle,
            ny: 3,
        }));
    }
    let terminal = QuadraticTerminal {
        weight: Mat::zeros(3, 3),
        reference: Vector::zeros(3),
    };
    let name = if p.rank_deficient {
        "unicycle_reach_deficient"
    } else {
        "unicycle_reach"
    };
    build(name, Vector::zeros(3), stages, terminal)
}

/// Point mass `(p, v) ∈ ℝ⁴` crossing to a target past a disk obstacle that
/// only constrains the middle half of the horizon.
pub fn masspoint_obstacle(p: &ProblemParams) -> OcpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.horizon.unwrap_or(40);
    let dt = p.dt.unwrap_or(0.05);
    let mut a = Mat::identity(4, 4);
    a[(0, 2)] = dt;
    a[(1, 3)] = dt;
    let mut b = Mat::zeros(4, 2);
    b[(0, 0)] = 0.5 * dt * dt;
    b[(1, 1)] = 0.5 * dt * dt;
    b[(2, 0)] = dt;
    b[(3, 1)] = dt;
    let target = Vector::from_vec(vec![2.0, rng.random_range(-0.1..0.1), 0.0, 0.0]);
    let disk: Arc<dyn PointConstraint> = Arc::new(Disk {
        center: [1.0, rng.random_range(-0.05..0.05)],
        radius: 0.3,
        ny: 4,
    });
    let stages: Vec<TrackingStage> = (0..n)
        .map(|k| TrackingStage {
            dynamics: Discretization::Linear {
                a: a.clone(),
                b: b.clone(),
            },
            q: Mat::zeros(4, 4),
            x_ref: target.clone(),
            r: Mat::identity(2, 2) * (0.1 * dt),
            u_ref: Vector::zeros(2),
            input_limit: p.input_limit,
            equalities: Vec::new(),
            inequalities: if k >= n / 4 && k < (3 * n).div_ceil(4) {
                vec![disk.clone()]
            } else {
                Vec::new()
            },
        })
        .collect();
    let terminal = QuadraticTerminal {
        weight: diag(&[100.0, 100.0, 10.0, 10.0]),
        reference: target,
    };
    build("masspoint_obstacle", Vector::zeros(4), stages, terminal)
}

/// A point on the unit circle pulled towards `(0.2, 0)`, starting `offset`
/// radians from the far side. Near the far side the Lagrangian is concave
/// along the circle, which the Gauss-Newton model cannot see: every trial
/// step raises both the constraint violation and the stationarity residual,
/// so the line search fails and the escape path runs. Not part of the
/// benchmark library.
pub fn circle_stall(offset: f64) -> OcpProblem {
    let angle = PI - offset;
    let x0 = Vector::from_vec(vec![angle.cos(), angle.sin()]);
    let stage = TrackingStage {
        dynamics: Discretization::Linear {
            a: Mat::identity(2, 2),
            b: Mat::identity(2, 2),
        },
        q: Mat::zeros(2, 2),
        x_ref: Vector::zeros(2),
        r: Mat::identity(2, 2) * 1e-3,
        u_ref: Vector::zeros(2),
        input_limit: Some(10.0),
        equalities: vec![Arc::new(Circle { ny: 2 })],
        inequalities: Vec::new(),
    };
    let terminal = QuadraticTerminal {
        weight: Mat::identity(2, 2),
        reference: Vector::from_vec(vec![0.2, 0.0]),
    };
    build("circle_stall", x0, vec![stage], terminal)
}

/// Seed of instance `i` in a suite seeded with `seed`.
pub fn instance_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(i as u64)
        .rotate_left(17)
        ^ 0xA076_1D64_78BD_642F
}
