//! Continuous-time models and their RK4 discretization.

use crate::linalg::{Mat, Vector};

/// `ẋ = F(x, u)` with analytic Jacobians.
pub trait ContinuousDynamics: Send + Sync {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn rhs(&self, x: &Vector, u: &Vector) -> Vector;
    /// `(∂F/∂x, ∂F/∂u)`.
    fn jacobians(&self, x: &Vector, u: &Vector) -> (Mat, Mat);
}

/// One classical RK4 step and its Jacobians, chained stage by stage from the
/// continuous-time Jacobians.
pub fn rk4_step(m: &dyn ContinuousDynamics, x: &Vector, u: &Vector, dt: f64) -> (Vector, Mat, Mat) {
    let n = x.len();
    let eye = Mat::identity(n, n);
    let h = 0.5 * dt;

    let k1 = m.rhs(x, u);
    let (a1, b1) = m.jacobians(x, u);
    let x2 = x + &k1 * h;
    let k2 = m.rhs(&x2, u);
    let (a2, b2) = m.jacobians(&x2, u);
    let d2x = &a2 * (&eye + &a1 * h);
    let d2u = &a2 * &b1 * h + b2;
    let x3 = x + &k2 * h;
    let k3 = m.rhs(&x3, u);
    let (a3, b3) = m.jacobians(&x3, u);
    let d3x = &a3 * (&eye + &d2x * h);
    let d3u = &a3 * &d2u * h + b3;
    let x4 = x + &k3 * dt;
    let k4 = m.rhs(&x4, u);
    let (a4, b4) = m.jacobians(&x4, u);
    let d4x = &a4 * (&eye + &d3x * dt);
    let d4u = &a4 * &d3u * dt + b4;

    let w = dt / 6.0;
    let next = x + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * w;
    let a = &eye + (&a1 + &d2x * 2.0 + &d3x * 2.0 + &d4x) * w;
    let b = (&b1 + &d2u * 2.0 + &d3u * 2.0 + &d4u) * w;
    (next, a, b)
}

/// Damped pendulum, `θ = 0` hanging down.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub gravity: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            damping: 0.1,
            gravity: 9.81,
        }
    }
}

impl ContinuousDynamics for Pendulum {
    fn nx(&self) -> usize {
        2
    }
    fn nu(&self) -> usize {
        1
    }
    fn rhs(&self, x: &Vector, u: &Vector) -> Vector {
        let ml2 = self.mass * self.length * self.length;
        Vector::from_vec(vec![
            x[1],
            -self.gravity / self.length * x[0].sin() - self.damping * x[1] + u[0] / ml2,
        ])
    }
    fn jacobians(&self, x: &Vector, _u: &Vector) -> (Mat, Mat) {
        let ml2 = self.mass * self.length * self.length;
        let a = Mat::from_row_slice(
            2,
            2,
            &[
                0.0,
                1.0,
                -self.gravity / self.length * x[0].cos(),
                -self.damping,
            ],
        );
        let b = Mat::from_row_slice(2, 1, &[0.0, 1.0 / ml2]);
        (a, b)
    }
}

/// Cart-pole with state `(x, θ, ẋ, θ̇)` and horizontal force input; `θ = 0`
/// is the pole hanging down.
#[derive(Debug, Clone)]
pub struct CartPole {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub length: f64,
    pub gravity: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.3,
            length: 0.5,
            gravity: 9.81,
        }
    }
}

impl ContinuousDynamics for CartPole {
    fn nx(&self) -> usize {
        4
    }
    fn nu(&self) -> usize {
        1
    }
    fn rhs(&self, x: &Vector, u: &Vector) -> Vector {
        let (mc, mp, l, g) = (self.cart_mass, self.pole_mass, self.length, self.gravity);
        let (s, c) = x[1].sin_cos();
        let w = x[3];
        let f = u[0];
        let d = mc + mp * s * s;
        let xdd = (f + mp * s * (l * w * w + g * c)) / d;
        let tdd = (-f * c - mp * l * w * w * c * s - (mc + mp) * g * s) / (l * d);
        Vector::from_vec(vec![x[2], x[3], xdd, tdd])
    }
    fn jacobians(&self, x: &Vector, u: &Vector) -> (Mat, Mat) {
        let (mc, mp, l, g) = (self.cart_mass, self.pole_mass, self.length, self.gravity);
        let (s, c) = x[1].sin_cos();
        let w = x[3];
        let f = u[0];
        let d = mc + mp * s * s;
        let dd = 2.0 * mp * s * c;

        let n1 = f + mp * s * (l * w * w + g * c);
        let dn1 = mp * (c * (l * w * w + g * c) - g * s * s);
        let xdd_t = (dn1 * d - n1 * dd) / (d * d);
        let xdd_w = 2.0 * mp * s * l * w / d;

        let n2 = -f * c - mp * l * w * w * c * s - (mc + mp) * g * s;
        let dn2 = f * s - mp * l * w * w * (c * c - s * s) - (mc + mp) * g * c;
        let tdd_t = (dn2 * d - n2 * dd) / (l * d * d);
        let tdd_w = -2.0 * mp * l * w * c * s / (l * d);

        let a = Mat::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, xdd_t, 0.0, xdd_w, //
                0.0, tdd_t, 0.0, tdd_w,
            ],
        );
        let b = Mat::from_row_slice(4, 1, &[0.0, 0.0, 1.0 / d, -c / (l * d)]);
        (a, b)
    }
}

/// Kinematic unicycle, state `(p_x, p_y, θ)`, input `(v, ω)`.
#[derive(Debug, Clone, Default)]
pub struct Unicycle;

impl ContinuousDynamics for Unicycle {
    fn nx(&self) -> usize {
        3
    }
    fn nu(&self) -> usize {
        2
    }
    fn rhs(&self, x: &Vector, u: &Vector) -> Vector {
        let (s, c) = x[2].sin_cos();
        Vector::from_vec(vec![u[0] * c, u[0] * s, u[1]])
    }
    fn jacobians(&self, x: &Vector, u: &Vector) -> (Mat, Mat) {
        let (s, c) = x[2].sin_cos();
        let a = Mat::from_row_slice(
            3,
            3,
            &[0.0, 0.0, -u[0] * s, 0.0, 0.0, u[0] * c, 0.0, 0.0, 0.0],
        );
        let b = Mat::from_row_slice(3, 2, &[c, 0.0, s, 0.0, 0.0, 1.0]);
        (a, b)
    }
}
