//! Random strictly convex linear-quadratic instances.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{vstack, Mat, Vector};
use crate::model::{
    OcpProblem, QuadraticTerminal, StageDims, StageJacobians, StageModel, StageValues,
};

/// Affine constraints and dynamics with a convex quadratic cost:
/// `l = ½ wᵀH w + hᵀw` for `w = (x, u)`.
#[derive(Debug, Clone)]
pub struct LqStage {
    pub dims: StageDims,
    pub h: Mat,
    pub h_lin: Vector,
    pub a: Mat,
    pub b: Mat,
    pub f_y: Mat,
    pub f_bar: Vector,
    pub c_x: Mat,
    pub c_u: Mat,
    pub c_bar: Vector,
    pub s_x: Mat,
    pub s_y: Mat,
    pub s_bar: Vector,
    pub psi_x: Mat,
    pub psi_u: Mat,
    pub psi_bar: Vector,
    pub phi_x: Mat,
    pub phi_y: Mat,
    pub phi_bar: Vector,
}

impl StageModel for LqStage {
    fn dims(&self) -> StageDims {
        self.dims
    }

    fn values(&self, x: &Vector, u: &Vector, y: &Vector) -> StageValues {
        let nx = self.dims.nx;
        let mut w = Vector::zeros(nx + self.dims.nu);
        w.rows_mut(0, nx).copy_from(x);
        w.rows_mut(nx, self.dims.nu).copy_from(u);
        StageValues {
            cost: 0.5 * w.dot(&(&self.h * &w)) + self.h_lin.dot(&w),
            f: &self.a * x + &self.b * u + &self.f_y * y + &self.f_bar,
            c: &self.c_x * x + &self.c_u * u + &self.c_bar,
            s: &self.s_x * x + &self.s_y * y + &self.s_bar,
            psi: &self.psi_x * x + &self.psi_u * u + &self.psi_bar,
            phi: &self.phi_x * x + &self.phi_y * y + &self.phi_bar,
        }
    }

    fn jacobians(&self, x: &Vector, u: &Vector, _y: &Vector) -> StageJacobians {
        let (nx, nu) = (self.dims.nx, self.dims.nu);
        let mut w = Vector::zeros(nx + nu);
        w.rows_mut(0, nx).copy_from(x);
        w.rows_mut(nx, nu).copy_from(u);
        let g = &self.h * &w + &self.h_lin;
        StageJacobians {
            l_x: g.rows(0, nx).into_owned(),
            l_u: g.rows(nx, nu).into_owned(),
            l_xx: self.h.view((0, 0), (nx, nx)).into_owned(),
            l_uu: self.h.view((nx, nx), (nu, nu)).into_owned(),
            l_ux: self.h.view((nx, 0), (nu, nx)).into_owned(),
            f_x: self.a.clone(),
            f_u: self.b.clone(),
            f_y: self.f_y.clone(),
            c_x: self.c_x.clone(),
            c_u: self.c_u.clone(),
            s_x: self.s_x.clone(),
            s_y: self.s_y.clone(),
            psi_x: self.psi_x.clone(),
            psi_u: self.psi_u.clone(),
            phi_x: self.phi_x.clone(),
            phi_y: self.phi_y.clone(),
        }
    }
}

/// Shape of a random LQ instance. Equality rows per stage satisfy
/// `nc + ns ≤ nu` so every stage can meet them on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqShape {
    pub horizon: usize,
    pub nx: usize,
    pub nu: usize,
    pub nc: usize,
    pub ns: usize,
    pub npsi: usize,
    pub nphi: usize,
    /// `f_y = −I + 0.1·R` instead of `−I`.
    pub implicit: bool,
}

impl Default for LqShape {
    fn default() -> Self {
        Self {
            horizon: 10,
            nx: 4,
            nu: 3,
            nc: 1,
            ns: 1,
            npsi: 0,
            nphi: 0,
            implicit: false,
        }
    }
}

impl LqShape {
    /// Random shape with `N ≤ 10`, dimensions `≤ 6` and a random mix of
    /// implicit dynamics, `c` and `s` rows; inequality rows only if `with_ineq`.
    pub fn random(rng: &mut impl Rng, with_ineq: bool) -> Self {
        let nx = rng.random_range(1..=6);
        let nu = rng.random_range(1..=6);
        let nc = if rng.random_bool(0.5) {
            rng.random_range(0..=nu)
        } else {
            0
        };
        let ns = if rng.random_bool(0.5) {
            rng.random_range(0..=(nu - nc).min(nx))
        } else {
            0
        };
        let (npsi, nphi) = if with_ineq {
            (rng.random_range(0..=6), rng.random_range(0..=6))
        } else {
            (0, 0)
        };
        Self {
            horizon: rng.random_range(1..=10),
            nx,
            nu,
            nc,
            ns,
            npsi,
            nphi,
            implicit: rng.random_bool(0.5),
        }
    }

    /// Shapes `lq_random` can build: positive sizes, `nc + ns ≤ nu` and
    /// `ns ≤ nx`.
    pub fn check(&self) -> Result<(), String> {
        if self.horizon == 0 || self.nx == 0 || self.nu == 0 {
            return Err("horizon, nx and nu must be positive".into());
        }
        if self.nc + self.ns > self.nu || self.ns > self.nx {
            return Err(format!(
                "equality rows must satisfy nc + ns <= nu and ns <= nx (nc = {}, ns = {}, nu = {}, nx = {})",
                self.nc, self.ns, self.nu, self.nx
            ));
        }
        Ok(())
    }
}

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Stages whose reduced equality Jacobian has a smaller singular value are
/// redrawn, so every instance has a well-posed step.
pub const MIN_EQ_SIGMA: f64 = 0.3;

fn random_stage(rng: &mut ChaCha8Rng, shape: &LqShape) -> LqStage {
    let LqShape {
        nx,
        nu,
        nc,
        ns,
        npsi,
        nphi,
        ..
    } = *shape;
    let m = mat(rng, nx + nu, nx + nu);
    let h = m.tr_mul(&m) * 0.5 + Mat::identity(nx + nu, nx + nu);
    let f_y = if shape.implicit {
        -Mat::identity(nx, nx) + mat(rng, nx, nx) * 0.1
    } else {
        -Mat::identity(nx, nx)
    };
    LqStage {
        dims: StageDims {
            nx,
            nu,
            ny: nx,
            nc,
            ns,
            npsi,
            nphi,
        },
        h,
        h_lin: vec(rng, nx + nu),
        a: mat(rng, nx, nx) / (nx as f64).sqrt(),
        b: mat(rng, nx, nu),
        f_y,
        f_bar: vec(rng, nx) * 0.5,
        c_x: mat(rng, nc, nx) / (nx as f64).sqrt(),
        c_u: mat(rng, nc, nu),
        c_bar: vec(rng, nc) * 0.5,
        s_x: mat(rng, ns, nx) / (nx as f64).sqrt(),
        s_y: mat(rng, ns, nx),
        s_bar: vec(rng, ns) * 0.5,
        psi_x: mat(rng, npsi, nx),
        psi_u: mat(rng, npsi, nu),
        psi_bar: Vector::from_fn(npsi, |_, _| -rng.random_range(0.5..2.0)),
        phi_x: mat(rng, nphi, nx),
        phi_y: mat(rng, nphi, nx),
        phi_bar: Vector::from_fn(nphi, |_, _| -rng.random_range(0.5..2.0)),
    }
}

/// Smallest singular value of `[−s_y f_y⁻¹ B; c_u]`; infinite without rows.
fn equality_sigma_min(st: &LqStage) -> f64 {
    let rows = st.dims.nc + st.dims.ns;
    if rows == 0 {
        return f64::INFINITY;
    }
    let Some(fy_inv) = st.f_y.clone().try_inverse() else {
        return 0.0;
    };
    let reduced = vstack(&[&(-(&st.s_y * fy_inv * &st.b)), &st.c_u], st.dims.nu);
    reduced.singular_values().min()
}

/// Random strictly convex LQ problem. Inequality offsets are chosen so the
/// origin is strictly feasible; equality rows are redrawn until they are
/// well conditioned. Panics if `shape` fails [`LqShape::check`].
pub fn lq_random(shape: &LqShape, seed: u64) -> OcpProblem {
    if let Err(e) = shape.check() {
        panic!("invalid LQ shape: {e}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = shape.nx;
    let mut stages: Vec<Arc<dyn StageModel>> = Vec::with_capacity(shape.horizon);
    for _ in 0..shape.horizon {
        let stage = loop {
            let stage = random_stage(&mut rng, shape);
            if equality_sigma_min(&stage) >= MIN_EQ_SIGMA {
                break stage;
            }
        };
        stages.push(Arc::new(stage));
    }
    let w = mat(&mut rng, nx, nx);
    let terminal = QuadraticTerminal {
        weight: w.tr_mul(&w) * 0.5 + Mat::identity(nx, nx),
        reference: vec(&mut rng, nx),
    };
    let x0 = vec(&mut rng, nx);
    OcpProblem::new("lq_random", x0, stages, Arc::new(terminal))
        .expect("consistent random dimensions")
}
