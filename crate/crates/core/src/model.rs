//! Optimal control problem definition and its stagewise linear-quadratic model.
//!
//! A problem has `N` stages. Stage `k` couples the state `x = x_k`, the input
//! `u = u_k` and the next state `y = x_{k+1}` through
//!
//! ```text
//! cost      l(x, u)
//! dynamics  f(x, u, y) = 0        (implicit, square in y)
//! equality  c(x, u) = 0,   s(x, y) = 0
//! bounds    ψ(x, u) ≤ 0,   φ(x, y) ≤ 0
//! ```
//!
//! and a terminal cost `l_N(x_N)` closes the horizon. Terminal constraints are
//! written as `s`/`φ` rows of the last stage.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::equality_to_box;
use crate::error::ModelError;
use crate::linalg::{inf_norm, is_finite_mat, is_finite_vec, Mat, Vector};

/// Per-stage dimensions. Constraint dimensions may be zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDims {
    pub nx: usize,
    pub nu: usize,
    pub ny: usize,
    pub nc: usize,
    pub ns: usize,
    pub npsi: usize,
    pub nphi: usize,
}

impl StageDims {
    pub fn unconstrained(nx: usize, nu: usize, ny: usize) -> Self {
        Self {
            nx,
            nu,
            ny,
            nc: 0,
            ns: 0,
            npsi: 0,
            nphi: 0,
        }
    }
}

/// Values of every stage function at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct StageValues {
    pub cost: f64,
    pub f: Vector,
    pub c: Vector,
    pub s: Vector,
    pub psi: Vector,
    pub phi: Vector,
}

impl StageValues {
    pub fn zeros(d: &StageDims) -> Self {
        Self {
            cost: 0.0,
            f: Vector::zeros(d.ny),
            c: Vector::zeros(d.nc),
            s: Vector::zeros(d.ns),
            psi: Vector::zeros(d.npsi),
            phi: Vector::zeros(d.nphi),
        }
    }
}

/// Cost gradient, Gauss-Newton cost Hessian and constraint Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct StageJacobians {
    pub l_x: Vector,
    pub l_u: Vector,
    pub l_xx: Mat,
    pub l_uu: Mat,
    pub l_ux: Mat,
    pub f_x: Mat,
    pub f_u: Mat,
    pub f_y: Mat,
    pub c_x: Mat,
    pub c_u: Mat,
    pub s_x: Mat,
    pub s_y: Mat,
    pub psi_x: Mat,
    pub psi_u: Mat,
    pub phi_x: Mat,
    pub phi_y: Mat,
}

impl StageJacobians {
    pub fn zeros(d: &StageDims) -> Self {
        Self {
            l_x: Vector::zeros(d.nx),
            l_u: Vector::zeros(d.nu),
            l_xx: Mat::zeros(d.nx, d.nx),
            l_uu: Mat::zeros(d.nu, d.nu),
            l_ux: Mat::zeros(d.nu, d.nx),
            f_x: Mat::zeros(d.ny, d.nx),
            f_u: Mat::zeros(d.ny, d.nu),
            f_y: Mat::zeros(d.ny, d.ny),
            c_x: Mat::zeros(d.nc, d.nx),
            c_u: Mat::zeros(d.nc, d.nu),
            s_x: Mat::zeros(d.ns, d.nx),
            s_y: Mat::zeros(d.ns, d.ny),
            psi_x: Mat::zeros(d.npsi, d.nx),
            psi_u: Mat::zeros(d.npsi, d.nu),
            phi_x: Mat::zeros(d.nphi, d.nx),
            phi_y: Mat::zeros(d.nphi, d.ny),
        }
    }
}

/// User-supplied stage functions. Implementations must be pure: evaluating
/// distinct stages concurrently has to be safe.
pub trait StageModel: Send + Sync {
    fn dims(&self) -> StageDims;
    fn values(&self, x: &Vector, u: &Vector, y: &Vector) -> StageValues;
    fn jacobians(&self, x: &Vector, u: &Vector, y: &Vector) -> StageJacobians;
}

pub trait TerminalCost: Send + Sync {
    fn nx(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
    fn hessian(&self, x: &Vector) -> Mat;
}

/// `½ (x − x_ref)ᵀ W (x − x_ref)`.
#[derive(Debug, Clone)]
pub struct QuadraticTerminal {
    pub weight: Mat,
    pub reference: Vector,
}

impl TerminalCost for QuadraticTerminal {
    fn nx(&self) -> usize {
        self.reference.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        let e = x - &self.reference;
        0.5 * e.dot(&(&self.weight * &e))
    }
    fn gradient(&self, x: &Vector) -> Vector {
        &self.weight * (x - &self.reference)
    }
    fn hessian(&self, _x: &Vector) -> Mat {
        self.weight.clone()
    }
}

/// How a group of non-dynamics equality constraints is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EqMode {
    /// Nullspace projection inside the Riccati recursion.
    #[default]
    Projection,
    /// Zero-width box inequalities handled by the interior-point machinery.
    Ipm,
}

impl std::str::FromStr for EqMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "projection" => Ok(Self::Projection),
            "ipm" => Ok(Self::Ipm),
            other => Err(format!(
                "unknown equality mode '{other}' (expected projection|ipm)"
            )),
        }
    }
}

/// Equality handling per constraint group: `c(x,u)` and `s(x,y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EqualityModes {
    pub state_input: EqMode,
    pub state_only: EqMode,
}

impl EqualityModes {
    pub fn uniform(mode: EqMode) -> Self {
        Self {
            state_input: mode,
            state_only: mode,
        }
    }
}

/// Row layout of the stacked inequality vector of one stage:
/// `[φ; s; −s; ψ; c; −c]`, where the `s`/`c` pairs exist only for groups in
/// IPM mode. The first `n_y_rows()` rows depend on `(x, y)`, the rest on `(x, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IneqLayout {
    pub nphi: usize,
    pub ns_box: usize,
    pub npsi: usize,
    pub nc_box: usize,
}

impl IneqLayout {
    pub fn new(d: &StageDims, modes: &EqualityModes) -> Self {
        Self {
            nphi: d.nphi,
            ns_box: if modes.state_only == EqMode::Ipm {
                d.ns
            } else {
                0
            },
            npsi: d.npsi,
            nc_box: if modes.state_input == EqMode::Ipm {
                d.nc
            } else {
                0
            },
        }
    }
    pub fn n_y_rows(&self) -> usize {
        self.nphi + 2 * self.ns_box
    }
    pub fn len(&self) -> usize {
        self.n_y_rows() + self.npsi + 2 * self.nc_box
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Whether row `i` comes from a boxed equality rather than a true inequality.
    pub fn is_boxed_row(&self, i: usize) -> bool {
        let ny = self.n_y_rows();
        if i < ny {
            i >= self.nphi
        } else {
            i - ny >= self.npsi
        }
    }
}

/// Immutable problem definition.
#[derive(Clone)]
pub struct OcpProblem {
    pub name: String,
    pub x0: Vector,
    pub stages: Vec<Arc<dyn StageModel>>,
    pub terminal: Arc<dyn TerminalCost>,
}

impl std::fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpProblem")
            .field("name", &self.name)
            .field("horizon", &self.stages.len())
            .field("x0", &self.x0.as_slice())
            .finish()
    }
}

impl OcpProblem {
    /// Builds a problem after checking that declared dimensions chain
    /// consistently across stages.
    pub fn new(
        name: impl Into<String>,
        x0: Vector,
        stages: Vec<Arc<dyn StageModel>>,
        terminal: Arc<dyn TerminalCost>,
    ) -> Result<Self, ModelError> {
        if stages.is_empty() {
            return Err(ModelError::NoStages);
        }
        let mut nx = x0.len();
        for (k, st) in stages.iter().enumerate() {
            let d = st.dims();
            if d.nx != nx {
                return Err(ModelError::Dimension {
                    stage: k,
                    item: "nx",
                    expected: (nx, 1),
                    actual: (d.nx, 1),
                });
            }
            nx = d.ny;
        }
        if terminal.nx() != nx {
            return Err(ModelError::Dimension {
                stage: stages.len(),
                item: "terminal nx",
                expected: (nx, 1),
                actual: (terminal.nx(), 1),
            });
        }
        Ok(Self {
            name: name.into(),
            x0,
            stages,
            terminal,
        })
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn dims(&self, k: usize) -> StageDims {
        self.stages[k].dims()
    }

    pub fn layouts(&self, modes: &EqualityModes) -> Vec<IneqLayout> {
        self.stages
            .iter()
            .map(|s| IneqLayout::new(&s.dims(), modes))
            .collect()
    }

    /// Total number of interior-point rows over the horizon.
    pub fn n_ipm(&self, modes: &EqualityModes) -> usize {
        self.layouts(modes).iter().map(IneqLayout::len).sum()
    }
}

/// Equality multipliers of one stage, split by constraint group.
#[derive(Debug, Clone, PartialEq)]
pub struct EqMultipliers {
    pub f: Vector,
    pub s: Vector,
    pub c: Vector,
}

/// Full primal-dual iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
    pub lambda: Vec<EqMultipliers>,
    /// Inequality multipliers per stage, laid out as [`IneqLayout`].
    pub nu: Vec<Vector>,
    pub t: Vec<Vector>,
    pub mu: f64,
    pub modes: EqualityModes,
}

impl Iterate {
    /// Default start: every node holds `x0`, inputs and equality multipliers
    /// are zero, slacks and inequality multipliers are one.
    pub fn hold_initial_state(problem: &OcpProblem, modes: EqualityModes) -> Self {
        let n = problem.horizon();
        let mut x = Vec::with_capacity(n + 1);
        x.push(problem.x0.clone());
        for k in 0..n {
            let ny = problem.dims(k).ny;
            x.push(if ny == problem.x0.len() {
                problem.x0.clone()
            } else {
                Vector::zeros(ny)
            });
        }
        let u = (0..n).map(|k| Vector::zeros(problem.dims(k).nu)).collect();
        Self::from_trajectory(problem, x, u, modes)
    }

    pub fn from_trajectory(
        problem: &OcpProblem,
        x: Vec<Vector>,
        u: Vec<Vector>,
        modes: EqualityModes,
    ) -> Self {
        let layouts = problem.layouts(&modes);
        let lambda = (0..problem.horizon())
            .map(|k| {
                let d = problem.dims(k);
                EqMultipliers {
                    f: Vector::zeros(d.ny),
                    s: Vector::zeros(if modes.state_only == EqMode::Projection {
                        d.ns
                    } else {
                        0
                    }),
                    c: Vector::zeros(if modes.state_input == EqMode::Projection {
                        d.nc
                    } else {
                        0
                    }),
                }
            })
            .collect();
        let nu = layouts
            .iter()
            .map(|l| Vector::from_element(l.len(), 1.0))
            .collect();
        let t = layouts
            .iter()
            .map(|l| Vector::from_element(l.len(), 1.0))
            .collect();
        Self {
            x,
            u,
            lambda,
            nu,
            t,
            mu: 1.0,
            modes,
        }
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }
}

/// One stage's linear-quadratic model at the current iterate.
///
/// Constraint blocks follow the active [`EqualityModes`]: equality groups in
/// IPM mode appear as box rows of `g` and their `s`/`c` blocks are empty.
/// The Q gradients carry the multiplier terms `λᵀh_w + νᵀg_w`; the
/// cost-to-go of the next state is not included. There is no `Q_uy` block.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLq {
    pub dims: StageDims,
    pub layout: IneqLayout,
    pub f0: Vector,
    pub f_x: Mat,
    pub f_u: Mat,
    pub f_y: Mat,
    pub s0: Vector,
    pub s_x: Mat,
    pub s_y: Mat,
    pub c0: Vector,
    pub c_x: Mat,
    pub c_u: Mat,
    pub g0: Vector,
    pub g_x: Mat,
    pub g_u: Mat,
    pub g_y: Mat,
    pub q_x: Vector,
    pub q_u: Vector,
    pub q_y: Vector,
    pub q_xx: Mat,
    pub q_uu: Mat,
    pub q_yy: Mat,
    pub q_ux: Mat,
    pub q_yx: Mat,
}

impl StageLq {
    pub fn nx(&self) -> usize {
        self.f_x.ncols()
    }
    pub fn nu(&self) -> usize {
        self.f_u.ncols()
    }
    pub fn ny(&self) -> usize {
        self.f_y.ncols()
    }
    /// Number of projected equality rows `[f; s; c]`.
    pub fn n_eq(&self) -> usize {
        self.f0.len() + self.s0.len() + self.c0.len()
    }
    pub fn n_ineq(&self) -> usize {
        self.g0.len()
    }
}

fn check_vec(stage: usize, item: &'static str, v: &Vector, n: usize) -> Result<(), ModelError> {
    if v.len() != n {
        return Err(ModelError::Dimension {
            stage,
            item,
            expected: (n, 1),
            actual: (v.len(), 1),
        });
    }
    if !is_finite_vec(v) {
        return Err(ModelError::NonFinite { stage, item });
    }
    Ok(())
}

fn check_mat(
    stage: usize,
    item: &'static str,
    m: &Mat,
    r: usize,
    c: usize,
) -> Result<(), ModelError> {
    if m.shape() != (r, c) {
        return Err(ModelError::Dimension {
            stage,
            item,
            expected: (r, c),
            actual: m.shape(),
        });
    }
    if !is_finite_mat(m) {
        return Err(ModelError::NonFinite { stage, item });
    }
    Ok(())
}

pub(crate) fn check_values(stage: usize, d: &StageDims, v: &StageValues) -> Result<(), ModelError> {
    if !v.cost.is_finite() {
        return Err(ModelError::NonFinite {
            stage,
            item: "cost",
        });
    }
    check_vec(stage, "f", &v.f, d.ny)?;
    check_vec(stage, "c", &v.c, d.nc)?;
    check_vec(stage, "s", &v.s, d.ns)?;
    check_vec(stage, "psi", &v.psi, d.npsi)?;
    check_vec(stage, "phi", &v.phi, d.nphi)
}

pub(crate) fn check_jacobians(
    stage: usize,
    d: &StageDims,
    j: &StageJacobians,
) -> Result<(), ModelError> {
    check_vec(stage, "l_x", &j.l_x, d.nx)?;
    check_vec(stage, "l_u", &j.l_u, d.nu)?;
    check_mat(stage, "l_xx", &j.l_xx, d.nx, d.nx)?;
    check_mat(stage, "l_uu", &j.l_uu, d.nu, d.nu)?;
    check_mat(stage, "l_ux", &j.l_ux, d.nu, d.nx)?;
    check_mat(stage, "f_x", &j.f_x, d.ny, d.nx)?;
    check_mat(stage, "f_u", &j.f_u, d.ny, d.nu)?;
    check_mat(stage, "f_y", &j.f_y, d.ny, d.ny)?;
    check_mat(stage, "c_x", &j.c_x, d.nc, d.nx)?;
    check_mat(stage, "c_u", &j.c_u, d.nc, d.nu)?;
    check_mat(stage, "s_x", &j.s_x, d.ns, d.nx)?;
    check_mat(stage, "s_y", &j.s_y, d.ns, d.ny)?;
    check_mat(stage, "psi_x", &j.psi_x, d.npsi, d.nx)?;
    check_mat(stage, "psi_u", &j.psi_u, d.npsi, d.nu)?;
    check_mat(stage, "phi_x", &j.phi_x, d.nphi, d.nx)?;
    check_mat(stage, "phi_y", &j.phi_y, d.nphi, d.ny)
}

/// Stacked inequality residual and Jacobians in [`IneqLayout`] order.
pub(crate) struct IneqBlock {
    pub g0: Vector,
    pub g_x: Mat,
    pub g_u: Mat,
    pub g_y: Mat,
}

pub(crate) fn stack_inequalities(
    d: &StageDims,
    layout: &IneqLayout,
    v: &StageValues,
    j: &StageJacobians,
) -> IneqBlock {
    let n = layout.len();
    let mut g0 = Vector::zeros(n);
    let mut g_x = Mat::zeros(n, d.nx);
    let mut g_u = Mat::zeros(n, d.nu);
    let mut g_y = Mat::zeros(n, d.ny);
    let mut r = 0;

    let mut put = |r: &mut usize, h0: &Vector, hx: &Mat, hw: &Mat, w_is_y: bool| {
        let m = h0.len();
        g0.rows_mut(*r, m).copy_from(h0);
        g_x.view_mut((*r, 0), (m, d.nx)).copy_from(hx);
        if w_is_y {
            g_y.view_mut((*r, 0), (m, d.ny)).copy_from(hw);
        } else {
            g_u.view_mut((*r, 0), (m, d.nu)).copy_from(hw);
        }
        *r += m;
    };

    put(&mut r, &v.phi, &j.phi_x, &j.phi_y, true);
    if layout.ns_box > 0 {
        let (b0, bx, by) = equality_to_box(&v.s, &j.s_x, &j.s_y);
        put(&mut r, &b0, &bx, &by, true);
    }
    put(&mut r, &v.psi, &j.psi_x, &j.psi_u, false);
    if layout.nc_box > 0 {
        let (b0, bx, bu) = equality_to_box(&v.c, &j.c_x, &j.c_u);
        put(&mut r, &b0, &bx, &bu, false);
    }
    debug_assert_eq!(r, n);
    IneqBlock { g0, g_x, g_u, g_y }
}

/// Evaluates stage `k` and assembles its Gauss-Newton LQ model.
pub fn evaluate_stage(
    problem: &OcpProblem,
    k: usize,
    x: &Vector,
    u: &Vector,
    y: &Vector,
    lambda: &EqMultipliers,
    nu: &Vector,
    modes: &EqualityModes,
) -> Result<StageLq, ModelError> {
    let model = &problem.stages[k];
    let d = model.dims();
    check_vec(k, "x", x, d.nx)?;
    check_vec(k, "u", u, d.nu)?;
    check_vec(k, "y", y, d.ny)?;
    let layout = IneqLayout::new(&d, modes);
    check_vec(k, "nu", nu, layout.len())?;

    let v = model.values(x, u, y);
    check_values(k, &d, &v)?;
    let j = model.jacobians(x, u, y);
    check_jacobians(k, &d, &j)?;

    let ineq = stack_inequalities(&d, &layout, &v, &j);

    let (s0, s_x, s_y) = if layout.ns_box == 0 {
        (v.s.clone(), j.s_x.clone(), j.s_y.clone())
    } else {
        (Vector::zeros(0), Mat::zeros(0, d.nx), Mat::zeros(0, d.ny))
    };
    let (c0, c_x, c_u) = if layout.nc_box == 0 {
        (v.c.clone(), j.c_x.clone(), j.c_u.clone())
    } else {
        (Vector::zeros(0), Mat::zeros(0, d.nx), Mat::zeros(0, d.nu))
    };
    check_vec(k, "lambda_f", &lambda.f, d.ny)?;
    check_vec(k, "lambda_s", &lambda.s, s0.len())?;
    check_vec(k, "lambda_c", &lambda.c, c0.len())?;

    let q_x = &j.l_x
        + j.f_x.tr_mul(&lambda.f)
        + s_x.tr_mul(&lambda.s)
        + c_x.tr_mul(&lambda.c)
        + ineq.g_x.tr_mul(nu);
    let q_u = &j.l_u + j.f_u.tr_mul(&lambda.f) + c_u.tr_mul(&lambda.c) + ineq.g_u.tr_mul(nu);
    let q_y = j.f_y.tr_mul(&lambda.f) + s_y.tr_mul(&lambda.s) + ineq.g_y.tr_mul(nu);

    Ok(StageLq {
        dims: d,
        layout,
        f0: v.f,
        f_x: j.f_x,
        f_u: j.f_u,
        f_y: j.f_y,
        s0,
        s_x,
        s_y,
        c0,
        c_x,
        c_u,
        g0: ineq.g0,
        g_x: ineq.g_x,
        g_u: ineq.g_u,
        g_y: ineq.g_y,
        q_x,
        q_u,
        q_y,
        q_xx: j.l_xx,
        q_uu: j.l_uu,
        q_yy: Mat::zeros(d.ny, d.ny),
        q_ux: j.l_ux,
        q_yx: Mat::zeros(d.ny, d.nx),
    })
}

/// Terminal value data `(l_N, ∇l_N, ∇²l_N)` at `x_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalLq {
    pub grad: Vector,
    pub hess: Mat,
}

pub fn evaluate_terminal(problem: &OcpProblem, x_n: &Vector) -> Result<TerminalLq, ModelError> {
    let n = problem.horizon();
    let nx = problem.terminal.nx();
    check_vec(n, "x_N", x_n, nx)?;
    let grad = problem.terminal.gradient(x_n);
    check_vec(n, "terminal gradient", &grad, nx)?;
    let hess = problem.terminal.hessian(x_n);
    check_mat(n, "terminal hessian", &hess, nx, nx)?;
    Ok(TerminalLq { grad, hess })
}

/// Evaluates every stage of the iterate; stages run concurrently when the
/// caller is inside a multi-threaded rayon pool and `parallel` is set.
pub fn evaluate_all(
    problem: &OcpProblem,
    iter: &Iterate,
    parallel: bool,
) -> Result<(Vec<StageLq>, TerminalLq), ModelError> {
    let eval = |k: usize| {
        evaluate_stage(
            problem,
            k,
            &iter.x[k],
            &iter.u[k],
            &iter.x[k + 1],
            &iter.lambda[k],
            &iter.nu[k],
            &iter.modes,
        )
    };
    let n = problem.horizon();
    let lqs: Result<Vec<_>, _> = if parallel {
        (0..n).into_par_iter().map(eval).collect()
    } else {
        (0..n).map(eval).collect()
    };
    let term = evaluate_terminal(problem, &iter.x[n])?;
    Ok((lqs?, term))
}

/// L∞ KKT residual components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    pub complementarity: f64,
    pub total: f64,
}

impl KktResidual {
    pub fn new(
        stationarity: f64,
        eq_violation: f64,
        ineq_violation: f64,
        complementarity: f64,
    ) -> Self {
        Self {
            stationarity,
            eq_violation,
            ineq_violation,
            complementarity,
            total: [stationarity, eq_violation, ineq_violation, complementarity]
                .into_iter()
                .fold(0.0_f64, |m, v| {
                    if v.is_nan() || m.is_nan() {
                        f64::NAN
                    } else {
                        m.max(v)
                    }
                }),
        }
    }

    /// Constraint residual family: equalities and slacked inequalities.
    pub fn primal(&self) -> f64 {
        self.eq_violation.max(self.ineq_violation)
    }

    /// Dual residual family: stationarity and complementarity.
    pub fn dual(&self) -> f64 {
        self.stationarity.max(self.complementarity)
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Residual from already evaluated LQ data. With `mu = Some(μ)` the
/// complementarity term is the perturbed `ν⊙t − μ`.
pub fn residual_from_lq(
    lqs: &[StageLq],
    term: &TerminalLq,
    iter: &Iterate,
    mu: Option<f64>,
) -> KktResidual {
    let n = lqs.len();
    let mut stat = 0.0_f64;
    let mut eq = 0.0_f64;
    let mut ineq = 0.0_f64;
    let mut comp = 0.0_f64;
    let mut nonfinite = false;
    for k in 0..n {
        let lq = &lqs[k];
        stat = stat.max(inf_norm(&lq.q_u));
        let next_x = if k + 1 < n {
            &lqs[k + 1].q_x
        } else {
            &term.grad
        };
        stat = stat.max(inf_norm(&(&lq.q_y + next_x)));
        eq = eq
            .max(inf_norm(&lq.f0))
            .max(inf_norm(&lq.s0))
            .max(inf_norm(&lq.c0));
        let t = &iter.t[k];
        let nu = &iter.nu[k];
        for i in 0..lq.g0.len() {
            let g = lq.g0[i];
            if lq.layout.is_boxed_row(i) {
                eq = eq.max(g.max(0.0));
            }
            ineq = ineq.max(g.max(0.0)).max((g + t[i]).abs());
            let c = nu[i] * t[i] - mu.unwrap_or(0.0);
            comp = comp.max(c.abs());
            nonfinite |= !(g.is_finite() && t[i].is_finite() && nu[i].is_finite());
        }
    }
    let r = KktResidual::new(stat, eq, ineq, comp);
    if nonfinite {
        KktResidual::new(
            f64::NAN,
            r.eq_violation,
            r.ineq_violation,
            r.complementarity,
        )
    } else {
        r
    }
}

/// Unscaled L∞ KKT residual of the iterate. Complementarity is measured on
/// the slacks as `ν⊙t`.
pub fn kkt_residual(problem: &OcpProblem, iter: &Iterate) -> Result<KktResidual, ModelError> {
    let (lqs, term) = evaluate_all(problem, iter, false)?;
    Ok(residual_from_lq(&lqs, &term, iter, None))
}

/// One dimension inconsistency found by [`validate_problem`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionIssue {
    pub stage: usize,
    pub item: String,
    pub expected: (usize, usize),
    pub actual: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub horizon: usize,
    pub stage_dims: Vec<StageDims>,
    pub errors: Vec<DimensionIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Probes every evaluator at the default initial trajectory and collects all
/// dimension mismatches instead of stopping at the first.
pub fn validate_problem(problem: &OcpProblem) -> ValidationReport {
    let iter = Iterate::hold_initial_state(problem, EqualityModes::default());
    let mut errors = Vec::new();
    let mut stage_dims = Vec::new();
    for (k, st) in problem.stages.iter().enumerate() {
        let d = st.dims();
        stage_dims.push(d);
        let (x, u, y) = (&iter.x[k], &iter.u[k], &iter.x[k + 1]);
        let v = st.values(x, u, y);
        let j = st.jacobians(x, u, y);
        let mut push = |item: &str, expected: (usize, usize), actual: (usize, usize)| {
            if expected != actual {
                errors.push(DimensionIssue {
                    stage: k,
                    item: item.to_string(),
                    expected,
                    actual,
                });
            }
        };
        let vl = |v: &Vector| (v.len(), 1);
        push("f", (d.ny, 1), vl(&v.f));
        push("c", (d.nc, 1), vl(&v.c));
        push("s", (d.ns, 1), vl(&v.s));
        push("psi", (d.npsi, 1), vl(&v.psi));
        push("phi", (d.nphi, 1), vl(&v.phi));
        push("l_x", (d.nx, 1), vl(&j.l_x));
        push("l_u", (d.nu, 1), vl(&j.l_u));
        push("l_xx", (d.nx, d.nx), j.l_xx.shape());
        push("l_uu", (d.nu, d.nu), j.l_uu.shape());
        push("l_ux", (d.nu, d.nx), j.l_ux.shape());
        push("f_x", (d.ny, d.nx), j.f_x.shape());
        push("f_u", (d.ny, d.nu), j.f_u.shape());
        push("f_y", (d.ny, d.ny), j.f_y.shape());
        push("c_x", (d.nc, d.nx), j.c_x.shape());
        push("c_u", (d.nc, d.nu), j.c_u.shape());
        push("s_x", (d.ns, d.nx), j.s_x.shape());
        push("s_y", (d.ns, d.ny), j.s_y.shape());
        push("psi_x", (d.npsi, d.nx), j.psi_x.shape());
        push("psi_u", (d.npsi, d.nu), j.psi_u.shape());
        push("phi_x", (d.nphi, d.nx), j.phi_x.shape());
        push("phi_y", (d.nphi, d.ny), j.phi_y.shape());
    }
    let n = problem.horizon();
    let nt = problem.terminal.nx();
    let g = problem.terminal.gradient(&iter.x[n]);
    if g.len() != nt {
        errors.push(DimensionIssue {
            stage: n,
            item: "terminal gradient".into(),
            expected: (nt, 1),
            actual: (g.len(), 1),
        });
    }
    let h = problem.terminal.hessian(&iter.x[n]);
    if h.shape() != (nt, nt) {
        errors.push(DimensionIssue {
            stage: n,
            item: "terminal hessian".into(),
            expected: (nt, nt),
            actual: h.shape(),
        });
    }
    ValidationReport {
        horizon: n,
        stage_dims,
        errors,
    }
}

/// Worst finite-difference discrepancy found for one evaluator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluatorDiscrepancy {
    pub evaluator: String,
    pub stage: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub evaluators: Vec<EvaluatorDiscrepancy>,
}

impl DerivativeReport {
    pub fn worst(&self) -> f64 {
        self.evaluators
            .iter()
            .fold(0.0, |m, e| m.max(e.max_rel_error))
    }

    pub fn get(&self, evaluator: &str) -> Option<f64> {
        self.evaluators
            .iter()
            .filter(|e| e.evaluator == evaluator)
            .map(|e| e.max_rel_error)
            .reduce(f64::max)
    }
}

fn fd_discrepancy(analytic: &Mat, fd: &Mat) -> f64 {
    analytic
        .iter()
        .zip(fd.iter())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs() / b.abs().max(1.0)))
}

/// Central differences of `eval` w.r.t. the columns of `point`.
fn central_jacobian(
    rows: usize,
    point: &Vector,
    eps: f64,
    eval: impl Fn(&Vector) -> Vector,
) -> Mat {
    let mut jac = Mat::zeros(rows, point.len());
    for i in 0..point.len() {
        let mut p = point.clone();
        p[i] += eps;
        let plus = eval(&p);
        p[i] -= 2.0 * eps;
        let minus = eval(&p);
        jac.set_column(i, &((plus - minus) / (2.0 * eps)));
    }
    jac
}

/// Compares every supplied first derivative against central finite
/// differences along `trajectory = (xs, us)`. The error measure is
/// `|analytic − fd| / max(1, |fd|)`.
pub fn derivative_check(
    problem: &OcpProblem,
    xs: &[Vector],
    us: &[Vector],
    eps: f64,
) -> Result<DerivativeReport, ModelError> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(ModelError::InvalidStep(eps));
    }
    let mut out = Vec::new();
    for (k, st) in problem.stages.iter().enumerate() {
        let d = st.dims();
        let (x, u, y) = (&xs[k], &us[k], &xs[k + 1]);
        let v = st.values(x, u, y);
        check_values(k, &d, &v)?;
        let j = st.jacobians(x, u, y);
        check_jacobians(k, &d, &j)?;

        type Pick = fn(&StageValues) -> Vector;
        let groups: [(&str, Pick, [Option<&Mat>; 3]); 5] = [
            (
                "f",
                |v| v.f.clone(),
                [Some(&j.f_x), Some(&j.f_u), Some(&j.f_y)],
            ),
            ("c", |v| v.c.clone(), [Some(&j.c_x), Some(&j.c_u), None]),
            ("s", |v| v.s.clone(), [Some(&j.s_x), None, Some(&j.s_y)]),
            (
                "psi",
                |v| v.psi.clone(),
                [Some(&j.psi_x), Some(&j.psi_u), None],
            ),
            (
                "phi",
                |v| v.phi.clone(),
                [Some(&j.phi_x), None, Some(&j.phi_y)],
            ),
        ];
        let cost_grad = [
            Mat::from_column_slice(1, d.nx, j.l_x.as_slice()),
            Mat::from_column_slice(1, d.nu, j.l_u.as_slice()),
            Mat::zeros(1, d.ny),
        ];
        let mut record = |name: &str, err: f64| {
            out.push(EvaluatorDiscrepancy {
                evaluator: name.to_string(),
                stage: k,
                max_rel_error: err,
            })
        };

        let mut non_finite = false;
        let mut eval_fd =
            |pick: &dyn Fn(&StageValues) -> Vector, rows: usize, which: usize| -> Mat {
                let fd = match which {
                    0 => central_jacobian(rows, x, eps, |p| pick(&st.values(p, u, y))),
                    1 => central_jacobian(rows, u, eps, |p| pick(&st.values(x, p, y))),
                    _ => central_jacobian(rows, y, eps, |p| pick(&st.values(x, u, p))),
                };
                non_finite |= !is_finite_mat(&fd);
                fd
            };

        let mut cost_err = 0.0_f64;
        for (which, analytic) in cost_grad.iter().enumerate() {
            let fd = eval_fd(&|v: &StageValues| Vector::from_element(1, v.cost), 1, which);
            cost_err = cost_err.max(fd_discrepancy(analytic, &fd));
        }
        let mut errs = vec![("cost", cost_err)];
        for (name, pick, jacs) in groups.iter() {
            let rows = pick(&v).len();
            if rows == 0 {
                continue;
            }
            let mut e = 0.0_f64;
            for (which, analytic) in jacs.iter().enumerate() {
                if let Some(a) = analytic {
                    let fd = eval_fd(pick, rows, which);
                    e = e.max(fd_discrepancy(a, &fd));
                }
            }
            errs.push((name, e));
        }
        if non_finite {
            return Err(ModelError::NonFinite {
                stage: k,
                item: "finite difference",
            });
        }
        for (name, e) in errs {
            record(name, e);
        }
    }

    let n = problem.horizon();
    let x_n = &xs[n];
    let grad = problem.terminal.gradient(x_n);
    let fd = central_jacobian(1, x_n, eps, |p| {
        Vector::from_element(1, problem.terminal.value(p))
    });
    if !is_finite_mat(&fd) {
        return Err(ModelError::NonFinite {
            stage: n,
            item: "finite difference",
        });
    }
    out.push(EvaluatorDiscrepancy {
        evaluator: "terminal".into(),
        stage: n,
        max_rel_error: fd_discrepancy(&Mat::from_column_slice(1, grad.len(), grad.as_slice()), &fd),
    });
    Ok(DerivativeReport { evaluators: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar stage: `½x² + ½u²`, `f = x + u − y`, `c = u − x`, `s = y − 2x`,
    /// `ψ = u − 1`, `φ = y − 3`. `bad_fu` corrupts `f_u`, `short_c` returns a
    /// wrongly sized `c`.
    struct Scalar {
        bad_fu: bool,
        short_c: bool,
    }

    const GOOD: Scalar = Scalar {
        bad_fu: false,
        short_c: false,
    };

    fn s(v: f64) -> Vector {
        Vector::from_element(1, v)
    }
    fn m(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    impl StageModel for Scalar {
        fn dims(&self) -> StageDims {
            StageDims {
                nx: 1,
                nu: 1,
                ny: 1,
                nc: 1,
                ns: 1,
                npsi: 1,
                nphi: 1,
            }
        }
        fn values(&self, x: &Vector, u: &Vector, y: &Vector) -> StageValues {
            let (x, u, y) = (x[0], u[0], y[0]);
            StageValues {
                cost: 0.5 * (x * x + u * u),
                f: s(x + u - y),
                c: if self.short_c {
                    Vector::zeros(0)
                } else {
                    s(u - x)
                },
                s: s(y - 2.0 * x),
                psi: s(u - 1.0),
                phi: s(y - 3.0),
            }
        }
        fn jacobians(&self, x: &Vector, u: &Vector, _y: &Vector) -> StageJacobians {
            StageJacobians {
                l_x: x.clone(),
                l_u: u.clone(),
                l_xx: m(1.0),
                l_uu: m(1.0),
                l_ux: m(0.0),
                f_x: m(1.0),
                f_u: m(if self.bad_fu { 2.0 } else { 1.0 }),
                f_y: m(-1.0),
                c_x: m(-1.0),
                c_u: m(1.0),
                s_x: m(-2.0),
                s_y: m(1.0),
                psi_x: m(0.0),
                psi_u: m(1.0),
                phi_x: m(0.0),
                phi_y: m(1.0),
            }
        }
    }

    fn problem(stage: Scalar) -> OcpProblem {
        let term = QuadraticTerminal {
            weight: m(1.0),
            reference: s(0.0),
        };
        OcpProblem::new("scalar", s(0.5), vec![Arc::new(stage)], Arc::new(term)).unwrap()
    }

    #[test]
    fn layout_order_and_boxed_rows() {
        let d = GOOD.dims();
        let l = IneqLayout::new(&d, &EqualityModes::default());
        assert_eq!((l.len(), l.n_y_rows()), (2, 1));
        assert!(!l.is_boxed_row(0) && !l.is_boxed_row(1));

        let l = IneqLayout::new(&d, &EqualityModes::uniform(EqMode::Ipm));
        // [φ; s; −s; ψ; c; −c]
        assert_eq!((l.len(), l.n_y_rows()), (6, 3));
        let boxed: Vec<bool> = (0..6).map(|i| l.is_boxed_row(i)).collect();
        assert_eq!(boxed, [false, true, true, false, true, true]);
    }

    #[test]
    fn dimension_chain_is_checked() {
        let term = QuadraticTerminal {
            weight: m(1.0),
            reference: s(0.0),
        };
        let bad_x0 = OcpProblem::new(
            "x",
            Vector::zeros(2),
            vec![Arc::new(GOOD)],
            Arc::new(term.clone()),
        );
        assert!(matches!(
            bad_x0,
            Err(ModelError::Dimension { stage: 0, .. })
        ));
        let empty = OcpProblem::new("e", s(0.0), Vec::new(), Arc::new(term));
        assert!(matches!(empty, Err(ModelError::NoStages)));
    }

    #[test]
    fn gradients_carry_multiplier_terms() {
        let p = problem(GOOD);
        let mut it = Iterate::hold_initial_state(&p, EqualityModes::default());
        it.u[0] = s(0.2);
        it.lambda[0].f = s(1.0);
        it.lambda[0].s = s(2.0);
        it.lambda[0].c = s(3.0);
        it.nu[0] = Vector::from_vec(vec![0.5, 0.25]);
        let (lqs, term) = evaluate_all(&p, &it, false).unwrap();
        let lq = &lqs[0];
        // q_x = x + λf − 2λs − λc, q_u = u + λf + λc + ν_ψ, q_y = −λf + λs + ν_φ
        assert!((lq.q_x[0] - (0.5 + 1.0 - 4.0 - 3.0)).abs() < 1e-15);
        assert!((lq.q_u[0] - (0.2 + 1.0 + 3.0 + 0.25)).abs() < 1e-15);
        assert!((lq.q_y[0] - (-1.0 + 2.0 + 0.5)).abs() < 1e-15);
        assert_eq!(lq.g0.as_slice(), &[0.5 - 3.0, 0.2 - 1.0]);
        assert_eq!(term.grad[0], 0.5);
    }

    #[test]
    fn ipm_mode_moves_equalities_into_boxes() {
        let p = problem(GOOD);
        let it = Iterate::hold_initial_state(&p, EqualityModes::uniform(EqMode::Ipm));
        assert_eq!(
            (it.lambda[0].s.len(), it.lambda[0].c.len(), it.nu[0].len()),
            (0, 0, 6)
        );
        let (lqs, _) = evaluate_all(&p, &it, false).unwrap();
        let lq = &lqs[0];
        assert_eq!(lq.n_eq(), 1);
        // x = y = 0.5, u = 0: s = −0.5, c = −0.5
        assert_eq!(lq.g0.as_slice(), &[-2.5, -0.5, 0.5, -1.0, -0.5, 0.5]);
        assert_eq!(lq.g_y[(2, 0)], -1.0);
        assert_eq!(lq.g_u[(4, 0)], 1.0);
    }

    #[test]
    fn residual_components() {
        let p = problem(GOOD);
        let mut it = Iterate::hold_initial_state(&p, EqualityModes::uniform(EqMode::Ipm));
        it.t[0] = Vector::from_element(6, 0.1);
        it.nu[0] = Vector::from_element(6, 2.0);
        let r = kkt_residual(&p, &it).unwrap();
        // a violated box row (+0.5) counts as an equality violation
        assert_eq!(r.eq_violation, 0.5);
        // |g + t| with g = −2.5 dominates the inequality family
        assert!((r.ineq_violation - 2.4).abs() < 1e-15);
        assert!((r.complementarity - 0.2).abs() < 1e-15);

        let (lqs, term) = evaluate_all(&p, &it, false).unwrap();
        let perturbed = residual_from_lq(&lqs, &term, &it, Some(0.2));
        assert!(perturbed.complementarity < 1e-15);
        assert_eq!(r.primal(), r.eq_violation.max(r.ineq_violation));
    }

    #[test]
    fn nan_component_poisons_total() {
        let r = KktResidual::new(1.0, f64::NAN, 0.0, 0.0);
        assert!(r.total.is_nan() && !r.is_finite());
        assert_eq!(KktResidual::new(1.0, 3.0, 2.0, 0.5).total, 3.0);
    }

    #[test]
    fn validation_collects_shape_errors() {
        assert!(validate_problem(&problem(GOOD)).is_valid());
        let rep = validate_problem(&problem(Scalar {
            bad_fu: false,
            short_c: true,
        }));
        assert_eq!(rep.errors.len(), 1);
        assert_eq!(rep.errors[0].item, "c");
        let p = problem(Scalar {
            bad_fu: false,
            short_c: true,
        });
        let it = Iterate::hold_initial_state(&p, EqualityModes::default());
        assert!(matches!(
            evaluate_all(&p, &it, false),
            Err(ModelError::Dimension { item: "c", .. })
        ));
    }

    #[test]
    fn derivative_check_flags_wrong_jacobian() {
        let xs = vec![s(0.3), s(-0.4)];
        let us = vec![s(0.7)];
        let good = derivative_check(&problem(GOOD), &xs, &us, 1e-6).unwrap();
        assert!(good.worst() < 1e-8, "{good:?}");
        let bad = derivative_check(
            &problem(Scalar {
                bad_fu: true,
                short_c: false,
            }),
            &xs,
            &us,
            1e-6,
        )
        .unwrap();
        assert!(bad.get("f").unwrap() > 0.5);
        assert!(bad.get("c").unwrap() < 1e-8);
        assert!(derivative_check(&problem(GOOD), &xs, &us, 0.0).is_err());
    }

    #[test]
    fn eq_mode_parsing() {
        assert_eq!("IPM".parse::<EqMode>(), Ok(EqMode::Ipm));
        assert_eq!("projection".parse::<EqMode>(), Ok(EqMode::Projection));
        assert!("nullspace".parse::<EqMode>().is_err());
    }
}
