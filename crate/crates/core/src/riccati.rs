//! Backward Riccati recursion over nullspace-reduced stage systems.
//!
//! The recursion is split in two: [`factorize`] handles everything that
//! depends only on Hessians and Jacobians (reduced Hessians, feedback gains,
//! `V_xx`), and [`feedforward`] pushes one right-hand side through the stored
//! factorization. The predictor, corrector and refinement passes all share one
//! factorization and differ only in the right-hand side.

use nalgebra::{Cholesky, Dyn};
use rayon::prelude::*;

use crate::error::StepError;
use crate::linalg::{
    inf_norm, is_finite_mat, is_finite_vec, symmetrize, vstack, vstack_vec, Mat, Vector,
};
use crate::model::{EqMultipliers, StageLq};
use crate::projection::EqualityProjector;

/// Jitter schedule for the reduced Hessian: 0, then `1e-8 ·10ᵏ` up to `1e-2`.
pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-2;

/// Per-stage data that can be computed before the recursion starts.
#[derive(Debug, Clone)]
pub struct StagePresolve {
    /// The (possibly IPM-modified) LQ model that defines the linear system.
    pub lq: StageLq,
    pub projector: EqualityProjector,
    /// First-order particular solutions `h⁺ h_x`.
    pub du_x: Mat,
    pub dy_x: Mat,
    pub consistent: bool,
}

/// Stacked `h_x = [f_x; s_x; c_x]`.
pub fn stacked_h_x(lq: &StageLq) -> Mat {
    vstack(&[&lq.f_x, &lq.s_x, &lq.c_x], lq.nx())
}

/// Stacked `h0 = [f0; s0; c0]`.
pub fn stacked_h0(lq: &StageLq) -> Vector {
    vstack_vec(&[&lq.f0, &lq.s0, &lq.c0])
}

pub fn presolve_stage(lq: StageLq, pivot_tol: Option<f64>) -> Result<StagePresolve, StepError> {
    let projector = EqualityProjector::new(&lq.f_u, &lq.f_y, &lq.f0, &lq.s_y, &lq.c_u, pivot_tol)?;
    let part = projector.particular(&stacked_h_x(&lq));
    Ok(StagePresolve {
        lq,
        projector,
        du_x: part.du,
        dy_x: part.dy,
        consistent: part.consistent,
    })
}

/// Presolves every stage, concurrently when `parallel` is set.
pub fn presolve_all(
    lqs: Vec<StageLq>,
    pivot_tol: Option<f64>,
    parallel: bool,
) -> Result<Vec<StagePresolve>, StepError> {
    let run = |(k, lq): (usize, StageLq)| presolve_stage(lq, pivot_tol).map_err(|e| e.at_stage(k));
    if parallel {
        lqs.into_par_iter().enumerate().map(run).collect()
    } else {
        lqs.into_iter().enumerate().map(run).collect()
    }
}

/// Factorized stage: everything the feedforward pass needs.
#[derive(Debug, Clone)]
pub struct StageFactor {
    pub pre: StagePresolve,
    /// `Q_yy + V_xx` of the next node.
    pub q_yy_v: Mat,
    pub chol: Option<Cholesky<f64, Dyn>>,
    pub jitter: f64,
    /// Nullspace feedback `K_z`.
    pub gain_z: Mat,
    /// `K_y = Z_y K_z − δŶ`.
    pub gain_y: Mat,
}

#[derive(Debug, Clone)]
pub struct Factorization {
    pub stages: Vec<StageFactor>,
    /// `V_xx` at nodes `0..=N`.
    pub v_xx: Vec<Mat>,
    pub terminal_hess: Mat,
    /// Number of stages that needed jitter.
    pub jitter_count: usize,
}

impl Factorization {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }
}

fn factor_reduced(mut q_zz: Mat) -> Option<(Cholesky<f64, Dyn>, f64)> {
    symmetrize(&mut q_zz);
    if let Some(c) = Cholesky::new(q_zz.clone()) {
        return Some((c, 0.0));
    }
    let n = q_zz.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let m = &q_zz + Mat::identity(n, n) * jitter;
        if let Some(c) = Cholesky::new(m) {
            return Some((c, jitter));
        }
        jitter *= 10.0;
    }
    None
}

/// Backward pass over Hessians and Jacobians: reduced Hessians, feedback gains
/// and `V_xx` at every node.
pub fn factorize(pre: Vec<StagePresolve>, terminal_hess: &Mat) -> Result<Factorization, StepError> {
    let n = pre.len();
    let mut v_xx = vec![Mat::zeros(0, 0); n + 1];
    v_xx[n] = terminal_hess.clone();
    let mut stages: Vec<Option<StageFactor>> = (0..n).map(|_| None).collect();
    let mut jitter_count = 0;

    for (k, p) in pre.into_iter().enumerate().rev() {
        let lq = &p.lq;
        let z_u = &p.projector.basis.z_u;
        let z_y = &p.projector.basis.z_y;
        let nx = lq.nx();
        let q_yy_v = &lq.q_yy + &v_xx[k + 1];

        let u_bar = &lq.q_ux - &lq.q_uu * &p.du_x;
        let y_bar = &lq.q_yx - &q_yy_v * &p.dy_x;
        let z0 = z_u.tr_mul(&u_bar) + z_y.tr_mul(&y_bar);

        let (chol, jitter, gain_z) = if z_u.ncols() == 0 {
            (None, 0.0, Mat::zeros(0, nx))
        } else {
            let q_zz = z_u.tr_mul(&(&lq.q_uu * z_u)) + z_y.tr_mul(&(&q_yy_v * z_y));
            if !is_finite_mat(&q_zz) {
                return Err(StepError::NonFinite {
                    stage: k,
                    what: "reduced Hessian",
                });
            }
            let (c, j) = factor_reduced(q_zz).ok_or(StepError::Indefinite {
                stage: k,
                jitter: JITTER_MAX,
            })?;
            let gain = -c.solve(&z0);
            (Some(c), j, gain)
        };
        if jitter > 0.0 {
            jitter_count += 1;
        }

        let mut v = &lq.q_xx + z0.tr_mul(&gain_z)
            - u_bar.tr_mul(&p.du_x)
            - y_bar.tr_mul(&p.dy_x)
            - p.du_x.tr_mul(&lq.q_ux)
            - p.dy_x.tr_mul(&lq.q_yx);
        symmetrize(&mut v);
        if !is_finite_mat(&v) {
            return Err(StepError::NonFinite {
                stage: k,
                what: "value Hessian",
            });
        }
        v_xx[k] = v;
        let gain_y = z_y * &gain_z - &p.dy_x;
        stages[k] = Some(StageFactor {
            pre: p,
            q_yy_v,
            chol,
            jitter,
            gain_z,
            gain_y,
        });
    }
    Ok(Factorization {
        stages: stages
            .into_iter()
            .map(|s| s.expect("every stage factorized"))
            .collect(),
        v_xx,
        terminal_hess: terminal_hess.clone(),
        jitter_count,
    })
}

/// Zero-order right-hand side of the stagewise linear system: gradients,
/// stacked equality residuals and the terminal gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroOrderRhs {
    pub q_x: Vec<Vector>,
    pub q_u: Vec<Vector>,
    pub q_y: Vec<Vector>,
    pub h0: Vec<Vector>,
    pub terminal: Vector,
}

impl ZeroOrderRhs {
    pub fn from_lqs<'a>(
        lqs: impl IntoIterator<Item = &'a StageLq>,
        terminal_grad: &Vector,
    ) -> Self {
        let mut r = Self {
            q_x: Vec::new(),
            q_u: Vec::new(),
            q_y: Vec::new(),
            h0: Vec::new(),
            terminal: terminal_grad.clone(),
        };
        for lq in lqs {
            r.q_x.push(lq.q_x.clone());
            r.q_u.push(lq.q_u.clone());
            r.q_y.push(lq.q_y.clone());
            r.h0.push(stacked_h0(lq));
        }
        r
    }

    pub fn from_factorization(fact: &Factorization, terminal_grad: &Vector) -> Self {
        Self::from_lqs(fact.stages.iter().map(|s| &s.pre.lq), terminal_grad)
    }

    /// Same equality residuals, different gradients.
    pub fn with_gradients(&self, q_x: Vec<Vector>, q_u: Vec<Vector>, q_y: Vec<Vector>) -> Self {
        Self {
            q_x,
            q_u,
            q_y,
            h0: self.h0.clone(),
            terminal: self.terminal.clone(),
        }
    }

    pub fn inf_norm(&self) -> f64 {
        let m = |v: &[Vector]| v.iter().fold(0.0_f64, |a, x| a.max(inf_norm(x)));
        m(&self.q_x)
            .max(m(&self.q_u))
            .max(m(&self.q_y))
            .max(m(&self.h0))
            .max(inf_norm(&self.terminal))
    }
}

/// Per-stage feedforward terms for one right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFeedForward {
    /// Zero-order particular solution `h⁺ h0`.
    pub du0: Vector,
    pub dy0: Vector,
    /// `q_y + V_x` of the next node.
    pub y0: Vector,
    pub k_z: Vector,
    pub k_y: Vector,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub stages: Vec<StageFeedForward>,
    /// `V_x` at nodes `0..=N`.
    pub v_x: Vec<Vector>,
}

/// Pushes one right-hand side backward through a stored factorization.
pub fn feedforward(fact: &Factorization, rhs: &ZeroOrderRhs) -> Result<FeedForward, StepError> {
    let n = fact.horizon();
    let mut v_x = vec![Vector::zeros(0); n + 1];
    v_x[n] = rhs.terminal.clone();
    let mut stages: Vec<Option<StageFeedForward>> = (0..n).map(|_| None).collect();

    for k in (0..n).rev() {
        let sf = &fact.stages[k];
        let p = &sf.pre;
        let lq = &p.lq;
        let z_u = &p.projector.basis.z_u;
        let z_y = &p.projector.basis.z_y;

        let part = p.projector.particular_vec(&rhs.h0[k]);
        let du0 = part.du.column(0).into_owned();
        let dy0 = part.dy.column(0).into_owned();
        let y0 = &rhs.q_y[k] + &v_x[k + 1];
        let u_bar0 = &rhs.q_u[k] - &lq.q_uu * &du0;
        let y_bar0 = &y0 - &sf.q_yy_v * &dy0;
        let z0 = z_u.tr_mul(&u_bar0) + z_y.tr_mul(&y_bar0);
        let k_z = match &sf.chol {
            Some(c) => -c.solve(&z0),
            None => Vector::zeros(0),
        };

        let v = &rhs.q_x[k] + sf.gain_z.tr_mul(&z0)
            - p.du_x.tr_mul(&u_bar0)
            - p.dy_x.tr_mul(&y_bar0)
            - lq.q_ux.tr_mul(&du0)
            - lq.q_yx.tr_mul(&dy0);
        if !is_finite_vec(&v) {
            return Err(StepError::NonFinite {
                stage: k,
                what: "value gradient",
            });
        }
        v_x[k] = v;
        let k_y = z_y * &k_z - &dy0;
        stages[k] = Some(StageFeedForward {
            du0,
            dy0,
            y0,
            k_z,
            k_y,
            consistent: part.consistent,
        });
    }
    Ok(FeedForward {
        stages: stages
            .into_iter()
            .map(|s| s.expect("every stage visited"))
            .collect(),
        v_x,
    })
}

/// Factorization plus the feedforward terms of one right-hand side.
#[derive(Debug, Clone)]
pub struct RiccatiGains {
    pub factorization: Factorization,
    pub feedforward: FeedForward,
}

pub fn backward_pass(
    pre: Vec<StagePresolve>,
    terminal_hess: &Mat,
    rhs: &ZeroOrderRhs,
) -> Result<RiccatiGains, StepError> {
    let factorization = factorize(pre, terminal_hess)?;
    let feedforward = feedforward(&factorization, rhs)?;
    Ok(RiccatiGains {
        factorization,
        feedforward,
    })
}

/// `δx₀ = 0`, `δx_{k+1} = k_y + K_y δx_k`.
pub fn affine_rollout(
    k_y: &[Vector],
    gain_y: &[Mat],
    nx0: usize,
) -> Result<Vec<Vector>, StepError> {
    let mut dx = Vec::with_capacity(k_y.len() + 1);
    dx.push(Vector::zeros(nx0));
    for (k, (kk, gk)) in k_y.iter().zip(gain_y).enumerate() {
        let next = kk + gk * &dx[k];
        if !is_finite_vec(&next) {
            return Err(StepError::NonFinite {
                stage: k,
                what: "rollout",
            });
        }
        dx.push(next);
    }
    Ok(dx)
}

pub fn forward_rollout(fact: &Factorization, ff: &FeedForward) -> Result<Vec<Vector>, StepError> {
    let k_y: Vec<Vector> = ff.stages.iter().map(|s| s.k_y.clone()).collect();
    let gains: Vec<Mat> = fact.stages.iter().map(|s| s.gain_y.clone()).collect();
    let nx0 = fact
        .stages
        .first()
        .map_or(fact.terminal_hess.nrows(), |s| s.pre.lq.nx());
    affine_rollout(&k_y, &gains, nx0)
}

/// Full primal-dual step. `dnu`/`dt` are empty until the interior-point
/// recovery fills them.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrajectory {
    pub dx: Vec<Vector>,
    pub du: Vec<Vector>,
    pub dz: Vec<Vector>,
    pub dlambda: Vec<EqMultipliers>,
    pub dnu: Vec<Vector>,
    pub dt: Vec<Vector>,
    /// False if any stage's equality rows were inconsistent.
    pub consistent: bool,
    /// Worst residual of the stagewise dual least-squares problems.
    pub dual_residual: f64,
}

impl StepTrajectory {
    pub fn horizon(&self) -> usize {
        self.du.len()
    }

    /// Elementwise sum of the primal and equality-dual parts.
    pub fn add(&self, other: &StepTrajectory) -> StepTrajectory {
        let addv =
            |a: &[Vector], b: &[Vector]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
        StepTrajectory {
            dx: addv(&self.dx, &other.dx),
            du: addv(&self.du, &other.du),
            dz: addv(&self.dz, &other.dz),
            dlambda: self
                .dlambda
                .iter()
                .zip(&other.dlambda)
                .map(|(a, b)| EqMultipliers {
                    f: &a.f + &b.f,
                    s: &a.s + &b.s,
                    c: &a.c + &b.c,
                })
                .collect(),
            dnu: Vec::new(),
            dt: Vec::new(),
            consistent: self.consistent && other.consistent,
            dual_residual: self.dual_residual.max(other.dual_residual),
        }
    }
}

struct StageStep {
    dz: Vector,
    du: Vector,
    dlambda: EqMultipliers,
    dual_residual: f64,
}

fn recover_stage(
    sf: &StageFactor,
    st: &StageFeedForward,
    q_u: &Vector,
    dx: &Vector,
    dy: &Vector,
) -> StageStep {
    let p = &sf.pre;
    let lq = &p.lq;
    let dz = &st.k_z + &sf.gain_z * dx;
    let du = &p.projector.basis.z_u * &dz - &st.du0 - &p.du_x * dx;
    let grad_u = q_u + &lq.q_uu * &du + &lq.q_ux * dx;
    let grad_y = &st.y0 + &sf.q_yy_v * dy + &lq.q_yx * dx;
    let d = p.projector.dual(&grad_u, &grad_y);
    StageStep {
        dz,
        du,
        dlambda: EqMultipliers {
            f: d.f,
            s: d.s,
            c: d.c,
        },
        dual_residual: d.residual,
    }
}

/// Post-rollout reconstruction of `δz`, `δu` and `δλ`; stages are independent.
pub fn recover_steps(
    fact: &Factorization,
    ff: &FeedForward,
    rhs: &ZeroOrderRhs,
    dx: Vec<Vector>,
    parallel: bool,
) -> StepTrajectory {
    let n = fact.horizon();
    let run = |k: usize| {
        recover_stage(
            &fact.stages[k],
            &ff.stages[k],
            &rhs.q_u[k],
            &dx[k],
            &dx[k + 1],
        )
    };
    let steps: Vec<StageStep> = if parallel {
        (0..n).into_par_iter().map(run).collect()
    } else {
        (0..n).map(run).collect()
    };
    let mut out = StepTrajectory {
        dx,
        du: Vec::with_capacity(n),
        dz: Vec::with_capacity(n),
        dlambda: Vec::with_capacity(n),
        dnu: Vec::new(),
        dt: Vec::new(),
        consistent: fact.stages.iter().all(|s| s.pre.consistent)
            && ff.stages.iter().all(|s| s.consistent),
        dual_residual: 0.0,
    };
    for s in steps {
        out.dual_residual = out.dual_residual.max(s.dual_residual);
        out.du.push(s.du);
        out.dz.push(s.dz);
        out.dlambda.push(s.dlambda);
    }
    out
}

/// Feedforward, rollout and recovery for one right-hand side.
pub fn solve_lq(
    fact: &Factorization,
    rhs: &ZeroOrderRhs,
    parallel: bool,
) -> Result<StepTrajectory, StepError> {
    let ff = feedforward(fact, rhs)?;
    let dx = forward_rollout(fact, &ff)?;
    Ok(recover_steps(fact, &ff, rhs, dx, parallel))
}

/// Residual of the stagewise linear system (without jitter) at `step`, laid
/// out as a right-hand side so it can be fed straight back into [`solve_lq`].
pub fn linear_residual(
    fact: &Factorization,
    rhs: &ZeroOrderRhs,
    step: &StepTrajectory,
) -> ZeroOrderRhs {
    let n = fact.horizon();
    let mut r = ZeroOrderRhs {
        q_x: Vec::with_capacity(n),
        q_u: Vec::with_capacity(n),
        q_y: Vec::with_capacity(n),
        h0: Vec::with_capacity(n),
        terminal: &rhs.terminal + &fact.terminal_hess * &step.dx[n],
    };
    for k in 0..n {
        let lq = &fact.stages[k].pre.lq;
        let (dx, du, dy) = (&step.dx[k], &step.du[k], &step.dx[k + 1]);
        let l = &step.dlambda[k];
        r.q_u.push(
            &rhs.q_u[k] + &lq.q_uu * du + &lq.q_ux * dx + lq.f_u.tr_mul(&l.f) + lq.c_u.tr_mul(&l.c),
        );
        r.q_y.push(
            &rhs.q_y[k] + &lq.q_yy * dy + &lq.q_yx * dx + lq.f_y.tr_mul(&l.f) + lq.s_y.tr_mul(&l.s),
        );
        r.q_x.push(
            &rhs.q_x[k]
                + &lq.q_xx * dx
                + lq.q_ux.tr_mul(du)
                + lq.q_yx.tr_mul(dy)
                + lq.f_x.tr_mul(&l.f)
                + lq.s_x.tr_mul(&l.s)
                + lq.c_x.tr_mul(&l.c),
        );
        let rf = &rhs.h0[k].rows(0, lq.f0.len()) + &lq.f_x * dx + &lq.f_u * du + &lq.f_y * dy;
        let rs = &rhs.h0[k].rows(lq.f0.len(), lq.s0.len()) + &lq.s_x * dx + &lq.s_y * dy;
        let rc =
            &rhs.h0[k].rows(lq.f0.len() + lq.s0.len(), lq.c0.len()) + &lq.c_x * dx + &lq.c_u * du;
        r.h0.push(vstack_vec(&[&rf, &rs, &rc]));
    }
    r
}

/// L∞ norm of the KKT rows of a linear residual: `u` rows, merged `y`/next-`x`
/// rows and equality rows. The first node's `x` row is not a condition.
pub fn residual_norm(r: &ZeroOrderRhs) -> f64 {
    let n = r.q_u.len();
    let mut m = 0.0_f64;
    for k in 0..n {
        m = m.max(inf_norm(&r.q_u[k])).max(inf_norm(&r.h0[k]));
        let next = if k + 1 < n {
            &r.q_x[k + 1]
        } else {
            &r.terminal
        };
        m = m.max(inf_norm(&(&r.q_y[k] + next)));
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineInfo {
    pub passes: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
}

/// Iterative refinement with the stored factorization. Each pass solves for
/// the correction with the current linear residual as right-hand side; a pass
/// that does not reduce the residual is discarded and ends the loop.
pub fn refine(
    fact: &Factorization,
    rhs: &ZeroOrderRhs,
    step: StepTrajectory,
    max_passes: usize,
    tol: f64,
    parallel: bool,
) -> Result<(StepTrajectory, RefineInfo), StepError> {
    let mut cur = step;
    let mut res = residual_norm(&linear_residual(fact, rhs, &cur));
    let mut info = RefineInfo {
        passes: 0,
        initial_residual: res,
        final_residual: res,
    };
    for _ in 0..max_passes {
        if res <= tol {
            break;
        }
        let r = linear_residual(fact, rhs, &cur);
        let corr = solve_lq(fact, &r, parallel)?;
        let cand = cur.add(&corr);
        let cand_res = residual_norm(&linear_residual(fact, rhs, &cand));
        info.passes += 1;
        if cand_res < res {
            cur = StepTrajectory {
                dnu: cur.dnu,
                dt: cur.dt,
                ..cand
            };
            res = cand_res;
        } else {
            break;
        }
    }
    info.final_residual = res;
    Ok((cur, info))
}
