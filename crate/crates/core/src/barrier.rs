//! Regularized primal-dual interior-point machinery.
//!
//! Inequalities `g ≤ 0` are slacked as `g + t = 0` with `t, ν > 0` and the
//! complementarity `ν⊙t = μ`. Linearizing with the multiplier regularization
//! `ρ` gives, per row,
//!
//! ```text
//! g_w δw − ρ δν + δt = −r_g          r_g = g + t
//! t δν + ν δt        = −r_s          r_s = ν⊙t − μ
//! ```
//!
//! Eliminating `(δν, δt)` with `T_ρ = T + ρN` leaves the stagewise LQ system
//! with the Hessian increment `g_aᵀ T_ρ⁻¹N g_b` and the gradient increment
//! `g_wᵀ T_ρ⁻¹ (N r_g − r_s)`. Because every row of `g` depends either on
//! `(x, u)` or on `(x, y)`, no `u`–`y` coupling appears.

use crate::error::StepError;
use crate::linalg::{Mat, Vector};
use crate::model::StageLq;
use crate::riccati::StepTrajectory;

/// Slack floor used by [`init_ipm`].
pub const DEFAULT_T_MIN: f64 = 1e-2;

/// Slack and multiplier state over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct IpmState {
    pub t: Vec<Vector>,
    pub nu: Vec<Vector>,
    pub mu: f64,
    pub rho: f64,
    pub n_ipm: usize,
}

/// `t = max(−g0, t_min)`, `ν = μ₀ / t`, `μ = μ₀`: every row starts with
/// complementarity exactly `μ₀`.
pub fn init_ipm(g0: &[Vector], mu0: f64, t_min: f64, rho: f64) -> IpmState {
    let t: Vec<Vector> = g0.iter().map(|g| g.map(|gi| (-gi).max(t_min))).collect();
    let nu = t.iter().map(|ti| ti.map(|x| mu0 / x)).collect();
    IpmState {
        n_ipm: g0.iter().map(|g| g.len()).sum(),
        t,
        nu,
        mu: mu0,
        rho,
    }
}

/// `r_g = g + t`, `r_s = ν⊙t − μ`.
pub fn ipm_residuals(g: &Vector, t: &Vector, nu: &Vector, mu: f64) -> (Vector, Vector) {
    let r_g = g + t;
    let r_s = nu.component_mul(t).add_scalar(-mu);
    (r_g, r_s)
}

/// Diagonal of `T_ρ⁻¹ N`.
pub fn hessian_weights(t: &Vector, nu: &Vector, rho: f64) -> Vector {
    nu.zip_map(t, |n, ti| n / (ti + rho * n))
}

/// Additive changes to one stage's LQ model. There is deliberately no
/// `u`–`y` block.
#[derive(Debug, Clone, PartialEq)]
pub struct LqModification {
    pub dq_x: Vector,
    pub dq_u: Vector,
    pub dq_y: Vector,
    pub dq_xx: Mat,
    pub dq_uu: Mat,
    pub dq_yy: Mat,
    pub dq_ux: Mat,
    pub dq_yx: Mat,
}

impl LqModification {
    /// Returns a modified copy; `base` is left untouched.
    pub fn apply(&self, base: &StageLq) -> StageLq {
        let mut lq = base.clone();
        lq.q_x += &self.dq_x;
        lq.q_u += &self.dq_u;
        lq.q_y += &self.dq_y;
        lq.q_xx += &self.dq_xx;
        lq.q_uu += &self.dq_uu;
        lq.q_yy += &self.dq_yy;
        lq.q_ux += &self.dq_ux;
        lq.q_yx += &self.dq_yx;
        lq
    }
}

fn check_positive(t: &Vector, nu: &Vector) -> Result<(), StepError> {
    for i in 0..t.len() {
        if !(t[i] > 0.0 && nu[i] > 0.0) {
            return Err(StepError::NonPositive { stage: 0, row: i });
        }
    }
    Ok(())
}

/// `T_ρ⁻¹ (N r_g − r_s)` for the effective complementarity residual
/// `r_s + corrector`.
fn gradient_weights(
    lq: &StageLq,
    t: &Vector,
    nu: &Vector,
    mu: f64,
    rho: f64,
    corrector: Option<&Vector>,
) -> Vector {
    let (r_g, mut r_s) = ipm_residuals(&lq.g0, t, nu, mu);
    if let Some(c) = corrector {
        r_s += c;
    }
    let mut w = Vector::zeros(t.len());
    for i in 0..t.len() {
        w[i] = (nu[i] * r_g[i] - r_s[i]) / (t[i] + rho * nu[i]);
    }
    w
}

/// Gradient increments only; the corrector and refinement passes reuse the
/// Hessian of the predictor.
pub fn gradient_increments(
    lq: &StageLq,
    t: &Vector,
    nu: &Vector,
    mu: f64,
    rho: f64,
    corrector: Option<&Vector>,
) -> Result<(Vector, Vector, Vector), StepError> {
    check_positive(t, nu)?;
    let w = gradient_weights(lq, t, nu, mu, rho, corrector);
    Ok((lq.g_x.tr_mul(&w), lq.g_u.tr_mul(&w), lq.g_y.tr_mul(&w)))
}

fn weighted_gram(a: &Mat, d: &Vector, b: &Mat) -> Mat {
    let mut db = b.clone();
    for (i, di) in d.iter().enumerate() {
        db.row_mut(i).scale_mut(*di);
    }
    a.tr_mul(&db)
}

/// Interior-point modification of one stage's LQ model.
pub fn modify_lq(
    lq: &StageLq,
    t: &Vector,
    nu: &Vector,
    mu: f64,
    rho: f64,
    corrector: Option<&Vector>,
) -> Result<LqModification, StepError> {
    let (dq_x, dq_u, dq_y) = gradient_increments(lq, t, nu, mu, rho, corrector)?;
    let d = hessian_weights(t, nu, rho);
    Ok(LqModification {
        dq_x,
        dq_u,
        dq_y,
        dq_xx: weighted_gram(&lq.g_x, &d, &lq.g_x),
        dq_uu: weighted_gram(&lq.g_u, &d, &lq.g_u),
        dq_yy: weighted_gram(&lq.g_y, &d, &lq.g_y),
        dq_ux: weighted_gram(&lq.g_u, &d, &lq.g_x),
        dq_yx: weighted_gram(&lq.g_y, &d, &lq.g_x),
    })
}

/// Recovers `(δν, δt)` from the primal step, given `g_w δw` for the stage:
///
/// ```text
/// δν = T_ρ⁻¹ [−r_s + N (r_g + g_w δw)]
/// δt = −r_g − g_w δw + ρ δν
/// ```
pub fn recover_ipm_step(
    g_w_dw: &Vector,
    r_g: &Vector,
    r_s: &Vector,
    t: &Vector,
    nu: &Vector,
    rho: f64,
) -> (Vector, Vector) {
    let n = t.len();
    let mut dnu = Vector::zeros(n);
    let mut dt = Vector::zeros(n);
    for i in 0..n {
        let lin = r_g[i] + g_w_dw[i];
        dnu[i] = (-r_s[i] + nu[i] * lin) / (t[i] + rho * nu[i]);
        dt[i] = -lin + rho * dnu[i];
    }
    (dnu, dt)
}

/// Fills `step.dnu`, `step.dt` from the primal part of `step` for every
/// stage; `corrector` is added to the complementarity residual.
pub fn recover_ipm_trajectory(
    lqs: &[StageLq],
    t: &[Vector],
    nu: &[Vector],
    step: &mut StepTrajectory,
    mu: f64,
    rho: f64,
    corrector: Option<&[Vector]>,
) {
    step.dnu.clear();
    step.dt.clear();
    for (k, lq) in lqs.iter().enumerate() {
        let gdw = &lq.g_x * &step.dx[k] + &lq.g_u * &step.du[k] + &lq.g_y * &step.dx[k + 1];
        let (r_g, mut r_s) = ipm_residuals(&lq.g0, &t[k], &nu[k], mu);
        if let Some(c) = corrector {
            r_s += &c[k];
        }
        let (dnu, dt) = recover_ipm_step(&gdw, &r_g, &r_s, &t[k], &nu[k], rho);
        step.dnu.push(dnu);
        step.dt.push(dt);
    }
}

/// Largest `α ∈ [0, 1]` with `v + α dv ≥ (1 − τ) v` elementwise.
pub fn fraction_to_boundary(v: &Vector, dv: &Vector, tau: f64) -> f64 {
    debug_assert!(tau > 0.0 && tau < 1.0);
    v.iter().zip(dv.iter()).fold(1.0_f64, |alpha, (vi, di)| {
        if *di < 0.0 {
            alpha.min(-tau * vi / di)
        } else {
            alpha
        }
    })
}

/// Step bounds over the whole horizon: `(α_max, α_ν_max)`.
pub fn horizon_step_bounds(
    t: &[Vector],
    dt: &[Vector],
    nu: &[Vector],
    dnu: &[Vector],
    tau: f64,
) -> (f64, f64) {
    let a = t
        .iter()
        .zip(dt)
        .fold(1.0_f64, |m, (v, d)| m.min(fraction_to_boundary(v, d, tau)));
    let b = nu
        .iter()
        .zip(dnu)
        .fold(1.0_f64, |m, (v, d)| m.min(fraction_to_boundary(v, d, tau)));
    (a, b)
}

/// `Σ νᵀt` summed stage by stage in index order.
pub fn total_complementarity(nu: &[Vector], t: &[Vector]) -> f64 {
    nu.iter().zip(t).map(|(n, ti)| n.dot(ti)).sum()
}

/// `Σ (ν + α_ν δν)ᵀ(t + α δt)`.
pub fn trial_complementarity(
    nu: &[Vector],
    t: &[Vector],
    dnu: &[Vector],
    dt: &[Vector],
    alpha: f64,
    alpha_nu: f64,
) -> f64 {
    let mut sum = 0.0;
    for k in 0..nu.len() {
        for i in 0..nu[k].len() {
            sum += (nu[k][i] + alpha_nu * dnu[k][i]) * (t[k][i] + alpha * dt[k][i]);
        }
    }
    sum
}

/// Result of the predictor-corrector barrier update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierUpdate {
    pub sigma: f64,
    pub mu: f64,
}

/// Mehrotra update from the affine (μ = 0) step, already damped by its
/// fraction-to-boundary bounds `alpha`, `alpha_nu`:
/// `σ = clip(trial / current, 0, 1)³`, `μ = σ · current / n_ipm`.
/// Returns `None` when there are no interior-point rows.
pub fn mpc_update(
    nu: &[Vector],
    t: &[Vector],
    dnu_aff: &[Vector],
    dt_aff: &[Vector],
    alpha: f64,
    alpha_nu: f64,
    n_ipm: usize,
) -> Option<BarrierUpdate> {
    if n_ipm == 0 {
        return None;
    }
    let current = total_complementarity(nu, t);
    let trial = trial_complementarity(nu, t, dnu_aff, dt_aff, alpha, alpha_nu);
    let ratio = if current > 0.0 { trial / current } else { 0.0 };
    let sigma = ratio.clamp(0.0, 1.0).powi(3);
    Some(BarrierUpdate {
        sigma,
        mu: (sigma * current / n_ipm as f64).max(0.0),
    })
}

/// Accepts the corrector iff it does not increase the trial complementarity.
pub fn corrector_safeguard(with_corrector: f64, without_corrector: f64) -> bool {
    with_corrector <= without_corrector
}

/// Rewrites the equality rows `h(w) = 0` as the pair `h ≤ 0`, `−h ≤ 0`.
pub fn equality_to_box(h0: &Vector, h_x: &Mat, h_w: &Mat) -> (Vector, Mat, Mat) {
    let m = h0.len();
    let mut g0 = Vector::zeros(2 * m);
    g0.rows_mut(0, m).copy_from(h0);
    g0.rows_mut(m, m).copy_from(&(-h0));
    let g_x = crate::linalg::vstack(&[h_x, &(-h_x)], h_x.ncols());
    let g_w = crate::linalg::vstack(&[h_w, &(-h_w)], h_w.ncols());
    (g0, g_x, g_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IneqLayout, StageDims};

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn scalar_bound_stage() -> StageLq {
        // u ≤ 1 on a 1-state, 1-input stage: g = u − 1
        let d = StageDims {
            npsi: 1,
            ..StageDims::unconstrained(1, 1, 1)
        };
        StageLq {
            dims: d,
            layout: IneqLayout {
                nphi: 0,
                ns_box: 0,
                npsi: 1,
                nc_box: 0,
            },
            f0: v(&[0.0]),
            f_x: Mat::identity(1, 1),
            f_u: Mat::identity(1, 1),
            f_y: -Mat::identity(1, 1),
            s0: Vector::zeros(0),
            s_x: Mat::zeros(0, 1),
            s_y: Mat::zeros(0, 1),
            c0: Vector::zeros(0),
            c_x: Mat::zeros(0, 1),
            c_u: Mat::zeros(0, 1),
            g0: v(&[-1.0]),
            g_x: Mat::zeros(1, 1),
            g_u: Mat::identity(1, 1),
            g_y: Mat::zeros(1, 1),
            q_x: v(&[0.0]),
            q_u: v(&[0.0]),
            q_y: v(&[0.0]),
            q_xx: Mat::identity(1, 1),
            q_uu: Mat::identity(1, 1),
            q_yy: Mat::zeros(1, 1),
            q_ux: Mat::zeros(1, 1),
            q_yx: Mat::zeros(1, 1),
        }
    }

    #[test]
    fn init_interior_and_clamped() {
        let s = init_ipm(&[v(&[-1.0, 5.0])], 1.0, DEFAULT_T_MIN, 1e-8);
        assert_eq!(s.t[0], v(&[1.0, 0.01]));
        assert_eq!(s.nu[0][0], 1.0);
        assert!((s.nu[0][1] - 100.0).abs() < 1e-12);
        assert_eq!(s.mu, 1.0);
        assert_eq!(s.n_ipm, 2);
    }

    #[test]
    fn residuals_by_hand() {
        let (rg, rs) = ipm_residuals(&v(&[-2.0]), &v(&[2.0]), &v(&[0.5]), 1.0);
        assert_eq!((rg[0], rs[0]), (0.0, 0.0));
        let (rg, rs) = ipm_residuals(&v(&[0.0]), &v(&[1.0]), &v(&[2.0]), 0.0);
        assert_eq!((rg[0], rs[0]), (1.0, 2.0));
    }

    #[test]
    fn scalar_bound_modification() {
        let lq = scalar_bound_stage();
        let m = modify_lq(&lq, &v(&[1.0]), &v(&[1.0]), 0.0, 0.0, None).unwrap();
        assert_eq!(m.dq_uu[(0, 0)], 1.0);
        // r_g = g + t = 0 and r_s = ν t − μ = 1: gradient increment −r_s / t
        assert_eq!(m.dq_u[0], -1.0);
        // at the central point μ = νt the increment vanishes
        let m = modify_lq(&lq, &v(&[1.0]), &v(&[1.0]), 1.0, 0.0, None).unwrap();
        assert_eq!(m.dq_u[0], 0.0);
        assert_eq!(m.dq_yy[(0, 0)], 0.0);
    }

    #[test]
    fn no_inequalities_no_increments() {
        let mut lq = scalar_bound_stage();
        lq.g0 = Vector::zeros(0);
        lq.g_x = Mat::zeros(0, 1);
        lq.g_u = Mat::zeros(0, 1);
        lq.g_y = Mat::zeros(0, 1);
        let m = modify_lq(&lq, &Vector::zeros(0), &Vector::zeros(0), 0.3, 1e-8, None).unwrap();
        assert_eq!(m.dq_uu[(0, 0)], 0.0);
        assert_eq!(m.dq_u[0], 0.0);
        let applied = m.apply(&lq);
        assert_eq!(applied, lq);
    }

    #[test]
    fn non_positive_slack_rejected() {
        let lq = scalar_bound_stage();
        assert!(matches!(
            modify_lq(&lq, &v(&[0.0]), &v(&[1.0]), 0.0, 0.0, None),
            Err(StepError::NonPositive { row: 0, .. })
        ));
    }

    #[test]
    fn recovery_by_hand() {
        let (dnu, dt) = recover_ipm_step(
            &v(&[0.0]),
            &v(&[0.0]),
            &v(&[0.0]),
            &v(&[1.0]),
            &v(&[1.0]),
            0.0,
        );
        assert_eq!((dnu[0], dt[0]), (0.0, 0.0));
        let (dnu, dt) = recover_ipm_step(
            &v(&[0.0]),
            &v(&[0.0]),
            &v(&[1.0]),
            &v(&[1.0]),
            &v(&[1.0]),
            0.0,
        );
        assert_eq!((dnu[0], dt[0]), (-1.0, 0.0));
    }

    #[test]
    fn recovery_satisfies_linearized_rows() {
        let (t, nu, rho) = (v(&[0.7, 2.0]), v(&[0.3, 1.5]), 1e-3);
        let (r_g, r_s) = (v(&[0.1, -0.4]), v(&[0.05, 0.2]));
        let gdw = v(&[0.25, -0.6]);
        let (dnu, dt) = recover_ipm_step(&gdw, &r_g, &r_s, &t, &nu, rho);
        for i in 0..2 {
            let row2 = gdw[i] - rho * dnu[i] + dt[i] + r_g[i];
            let row3 = t[i] * dnu[i] + nu[i] * dt[i] + r_s[i];
            assert!(row2.abs() < 1e-15 && row3.abs() < 1e-15);
        }
    }

    #[test]
    fn fraction_to_boundary_cases() {
        assert_eq!(
            fraction_to_boundary(&v(&[1.0, 2.0]), &v(&[0.0, 3.0]), 0.995),
            1.0
        );
        assert!((fraction_to_boundary(&v(&[1.0]), &v(&[-2.0]), 0.995) - 0.4975).abs() < 1e-15);
    }

    #[test]
    fn mpc_cases() {
        let nu = [v(&[1.0, 2.0])];
        let t = [v(&[1.0, 0.5])];
        // affine step lands exactly on zero complementarity
        let u = mpc_update(&nu, &t, &[v(&[-1.0, -2.0])], &[v(&[0.0, 0.0])], 1.0, 1.0, 2).unwrap();
        assert_eq!((u.sigma, u.mu), (0.0, 0.0));
        let u = mpc_update(&nu, &t, &[v(&[0.0, 0.0])], &[v(&[0.0, 0.0])], 1.0, 1.0, 2).unwrap();
        assert_eq!(u.sigma, 1.0);
        assert_eq!(u.mu, 1.0);
        // halve every product: ν scaled by 0.5
        let u = mpc_update(&nu, &t, &[v(&[-0.5, -1.0])], &[v(&[0.0, 0.0])], 1.0, 1.0, 2).unwrap();
        assert!((u.sigma - 0.125).abs() < 1e-15);
        assert!((u.mu - 0.125 * 2.0 / 2.0).abs() < 1e-15);
        assert!(mpc_update(&[], &[], &[], &[], 1.0, 1.0, 0).is_none());
    }

    #[test]
    fn safeguard_semantics() {
        assert!(corrector_safeguard(0.3, 1.0));
        assert!(!corrector_safeguard(1.0, 0.3));
        assert!(corrector_safeguard(0.5, 0.5));
    }

    #[test]
    fn box_rows() {
        let (g0, gx, gw) = equality_to_box(&v(&[0.2]), &Mat::identity(1, 2), &Mat::identity(1, 1));
        assert_eq!(g0, v(&[0.2, -0.2]));
        assert_eq!(gx.row(1)[0], -1.0);
        assert_eq!(gw.column(0).as_slice(), &[1.0, -1.0]);
    }
}
