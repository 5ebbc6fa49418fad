//! Dense reference solvers.
//!
//! [`assemble_dense`] writes the linearized primal-dual system of the whole
//! horizon into one unsymmetric matrix, keeping the slack and inequality
//! multiplier steps explicit. Per stage the unknowns are
//! `[δu, δy, δλ, δν, δt]` and `δx_{k+1} = δy_k`; `δx₀ = 0` is eliminated.
//! The rows are
//!
//! ```text
//! u:   Q_uu δu + Q_ux δx + h_uᵀδλ + g_uᵀδν                 = −q_u
//! y:   Q_yy δy + Q_yx δx + h_yᵀδλ + g_yᵀδν + (x rows of k+1) = −q_y − q_x⁺
//! h:   h_x δx + h_u δu + h_y δy                             = −h0
//! g:   g_x δx + g_u δu + g_y δy − ρ δν + δt                 = −(g + t)
//! c:   T δν + N δt                                          = −(ν⊙t − μ)
//! ```

use std::ops::Range;

use crate::barrier::{fraction_to_boundary, init_ipm};
use crate::error::OracleError;
use crate::linalg::{inf_norm, is_finite_mat, is_finite_vec, vstack, Mat, ThresholdLu, Vector};
use crate::model::{
    evaluate_all, residual_from_lq, EqMultipliers, EqualityModes, Iterate, KktResidual, OcpProblem,
    StageLq, TerminalLq,
};
use crate::riccati::{stacked_h0, stacked_h_x, StepTrajectory};

/// Largest dense system [`dense_barrier_solve`] accepts, in primal unknowns.
pub const MAX_DENSE_VARIABLES: usize = 500;

/// Row/column ranges of one stage's unknowns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageBlocks {
    pub u: Range<usize>,
    pub y: Range<usize>,
    pub lambda_f: Range<usize>,
    pub lambda_s: Range<usize>,
    pub lambda_c: Range<usize>,
    pub nu: Range<usize>,
    pub t: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct DenseKkt {
    pub matrix: Mat,
    pub rhs: Vector,
    pub index: Vec<StageBlocks>,
    pub nx0: usize,
}

impl DenseKkt {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// Splits a solution vector into per-stage steps.
    pub fn unpack(&self, sol: &Vector) -> StepTrajectory {
        let mut s = StepTrajectory {
            dx: vec![Vector::zeros(self.nx0)],
            du: Vec::new(),
            dz: Vec::new(),
            dlambda: Vec::new(),
            dnu: Vec::new(),
            dt: Vec::new(),
            consistent: true,
            dual_residual: 0.0,
        };
        let take = |r: &Range<usize>| sol.rows(r.start, r.len()).into_owned();
        for b in &self.index {
            s.du.push(take(&b.u));
            s.dx.push(take(&b.y));
            s.dz.push(Vector::zeros(0));
            s.dlambda.push(EqMultipliers {
                f: take(&b.lambda_f),
                s: take(&b.lambda_s),
                c: take(&b.lambda_c),
            });
            s.dnu.push(take(&b.nu));
            s.dt.push(take(&b.t));
        }
        s
    }
}

fn put(m: &mut Mat, rows: &Range<usize>, cols: &Range<usize>, block: &Mat) {
    debug_assert_eq!(block.shape(), (rows.len(), cols.len()));
    let mut v = m.view_mut((rows.start, cols.start), (rows.len(), cols.len()));
    v += block;
}

/// Dense transcription over the horizon. `t`, `nu` hold the slack and
/// multiplier values per stage (empty for stages without inequality rows);
/// `corrector` is added to the complementarity residual when present.
pub fn assemble_dense(
    lqs: &[StageLq],
    term: &TerminalLq,
    t: &[Vector],
    nu: &[Vector],
    mu: f64,
    rho: f64,
    corrector: Option<&[Vector]>,
) -> DenseKkt {
    let n = lqs.len();
    let mut index = Vec::with_capacity(n);
    let mut off = 0;
    let mut next = |len: usize| {
        let r = off..off + len;
        off += len;
        r
    };
    for lq in lqs {
        let ni = lq.n_ineq();
        index.push(StageBlocks {
            u: next(lq.nu()),
            y: next(lq.ny()),
            lambda_f: next(lq.f0.len()),
            lambda_s: next(lq.s0.len()),
            lambda_c: next(lq.c0.len()),
            nu: next(ni),
            t: next(ni),
        });
    }
    let dim = off;
    let mut a = Mat::zeros(dim, dim);
    let mut b = Vector::zeros(dim);

    for k in 0..n {
        let lq = &lqs[k];
        let ix = &index[k];
        let lam = ix.lambda_f.start..ix.lambda_c.end;
        let prev_y = (k > 0).then(|| index[k - 1].y.clone());
        let h_u = vstack(
            &[&lq.f_u, &Mat::zeros(lq.s0.len(), lq.nu()), &lq.c_u],
            lq.nu(),
        );
        let h_y = vstack(
            &[&lq.f_y, &lq.s_y, &Mat::zeros(lq.c0.len(), lq.ny())],
            lq.ny(),
        );
        let h_x = stacked_h_x(lq);

        // u rows
        put(&mut a, &ix.u, &ix.u, &lq.q_uu);
        put(&mut a, &ix.u, &lam, &h_u.transpose());
        put(&mut a, &ix.u, &ix.nu, &lq.g_u.transpose());
        b.rows_mut(ix.u.start, ix.u.len()).copy_from(&(-&lq.q_u));

        // y rows, plus the x rows of the next stage or the terminal cost
        put(&mut a, &ix.y, &ix.y, &lq.q_yy);
        put(&mut a, &ix.y, &lam, &h_y.transpose());
        put(&mut a, &ix.y, &ix.nu, &lq.g_y.transpose());
        let mut rhs_y = -&lq.q_y;
        if k + 1 < n {
            let nl = &lqs[k + 1];
            let nix = &index[k + 1];
            let nlam = nix.lambda_f.start..nix.lambda_c.end;
            put(&mut a, &ix.y, &ix.y, &nl.q_xx);
            put(&mut a, &ix.y, &nix.u, &nl.q_ux.transpose());
            put(&mut a, &ix.y, &nix.y, &nl.q_yx.transpose());
            put(&mut a, &ix.y, &nlam, &stacked_h_x(nl).transpose());
            put(&mut a, &ix.y, &nix.nu, &nl.g_x.transpose());
            rhs_y -= &nl.q_x;
        } else {
            put(&mut a, &ix.y, &ix.y, &term.hess);
            rhs_y -= &term.grad;
        }
        b.rows_mut(ix.y.start, ix.y.len()).copy_from(&rhs_y);
        if let Some(py) = &prev_y {
            // the x-dependence of this stage's u and y rows
            put(&mut a, &ix.u, py, &lq.q_ux);
            put(&mut a, &ix.y, py, &lq.q_yx);
        }

        // equality rows
        put(&mut a, &lam, &ix.u, &h_u);
        put(&mut a, &lam, &ix.y, &h_y);
        if let Some(py) = &prev_y {
            put(&mut a, &lam, py, &h_x);
        }
        b.rows_mut(lam.start, lam.len())
            .copy_from(&(-stacked_h0(lq)));

        // slacked inequality rows
        let ni = lq.n_ineq();
        if ni > 0 {
            put(&mut a, &ix.nu, &ix.u, &lq.g_u);
            put(&mut a, &ix.nu, &ix.y, &lq.g_y);
            if let Some(py) = &prev_y {
                put(&mut a, &ix.nu, py, &lq.g_x);
            }
            put(&mut a, &ix.nu, &ix.nu, &(-rho * Mat::identity(ni, ni)));
            put(&mut a, &ix.nu, &ix.t, &Mat::identity(ni, ni));
            b.rows_mut(ix.nu.start, ni).copy_from(&(-(&lq.g0 + &t[k])));

            put(&mut a, &ix.t, &ix.nu, &Mat::from_diagonal(&t[k]));
            put(&mut a, &ix.t, &ix.t, &Mat::from_diagonal(&nu[k]));
            let mut r_s = nu[k].component_mul(&t[k]).add_scalar(-mu);
            if let Some(c) = corrector {
                r_s += &c[k];
            }
            b.rows_mut(ix.t.start, ni).copy_from(&(-r_s));
        }
    }
    let nx0 = lqs.first().map_or(term.grad.len(), |l| l.nx());
    DenseKkt {
        matrix: a,
        rhs: b,
        index,
        nx0,
    }
}

#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub sol: Vector,
    /// `‖A·sol − rhs‖∞`.
    pub residual: f64,
    /// Set when the factorization found a numerically zero pivot; the
    /// solution is then the minimum-norm least-squares one.
    pub singular_pivot: Option<usize>,
}

impl DenseSolution {
    pub fn min_norm_fallback(&self) -> bool {
        self.singular_pivot.is_some()
    }
}

/// Solves the dense system with a threshold-pivoted complete LU, falling back
/// to an SVD least-squares solve when a pivot is rejected.
pub fn dense_solve(kkt: &DenseKkt) -> Result<DenseSolution, OracleError> {
    if !is_finite_mat(&kkt.matrix) || !is_finite_vec(&kkt.rhs) {
        return Err(OracleError::NonFinite);
    }
    let n = kkt.dim();
    let tol = f64::EPSILON * n.max(1) as f64 * 10.0;
    let lu = ThresholdLu::new(&kkt.matrix, tol);
    let (sol, singular_pivot) = match lu.solve_vec(&kkt.rhs) {
        Some(x) => (x, None),
        None => {
            let svd = kkt.matrix.clone().svd(true, true);
            let eps = svd.singular_values.max() * tol;
            let x = svd
                .solve(&kkt.rhs, eps)
                .map_err(|_| OracleError::NonFinite)?;
            (x, lu.first_rejected_pivot())
        }
    };
    let residual = inf_norm(&(&kkt.matrix * &sol - &kkt.rhs));
    Ok(DenseSolution {
        sol,
        residual,
        singular_pivot,
    })
}

/// Settings of the reference barrier method.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBarrierSettings {
    pub mu0: f64,
    /// `μ ← μ · mu_factor` once the perturbed residual is below `kappa · μ`.
    pub mu_factor: f64,
    pub kappa: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub tau: f64,
    pub modes: EqualityModes,
}

impl Default for DenseBarrierSettings {
    fn default() -> Self {
        Self {
            mu0: 0.1,
            mu_factor: 0.2,
            kappa: 10.0,
            tol: 1e-8,
            max_iters: 300,
            tau: 0.99,
            modes: EqualityModes::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseBarrierSolution {
    pub iterate: Iterate,
    pub kkt: KktResidual,
    pub iterations: usize,
}

fn dense_step(iter: &Iterate, s: &StepTrajectory, alpha: f64, mu: f64) -> Iterate {
    let mut out = iter.clone();
    for k in 0..iter.u.len() {
        out.x[k + 1] += &s.dx[k + 1] * alpha;
        out.u[k] += &s.du[k] * alpha;
        out.lambda[k].f += &s.dlambda[k].f * alpha;
        out.lambda[k].s += &s.dlambda[k].s * alpha;
        out.lambda[k].c += &s.dlambda[k].c * alpha;
        out.nu[k] += &s.dnu[k] * alpha;
        out.t[k] += &s.dt[k] * alpha;
    }
    out.mu = mu;
    out
}

/// Textbook primal-dual barrier method on the dense system with a monotone
/// barrier schedule and a residual-decrease backtracking rule. Independent of
/// the structured recursion and of the predictor-corrector update.
pub fn dense_barrier_solve(
    problem: &OcpProblem,
    init: Option<Iterate>,
    settings: &DenseBarrierSettings,
) -> Result<DenseBarrierSolution, OracleError> {
    let nvar: usize = (0..problem.horizon())
        .map(|k| {
            let d = problem.dims(k);
            d.nu + d.ny
        })
        .sum();
    if nvar > MAX_DENSE_VARIABLES {
        return Err(OracleError::TooLarge(nvar, MAX_DENSE_VARIABLES));
    }
    let mut iter = match init {
        Some(it) if it.modes == settings.modes => it,
        Some(it) => Iterate::from_trajectory(problem, it.x, it.u, settings.modes),
        None => Iterate::hold_initial_state(problem, settings.modes),
    };
    iter.x[0] = problem.x0.clone();
    let (lqs, _) = evaluate_all(problem, &iter, false)?;
    let g0: Vec<Vector> = lqs.iter().map(|l| l.g0.clone()).collect();
    let st = init_ipm(&g0, settings.mu0, 1.0, 0.0);
    iter.t = st.t;
    iter.nu = st.nu;
    let has_ineq = st.n_ipm > 0;
    let mut mu = if has_ineq { settings.mu0 } else { 0.0 };
    iter.mu = mu;

    let merit = |it: &Iterate, mu: f64| -> Option<(KktResidual, Vec<StageLq>, TerminalLq)> {
        let (l, t) = evaluate_all(problem, it, false).ok()?;
        let r = residual_from_lq(&l, &t, it, Some(mu));
        r.is_finite().then_some((r, l, t))
    };

    for iteration in 0..settings.max_iters {
        let (r_mu, lqs, term) = merit(&iter, mu).ok_or(OracleError::NonFinite)?;
        let true_r = residual_from_lq(&lqs, &term, &iter, None);
        if true_r.total <= settings.tol {
            return Ok(DenseBarrierSolution {
                iterate: iter,
                kkt: true_r,
                iterations: iteration,
            });
        }
        let next_mu = (mu * settings.mu_factor).max(settings.tol / 10.0);
        if has_ineq && r_mu.total <= settings.kappa * mu && next_mu < mu {
            mu = next_mu;
            continue;
        }
        let kkt = assemble_dense(&lqs, &term, &iter.t, &iter.nu, mu, 0.0, None);
        let sol = dense_solve(&kkt)?;
        let s = kkt.unpack(&sol.sol);
        let mut alpha = 1.0_f64;
        for k in 0..s.dt.len() {
            alpha = alpha
                .min(fraction_to_boundary(&iter.t[k], &s.dt[k], settings.tau))
                .min(fraction_to_boundary(&iter.nu[k], &s.dnu[k], settings.tau));
        }
        let mut accepted = None;
        for _ in 0..40 {
            let cand = dense_step(&iter, &s, alpha, mu);
            if let Some((r, _, _)) = merit(&cand, mu) {
                if r.total <= (1.0 - 1e-4 * alpha) * r_mu.total {
                    accepted = Some(cand);
                    break;
                }
            }
            alpha *= 0.5;
        }
        iter = accepted.unwrap_or_else(|| dense_step(&iter, &s, alpha, mu));
    }
    let (_, lqs, term) = merit(&iter, mu).ok_or(OracleError::NonFinite)?;
    let r = residual_from_lq(&lqs, &term, &iter, None);
    if r.total <= settings.tol {
        Ok(DenseBarrierSolution {
            iterate: iter,
            kkt: r,
            iterations: settings.max_iters,
        })
    } else {
        Err(OracleError::NotConverged {
            residual: r.total,
            iterations: settings.max_iters,
        })
    }
}
