//! SQP outer loop: predictor-corrector Newton steps, backtracking line search,
//! escape on line-search failure, and iterative refinement near convergence.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::barrier::{
    corrector_safeguard, gradient_increments, horizon_step_bounds, init_ipm, modify_lq, mpc_update,
    recover_ipm_trajectory, trial_complementarity,
};
use crate::error::StepError;
use crate::linalg::Vector;
use crate::model::{
    evaluate_all, residual_from_lq, EqMode, EqualityModes, Iterate, KktResidual, OcpProblem,
    StageLq, TerminalLq,
};
use crate::riccati::{
    factorize, presolve_all, refine, solve_lq, Factorization, StepTrajectory, ZeroOrderRhs,
};

/// Barrier value used when the escape mechanism resets the interior-point state.
pub const ESCAPE_MU: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub abs_tol: f64,
    pub max_iters: usize,
    /// Line-search trial budget.
    pub n_ls: usize,
    /// Step cap applied after an escape.
    pub alpha_min: f64,
    pub tau: f64,
    pub rho: f64,
    pub mu0: f64,
    pub t_min: f64,
    /// Handling of `c(x, u) = 0`.
    pub eq_mode_state_input: EqMode,
    /// Handling of `s(x, y) = 0`, including terminal equalities.
    pub eq_mode_state_only: EqMode,
    /// Total residual below which refinement may trigger; `None` means
    /// `100 · abs_tol`.
    pub refine_threshold: Option<f64>,
    pub refine_max: usize,
    /// Linear residual at which refinement stops.
    pub refine_tol: f64,
    /// Relative pivot threshold for the nullspace factorization; `None`
    /// selects machine epsilon times the matrix dimension.
    pub pivot_tol: Option<f64>,
    /// Worker threads for the per-stage phases; 1 keeps the solve serial.
    pub threads: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-3,
            max_iters: 100,
            n_ls: 10,
            alpha_min: 0.01,
            tau: 0.995,
            rho: 1e-8,
            mu0: 1.0,
            t_min: crate::barrier::DEFAULT_T_MIN,
            eq_mode_state_input: EqMode::Projection,
            eq_mode_state_only: EqMode::Projection,
            refine_threshold: None,
            refine_max: 2,
            refine_tol: 1e-10,
            pivot_tol: None,
            threads: 1,
        }
    }
}

impl SolverSettings {
    pub fn modes(&self) -> EqualityModes {
        EqualityModes {
            state_input: self.eq_mode_state_input,
            state_only: self.eq_mode_state_only,
        }
    }

    pub fn with_eq_mode(mut self, mode: EqMode) -> Self {
        self.eq_mode_state_input = mode;
        self.eq_mode_state_only = mode;
        self
    }

    pub fn mu_floor(&self) -> f64 {
        (self.abs_tol / 100.0).min(1e-12)
    }

    pub fn refine_level(&self) -> f64 {
        self.refine_threshold.unwrap_or(100.0 * self.abs_tol)
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = self.abs_tol > 0.0
            && self.rho > 0.0
            && self.mu0 > 0.0
            && self.t_min > 0.0
            && self.refine_tol > 0.0
            && self.alpha_min > 0.0
            && self.alpha_min <= 1.0
            && self.tau > 0.0
            && self.tau < 1.0
            && self.n_ls >= 1
            && self.threads >= 1
            && self.refine_threshold.is_none_or(|r| r > 0.0)
            && self.pivot_tol.is_none_or(|p| p > 0.0);
        if ok {
            Ok(())
        } else {
            Err(format!("invalid solver settings: {self:?}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    StepFailure,
    NonFinite,
}

/// One row of the iteration trace. The residual is measured at the start of
/// the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub kkt: KktResidual,
    /// Barrier value of the iterate at the start of the iteration.
    pub mu_start: f64,
    /// Barrier value used for the step.
    pub mu: f64,
    pub sigma: Option<f64>,
    pub alpha: f64,
    pub alpha_nu: f64,
    pub ls_trials: usize,
    pub escape: bool,
    /// The step was taken under the post-escape cap without a progress test.
    pub forced: bool,
    pub corrector_accepted: Option<bool>,
    pub refine_passes: usize,
    pub qp_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Number of steps taken.
    pub iterations: usize,
    pub final_kkt: KktResidual,
    pub trace: Vec<IterationRecord>,
    /// Linear solves: predictor, corrector candidates and refinement passes.
    pub qp_count: usize,
    pub escapes: usize,
    pub refines: usize,
    pub wall_ms: f64,
    pub failure: Option<String>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Converged if the total residual is within tolerance, out of budget if
/// `iteration` has reached `max_iters`, otherwise keep going.
pub fn check_termination(
    residual: &KktResidual,
    iteration: usize,
    settings: &SolverSettings,
) -> Option<SolveStatus> {
    if !residual.is_finite() {
        Some(SolveStatus::NonFinite)
    } else if residual.total <= settings.abs_tol {
        Some(SolveStatus::Converged)
    } else if iteration >= settings.max_iters {
        Some(SolveStatus::MaxIters)
    } else {
        None
    }
}

/// Result of one predictor-corrector pass.
#[derive(Debug, Clone)]
pub struct NewtonStep {
    pub step: StepTrajectory,
    pub mu: f64,
    pub sigma: Option<f64>,
    pub alpha_max: f64,
    pub alpha_nu_max: f64,
    pub corrector_accepted: Option<bool>,
    pub qp_solves: usize,
    pub refine_passes: usize,
    /// Complementarity of the predictor-with-new-μ and corrector candidates
    /// at their own step bounds.
    pub trial_plain: Option<f64>,
    pub trial_corrector: Option<f64>,
}

fn shifted_rhs(
    lqs: &[StageLq],
    base_rhs: &ZeroOrderRhs,
    iter: &Iterate,
    mu: f64,
    rho: f64,
    corrector: Option<&[Vector]>,
) -> Result<ZeroOrderRhs, StepError> {
    let n = lqs.len();
    let (mut qx, mut qu, mut qy) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for k in 0..n {
        let (dx, du, dy) = gradient_increments(
            &lqs[k],
            &iter.t[k],
            &iter.nu[k],
            mu,
            rho,
            corrector.map(|c| &c[k]),
        )
        .map_err(|e| e.at_stage(k))?;
        qx.push(&lqs[k].q_x + dx);
        qu.push(&lqs[k].q_u + du);
        qy.push(&lqs[k].q_y + dy);
    }
    Ok(base_rhs.with_gradients(qx, qu, qy))
}

fn step_bounds(iter: &Iterate, step: &StepTrajectory, tau: f64) -> (f64, f64) {
    horizon_step_bounds(&iter.t, &step.dt, &iter.nu, &step.dnu, tau)
}

/// Structured solve of the interior-point Newton system at fixed `(t, ν, μ)`:
/// LQ modification, recursion, rollout and slack/multiplier recovery.
pub fn structured_step(
    lqs: &[StageLq],
    term: &TerminalLq,
    t: &[Vector],
    nu: &[Vector],
    mu: f64,
    rho: f64,
    corrector: Option<&[Vector]>,
    pivot_tol: Option<f64>,
) -> Result<StepTrajectory, StepError> {
    let mut modified = Vec::with_capacity(lqs.len());
    for (k, lq) in lqs.iter().enumerate() {
        let m = modify_lq(lq, &t[k], &nu[k], mu, rho, corrector.map(|c| &c[k]))
            .map_err(|e| e.at_stage(k))?;
        modified.push(m.apply(lq));
    }
    let rhs = ZeroOrderRhs::from_lqs(&modified, &term.grad);
    let fact = factorize(presolve_all(modified, pivot_tol, false)?, &term.hess)?;
    let mut step = solve_lq(&fact, &rhs, false)?;
    recover_ipm_trajectory(lqs, t, nu, &mut step, mu, rho, corrector);
    Ok(step)
}

/// Refinement trigger: stationarity dominates the other residual components
/// and the iterate is already near convergence.
pub fn refinement_wanted(kkt: &KktResidual, settings: &SolverSettings) -> bool {
    let others = kkt
        .eq_violation
        .max(kkt.ineq_violation)
        .max(kkt.complementarity);
    settings.refine_max > 0
        && kkt.stationarity > 10.0 * others
        && kkt.total <= settings.refine_level()
}

fn maybe_refine(
    fact: &Factorization,
    rhs: &ZeroOrderRhs,
    step: StepTrajectory,
    kkt: &KktResidual,
    settings: &SolverSettings,
) -> Result<(StepTrajectory, usize), StepError> {
    if !refinement_wanted(kkt, settings) {
        return Ok((step, 0));
    }
    let (s, info) = refine(
        fact,
        rhs,
        step,
        settings.refine_max,
        settings.refine_tol,
        settings.threads > 1,
    )?;
    Ok((s, info.passes))
}

/// One Newton step at `iter`. Without inequality rows this is a single
/// recursion; otherwise predictor, barrier update, and the corrector and
/// plain candidates reusing the predictor's factorization.
pub fn newton_step(
    lqs: &[StageLq],
    term: &TerminalLq,
    iter: &Iterate,
    kkt: &KktResidual,
    settings: &SolverSettings,
) -> Result<NewtonStep, StepError> {
    let parallel = settings.threads > 1;
    let n_ipm: usize = lqs.iter().map(|l| l.n_ineq()).sum();
    let base_rhs = ZeroOrderRhs::from_lqs(lqs, &term.grad);

    if n_ipm == 0 {
        let pre = presolve_all(lqs.to_vec(), settings.pivot_tol, parallel)?;
        let fact = factorize(pre, &term.hess)?;
        let step = solve_lq(&fact, &base_rhs, parallel)?;
        let (step, passes) = maybe_refine(&fact, &base_rhs, step, kkt, settings)?;
        return Ok(NewtonStep {
            step,
            mu: 0.0,
            sigma: None,
            alpha_max: 1.0,
            alpha_nu_max: 1.0,
            corrector_accepted: None,
            qp_solves: 1 + passes,
            refine_passes: passes,
            trial_plain: None,
            trial_corrector: None,
        });
    }

    // predictor with μ = 0
    let mut modified = Vec::with_capacity(lqs.len());
    for (k, lq) in lqs.iter().enumerate() {
        let m = modify_lq(lq, &iter.t[k], &iter.nu[k], 0.0, settings.rho, None)
            .map_err(|e| e.at_stage(k))?;
        modified.push(m.apply(lq));
    }
    let aff_rhs = ZeroOrderRhs::from_lqs(&modified, &term.grad);
    let pre = presolve_all(modified, settings.pivot_tol, parallel)?;
    let fact = factorize(pre, &term.hess)?;
    let mut aff = solve_lq(&fact, &aff_rhs, parallel)?;
    recover_ipm_trajectory(lqs, &iter.t, &iter.nu, &mut aff, 0.0, settings.rho, None);
    let (a_aff, anu_aff) = step_bounds(iter, &aff, settings.tau);

    let upd =
        mpc_update(&iter.nu, &iter.t, &aff.dnu, &aff.dt, a_aff, anu_aff, n_ipm).expect("n_ipm > 0");
    let mu = upd.mu.max(settings.mu_floor());

    let corr: Vec<Vector> = aff
        .dnu
        .iter()
        .zip(&aff.dt)
        .map(|(a, b)| a.component_mul(b))
        .collect();

    let plain_rhs = shifted_rhs(lqs, &base_rhs, iter, mu, settings.rho, None)?;
    let mut plain = solve_lq(&fact, &plain_rhs, parallel)?;
    recover_ipm_trajectory(lqs, &iter.t, &iter.nu, &mut plain, mu, settings.rho, None);
    let (ap, anp) = step_bounds(iter, &plain, settings.tau);
    let tc_plain = trial_complementarity(&iter.nu, &iter.t, &plain.dnu, &plain.dt, ap, anp);

    let corr_rhs = shifted_rhs(lqs, &base_rhs, iter, mu, settings.rho, Some(&corr))?;
    let mut cstep = solve_lq(&fact, &corr_rhs, parallel)?;
    recover_ipm_trajectory(
        lqs,
        &iter.t,
        &iter.nu,
        &mut cstep,
        mu,
        settings.rho,
        Some(&corr),
    );
    let (ac, anc) = step_bounds(iter, &cstep, settings.tau);
    let tc_corr = trial_complementarity(&iter.nu, &iter.t, &cstep.dnu, &cstep.dt, ac, anc);

    let accept = corrector_safeguard(tc_corr, tc_plain);
    let (chosen, rhs, corrector) = if accept {
        (cstep, corr_rhs, Some(corr.as_slice()))
    } else {
        (plain, plain_rhs, None)
    };
    let (mut step, passes) = maybe_refine(&fact, &rhs, chosen, kkt, settings)?;
    if passes > 0 {
        recover_ipm_trajectory(
            lqs,
            &iter.t,
            &iter.nu,
            &mut step,
            mu,
            settings.rho,
            corrector,
        );
    }
    let (alpha_max, alpha_nu_max) = step_bounds(iter, &step, settings.tau);
    Ok(NewtonStep {
        step,
        mu,
        sigma: Some(upd.sigma),
        alpha_max,
        alpha_nu_max,
        corrector_accepted: Some(accept),
        qp_solves: 3 + passes,
        refine_passes: passes,
        trial_plain: Some(tc_plain),
        trial_corrector: Some(tc_corr),
    })
}

/// `iter + (α, α_ν)·step` with the barrier set to `mu`.
pub fn apply_step(
    iter: &Iterate,
    step: &StepTrajectory,
    alpha: f64,
    alpha_nu: f64,
    mu: f64,
) -> Iterate {
    let mut out = iter.clone();
    for k in 1..out.x.len() {
        out.x[k] += &step.dx[k] * alpha;
    }
    for k in 0..out.u.len() {
        out.u[k] += &step.du[k] * alpha;
        let l = &mut out.lambda[k];
        l.f += &step.dlambda[k].f * alpha;
        l.s += &step.dlambda[k].s * alpha;
        l.c += &step.dlambda[k].c * alpha;
    }
    for k in 0..step.dnu.len() {
        out.nu[k] += &step.dnu[k] * alpha_nu;
        out.t[k] += &step.dt[k] * alpha;
    }
    out.mu = mu;
    out
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub alpha_nu: f64,
    pub accepted: bool,
    pub trials: usize,
    pub iterate: Option<Iterate>,
}

/// Trial step sizes `α_max − i·α_max/n_ls`, `i = 0..n_ls`.
pub fn trial_alphas(alpha_max: f64, n_ls: usize) -> Vec<f64> {
    let d = alpha_max / n_ls as f64;
    (0..n_ls).map(|i| alpha_max - i as f64 * d).collect()
}

/// `true` if either residual family strictly decreases.
pub fn makes_progress(trial: &KktResidual, base: &KktResidual) -> bool {
    trial.primal() < base.primal() || trial.dual() < base.dual()
}

/// Backtracking over [`trial_alphas`]; the inequality dual step keeps
/// `α_ν_max`. Progress is measured with the complementarity perturbed by `mu`.
pub fn line_search(
    problem: &OcpProblem,
    iter: &Iterate,
    step: &StepTrajectory,
    alpha_max: f64,
    alpha_nu_max: f64,
    mu: f64,
    base: &KktResidual,
    settings: &SolverSettings,
) -> LineSearchOutcome {
    let mut trials = 0;
    for alpha in trial_alphas(alpha_max, settings.n_ls) {
        trials += 1;
        let cand = apply_step(iter, step, alpha, alpha_nu_max, mu);
        let Ok((lqs, term)) = evaluate_all(problem, &cand, settings.threads > 1) else {
            continue;
        };
        let r = residual_from_lq(&lqs, &term, &cand, Some(mu));
        if r.is_finite() && makes_progress(&r, base) {
            return LineSearchOutcome {
                alpha,
                alpha_nu: alpha_nu_max,
                accepted: true,
                trials,
                iterate: Some(cand),
            };
        }
    }
    LineSearchOutcome {
        alpha: 0.0,
        alpha_nu: 0.0,
        accepted: false,
        trials,
        iterate: None,
    }
}

/// Resets the interior-point state at the current constraint values:
/// `μ = 1` and slacks/multipliers re-initialized.
pub fn escape(iter: &mut Iterate, lqs: &[StageLq], settings: &SolverSettings) {
    let g0: Vec<Vector> = lqs.iter().map(|l| l.g0.clone()).collect();
    let s = init_ipm(&g0, ESCAPE_MU, settings.t_min, settings.rho);
    iter.t = s.t;
    iter.nu = s.nu;
    iter.mu = s.mu;
}

/// Rebuilds `init` for the settings' equality modes and pins `x₀`.
fn prepare_initial(problem: &OcpProblem, init: Iterate, modes: EqualityModes) -> Iterate {
    let mut it = if init.modes == modes {
        init
    } else {
        Iterate::from_trajectory(problem, init.x, init.u, modes)
    };
    it.x[0] = problem.x0.clone();
    it
}

fn install<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    } else {
        f()
    }
}

/// Solves from the default initialization (every node at `x₀`, zero inputs
/// and multipliers).
pub fn solve_default(problem: &OcpProblem, settings: &SolverSettings) -> (Iterate, SolveReport) {
    let init = Iterate::hold_initial_state(problem, settings.modes());
    solve(problem, init, settings)
}

/// Runs SQP iterations until the KKT residual is within `abs_tol` or the
/// budget runs out. Numerical breakdowns end the solve with a status; the
/// best iterate seen is returned whenever the solve did not converge.
pub fn solve(
    problem: &OcpProblem,
    init: Iterate,
    settings: &SolverSettings,
) -> (Iterate, SolveReport) {
    install(settings.threads, || solve_inner(problem, init, settings))
}

fn solve_inner(
    problem: &OcpProblem,
    init: Iterate,
    settings: &SolverSettings,
) -> (Iterate, SolveReport) {
    let start = Instant::now();
    let parallel = settings.threads > 1;
    let mut iter = prepare_initial(problem, init, settings.modes());
    let mut report = SolveReport {
        status: SolveStatus::MaxIters,
        iterations: 0,
        final_kkt: KktResidual::new(f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        trace: Vec::new(),
        qp_count: 0,
        escapes: 0,
        refines: 0,
        wall_ms: 0.0,
        failure: None,
    };
    let finish = |mut report: SolveReport, it: Iterate| {
        report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        (it, report)
    };
    if let Err(e) = settings.validate() {
        report.status = SolveStatus::StepFailure;
        report.failure = Some(e);
        return finish(report, iter);
    }

    let n_ipm = problem.n_ipm(&iter.modes);
    match evaluate_all(problem, &iter, parallel) {
        Ok((lqs, _)) => {
            if n_ipm > 0 {
                let g0: Vec<Vector> = lqs.iter().map(|l| l.g0.clone()).collect();
                let s = init_ipm(&g0, settings.mu0, settings.t_min, settings.rho);
                iter.t = s.t;
                iter.nu = s.nu;
                iter.mu = s.mu;
            } else {
                iter.mu = 0.0;
            }
        }
        Err(e) => {
            report.status = SolveStatus::NonFinite;
            report.failure = Some(e.to_string());
            return finish(report, iter);
        }
    }

    let mut best: Option<(Iterate, KktResidual)> = None;
    let mut capped = false;
    let mut it_count = 0;
    loop {
        let (lqs, term) = match evaluate_all(problem, &iter, parallel) {
            Ok(v) => v,
            Err(e) => {
                report.status = SolveStatus::NonFinite;
                report.failure = Some(e.to_string());
                break;
            }
        };
        let kkt = residual_from_lq(&lqs, &term, &iter, None);
        if kkt.is_finite() && best.as_ref().is_none_or(|(_, b)| kkt.total < b.total) {
            best = Some((iter.clone(), kkt));
        }
        if let Some(status) = check_termination(&kkt, it_count, settings) {
            report.status = status;
            if status == SolveStatus::Converged {
                report.final_kkt = kkt;
                best = None;
            } else if status == SolveStatus::NonFinite {
                report.failure = Some("non-finite KKT residual".into());
            }
            break;
        }

        let ns = match newton_step(&lqs, &term, &iter, &kkt, settings) {
            Ok(s) => s,
            Err(e) => {
                report.status = match e {
                    StepError::NonFinite { .. } => SolveStatus::NonFinite,
                    _ => SolveStatus::StepFailure,
                };
                report.failure = Some(e.to_string());
                break;
            }
        };
        report.qp_count += ns.qp_solves;
        report.refines += ns.refine_passes;

        let mut rec = IterationRecord {
            iter: it_count,
            kkt,
            mu_start: iter.mu,
            mu: ns.mu,
            sigma: ns.sigma,
            alpha: 0.0,
            alpha_nu: 0.0,
            ls_trials: 0,
            escape: false,
            forced: false,
            corrector_accepted: ns.corrector_accepted,
            refine_passes: ns.refine_passes,
            qp_solves: ns.qp_solves,
        };

        if capped {
            let alpha = ns.alpha_max.min(settings.alpha_min);
            let alpha_nu = ns.alpha_nu_max.min(settings.alpha_min);
            iter = apply_step(&iter, &ns.step, alpha, alpha_nu, ns.mu);
            rec.alpha = alpha;
            rec.alpha_nu = alpha_nu;
            rec.forced = true;
            capped = false;
        } else {
            let base = residual_from_lq(&lqs, &term, &iter, Some(ns.mu));
            let ls = line_search(
                problem,
                &iter,
                &ns.step,
                ns.alpha_max,
                ns.alpha_nu_max,
                ns.mu,
                &base,
                settings,
            );
            rec.ls_trials = ls.trials;
            if let Some(next) = ls.iterate {
                rec.alpha = ls.alpha;
                rec.alpha_nu = ls.alpha_nu;
                iter = next;
            } else {
                escape(&mut iter, &lqs, settings);
                rec.escape = true;
                report.escapes += 1;
                capped = true;
            }
        }
        report.trace.push(rec);
        it_count += 1;
    }
    report.iterations = it_count;

    let out = match best {
        Some((b, k)) if report.status != SolveStatus::Converged => {
            report.final_kkt = k;
            b
        }
        _ => iter,
    };
    finish(report, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let s = SolverSettings::default();
        assert_eq!(s.abs_tol, 1e-3);
        assert_eq!(s.max_iters, 100);
        assert_eq!(s.n_ls, 10);
        assert_eq!(s.alpha_min, 0.01);
        assert_eq!(s.tau, 0.995);
        assert_eq!(s.rho, 1e-8);
        assert_eq!(s.refine_max, 2);
        assert_eq!(s.refine_level(), 0.1);
        assert_eq!(s.mu_floor(), 1e-12);
        assert!(s.validate().is_ok());
        assert!(SolverSettings { tau: 1.0, ..s }.validate().is_err());
    }

    #[test]
    fn termination_cases() {
        let s = SolverSettings::default();
        let r = |t: f64| KktResidual::new(t, 0.0, 0.0, 0.0);
        assert_eq!(
            check_termination(&r(9e-4), 3, &s),
            Some(SolveStatus::Converged)
        );
        assert_eq!(check_termination(&r(1.1e-3), 3, &s), None);
        assert_eq!(
            check_termination(&r(1.1e-3), 100, &s),
            Some(SolveStatus::MaxIters)
        );
        assert_eq!(
            check_termination(&r(f64::NAN), 3, &s),
            Some(SolveStatus::NonFinite)
        );
    }

    #[test]
    fn trial_sequence() {
        let a = trial_alphas(0.8, 10);
        assert_eq!(a.len(), 10);
        assert_eq!(a[0], 0.8);
        assert!((a[1] - 0.72).abs() < 1e-15);
        assert!((a[2] - 0.64).abs() < 1e-15);
        assert!((a[9] - 0.08).abs() < 1e-15);
    }

    #[test]
    fn progress_needs_strict_decrease_in_one_family() {
        let base = KktResidual::new(1.0, 1.0, 0.0, 0.5);
        assert!(makes_progress(&KktResidual::new(2.0, 0.5, 0.0, 0.0), &base));
        assert!(makes_progress(&KktResidual::new(0.9, 1.5, 0.0, 0.0), &base));
        assert!(!makes_progress(
            &KktResidual::new(1.0, 1.0, 0.0, 0.5),
            &base
        ));
    }

    #[test]
    fn refinement_trigger() {
        let s = SolverSettings::default();
        assert!(refinement_wanted(
            &KktResidual::new(0.05, 1e-4, 0.0, 0.0),
            &s
        ));
        assert!(!refinement_wanted(
            &KktResidual::new(0.5, 1e-4, 0.0, 0.0),
            &s
        ));
        assert!(!refinement_wanted(
            &KktResidual::new(0.05, 0.01, 0.0, 0.0),
            &s
        ));
    }

    #[test]
    fn settings_toml_roundtrip() {
        let s: SolverSettings =
            toml::from_str("abs_tol = 1e-4\neq_mode_state_only = \"ipm\"").unwrap();
        assert_eq!(s.abs_tol, 1e-4);
        assert_eq!(s.eq_mode_state_only, EqMode::Ipm);
        assert_eq!(s.max_iters, 100);
        assert!(toml::from_str::<SolverSettings>("bogus = 1").is_err());
    }
}
