//! Oracle-equivalence suites: structured steps against the dense transcription
//! on seeded random LQ instances.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::linalg::{inf_norm, mat_inf_norm, Vector};
use crate::model::{evaluate_all, EqMode, EqualityModes, Iterate, OcpProblem};
use crate::oracle::{assemble_dense, dense_solve};
use crate::problems::instance_seed;
use crate::problems::lq::{lq_random, LqShape};
use crate::riccati::{factorize, presolve_all, solve_lq, StepTrajectory, ZeroOrderRhs};
use crate::sqp::structured_step;

/// Tolerance on the relative L∞ distance between the two steps.
pub const EQUIVALENCE_TOL: f64 = 1e-7;
/// Tolerance on the dense solve's own relative residual.
pub const DENSE_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub suite: &'static str,
    pub instances: usize,
    /// Largest `‖structured − dense‖∞ / ‖dense‖∞` over all instances.
    pub max_rel_diff: f64,
    /// Largest `‖A·sol − rhs‖∞ / (‖A‖∞‖sol‖∞ + ‖rhs‖∞)`.
    pub max_dense_residual: f64,
    /// Instances where either solve returned an error.
    pub failures: usize,
    pub elapsed_s: f64,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
            && self.max_rel_diff <= EQUIVALENCE_TOL
            && self.max_dense_residual <= DENSE_RESIDUAL_TOL
    }
}

/// Concatenates every component of a step, in a fixed order.
pub fn flatten_step(s: &StepTrajectory) -> Vector {
    let mut out: Vec<f64> = Vec::new();
    for k in 0..s.du.len() {
        out.extend(s.dx[k + 1].iter());
        out.extend(s.du[k].iter());
        out.extend(s.dlambda[k].f.iter());
        out.extend(s.dlambda[k].s.iter());
        out.extend(s.dlambda[k].c.iter());
        if let (Some(n), Some(t)) = (s.dnu.get(k), s.dt.get(k)) {
            out.extend(n.iter());
            out.extend(t.iter());
        }
    }
    Vector::from_vec(out)
}

pub fn rel_step_diff(a: &StepTrajectory, reference: &StepTrajectory) -> f64 {
    let (a, b) = (flatten_step(a), flatten_step(reference));
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let scale = inf_norm(&b);
    let d = inf_norm(&(a - &b));
    if scale > 0.0 {
        d / scale
    } else {
        d
    }
}

/// Random primal-dual point with strictly positive slacks and multipliers.
pub fn random_iterate(problem: &OcpProblem, modes: EqualityModes, rng: &mut impl Rng) -> Iterate {
    let mut it = Iterate::hold_initial_state(problem, modes);
    let mut fill =
        |v: &mut Vector, lo: f64, hi: f64| v.iter_mut().for_each(|e| *e = rng.random_range(lo..hi));
    for k in 0..problem.horizon() {
        fill(&mut it.x[k + 1], -1.0, 1.0);
        fill(&mut it.u[k], -1.0, 1.0);
        fill(&mut it.lambda[k].f, -1.0, 1.0);
        fill(&mut it.lambda[k].s, -1.0, 1.0);
        fill(&mut it.lambda[k].c, -1.0, 1.0);
        fill(&mut it.nu[k], 0.1, 2.0);
        fill(&mut it.t[k], 0.1, 2.0);
    }
    it
}

fn random_modes(rng: &mut impl Rng) -> EqualityModes {
    let pick = |b: bool| if b { EqMode::Ipm } else { EqMode::Projection };
    EqualityModes {
        state_input: pick(rng.random_bool(0.5)),
        state_only: pick(rng.random_bool(0.5)),
    }
}

struct Comparison {
    rel_diff: f64,
    dense_residual: f64,
}

fn compare_equality(seed: u64) -> Option<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = LqShape::random(&mut rng, false);
    let problem = lq_random(&shape, rng.random());
    let iter = random_iterate(&problem, EqualityModes::default(), &mut rng);
    let (lqs, term) = evaluate_all(&problem, &iter, false).ok()?;

    let dense = assemble_dense(&lqs, &term, &iter.t, &iter.nu, 0.0, 0.0, None);
    let sol = dense_solve(&dense).ok()?;
    let reference = dense.unpack(&sol.sol);

    let rhs = ZeroOrderRhs::from_lqs(&lqs, &term.grad);
    let fact = factorize(presolve_all(lqs, None, false).ok()?, &term.hess).ok()?;
    let step = solve_lq(&fact, &rhs, false).ok()?;
    Some(Comparison {
        rel_diff: rel_step_diff(&step, &reference),
        dense_residual: dense_rel_residual(&dense.matrix, &sol.sol, &dense.rhs),
    })
}

fn compare_ipm(seed: u64, rho: f64) -> Option<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = LqShape::random(&mut rng, true);
    if shape.npsi + shape.nphi == 0 {
        shape.npsi = 1;
    }
    let problem = lq_random(&shape, rng.random());
    let modes = random_modes(&mut rng);
    let iter = random_iterate(&problem, modes, &mut rng);
    let mu = rng.random_range(1e-3..1.0);
    let (lqs, term) = evaluate_all(&problem, &iter, false).ok()?;
    let corrector: Option<Vec<Vector>> = rng.random_bool(0.5).then(|| {
        iter.t
            .iter()
            .map(|t| t.map(|_| rng.random_range(-0.5..0.5)))
            .collect()
    });

    let dense = assemble_dense(
        &lqs,
        &term,
        &iter.t,
        &iter.nu,
        mu,
        rho,
        corrector.as_deref(),
    );
    let sol = dense_solve(&dense).ok()?;
    let reference = dense.unpack(&sol.sol);
    let step = structured_step(
        &lqs,
        &term,
        &iter.t,
        &iter.nu,
        mu,
        rho,
        corrector.as_deref(),
        None,
    )
    .ok()?;
    Some(Comparison {
        rel_diff: rel_step_diff(&step, &reference),
        dense_residual: dense_rel_residual(&dense.matrix, &sol.sol, &dense.rhs),
    })
}

fn dense_rel_residual(a: &crate::linalg::Mat, x: &Vector, b: &Vector) -> f64 {
    let r = inf_norm(&(a * x - b));
    let scale = mat_inf_norm(a) * inf_norm(x) + inf_norm(b);
    if scale > 0.0 {
        r / scale
    } else {
        r
    }
}

fn run_suite(
    suite: &'static str,
    count: usize,
    seed: u64,
    f: impl Fn(u64) -> Option<Comparison>,
) -> EquivalenceReport {
    let start = Instant::now();
    let mut rep = EquivalenceReport {
        suite,
        instances: count,
        max_rel_diff: 0.0,
        max_dense_residual: 0.0,
        failures: 0,
        elapsed_s: 0.0,
    };
    for i in 0..count {
        match f(instance_seed(seed, i)) {
            Some(c) => {
                rep.max_rel_diff = rep.max_rel_diff.max(c.rel_diff);
                rep.max_dense_residual = rep.max_dense_residual.max(c.dense_residual);
                if !(c.rel_diff.is_finite() && c.dense_residual.is_finite()) {
                    rep.failures += 1;
                }
            }
            None => rep.failures += 1,
        }
    }
    rep.elapsed_s = start.elapsed().as_secs_f64();
    rep
}

/// Equality-only instances: Riccati step against the dense solve.
pub fn equality_equivalence(count: usize, seed: u64) -> EquivalenceReport {
    run_suite("equality", count, seed, compare_equality)
}

/// Instances with inequalities and random equality modes: modified LQ step
/// plus slack/multiplier recovery against the dense system with explicit
/// `δν, δt`.
pub fn ipm_equivalence(count: usize, seed: u64, rho: f64) -> EquivalenceReport {
    run_suite("ipm", count, seed, |s| compare_ipm(s, rho))
}
