use trajsqp::barrier::init_ipm;
use trajsqp::model::{evaluate_all, residual_from_lq};
use trajsqp::problems::lq::{lq_random, LqShape};
use trajsqp::problems::{circle_stall, instance_seed};
use trajsqp::sqp::{line_search, newton_step};
use trajsqp::{
    problem_library, solve, solve_default, EqMode, Iterate, ProblemParams, SolveStatus,
    SolverSettings,
};

fn library(name: &str, seed: u64) -> trajsqp::OcpProblem {
    problem_library(
        name,
        &ProblemParams {
            seed,
            ..ProblemParams::default()
        },
    )
    .unwrap()
}

#[test]
fn accepted_steps_strictly_decrease_one_residual_family() {
    let settings = SolverSettings::default();
    for (name, seed) in [
        ("masspoint_obstacle", 3),
        ("cartpole_swingup", 4),
        ("unicycle_reach", 5),
    ] {
        let problem = library(name, seed);
        let mut iter = Iterate::hold_initial_state(&problem, settings.modes());
        let (lqs, _) = evaluate_all(&problem, &iter, false).unwrap();
        if problem.n_ipm(&iter.modes) > 0 {
            let g0: Vec<_> = lqs.iter().map(|l| l.g0.clone()).collect();
            let s = init_ipm(&g0, settings.mu0, settings.t_min, settings.rho);
            iter.t = s.t;
            iter.nu = s.nu;
            iter.mu = s.mu;
        }
        let mut accepted = 0;
        for _ in 0..15 {
            let (lqs, term) = evaluate_all(&problem, &iter, false).unwrap();
            let kkt = residual_from_lq(&lqs, &term, &iter, None);
            let ns = newton_step(&lqs, &term, &iter, &kkt, &settings).unwrap();
            let base = residual_from_lq(&lqs, &term, &iter, Some(ns.mu));
            let ls = line_search(
                &problem,
                &iter,
                &ns.step,
                ns.alpha_max,
                ns.alpha_nu_max,
                ns.mu,
                &base,
                &settings,
            );
            let Some(next) = ls.iterate else { break };
            let (l2, t2) = evaluate_all(&problem, &next, false).unwrap();
            let after = residual_from_lq(&l2, &t2, &next, Some(ns.mu));
            let primal = after.eq_violation.max(after.ineq_violation)
                < base.eq_violation.max(base.ineq_violation);
            let dual = after.stationarity.max(after.complementarity)
                < base.stationarity.max(base.complementarity);
            assert!(primal || dual, "{name}: accepted step without progress");
            assert!(ls.alpha <= ns.alpha_max && ls.alpha_nu == ns.alpha_nu_max);
            assert!(
                next.t.iter().flatten().all(|v| *v > 0.0)
                    && next.nu.iter().flatten().all(|v| *v > 0.0)
            );
            iter = next;
            accepted += 1;
        }
        assert!(accepted > 0, "{name}: no step accepted");
    }
}

#[test]
fn equality_modes_reach_the_same_lq_solution() {
    let shape = LqShape {
        horizon: 8,
        nx: 3,
        nu: 3,
        nc: 1,
        ns: 1,
        npsi: 2,
        nphi: 1,
        implicit: true,
    };
    let problem = lq_random(&shape, 31);
    let base = SolverSettings {
        abs_tol: 1e-8,
        ..SolverSettings::default()
    };
    let (a, ra) = solve_default(&problem, &base.clone().with_eq_mode(EqMode::Projection));
    let (b, rb) = solve_default(&problem, &base.with_eq_mode(EqMode::Ipm));
    assert_eq!(ra.status, SolveStatus::Converged);
    assert_eq!(rb.status, SolveStatus::Converged);
    for k in 0..problem.horizon() {
        assert!((&a.u[k] - &b.u[k]).amax() < 1e-5, "stage {k}");
        assert!((&a.x[k + 1] - &b.x[k + 1]).amax() < 1e-5, "stage {k}");
    }
}

#[test]
fn qp_count_matches_trace() {
    let settings = SolverSettings::default();
    let (_, rep) = solve_default(&library("masspoint_obstacle", 1), &settings);
    assert!(rep.converged());
    assert_eq!(
        rep.qp_count,
        rep.trace.iter().map(|r| r.qp_solves).sum::<usize>()
    );
    assert_eq!(
        rep.refines,
        rep.trace.iter().map(|r| r.refine_passes).sum::<usize>()
    );
    for r in &rep.trace {
        assert_eq!(r.qp_solves, 3 + r.refine_passes);
        assert!(r.sigma.is_some_and(|s| (0.0..=1.0).contains(&s)));
    }
    assert_eq!(rep.iterations, rep.trace.len());

    let (_, rep) = solve_default(&library("lq_random", 2), &settings);
    assert_eq!(rep.trace[0].qp_solves, 1 + rep.trace[0].refine_passes);
    assert_eq!(rep.trace[0].sigma, None);
}

#[test]
fn converged_iff_total_within_tolerance() {
    let settings = SolverSettings {
        max_iters: 5,
        ..SolverSettings::default()
    };
    for i in 0..10 {
        let (_, rep) = solve_default(&library("cartpole_swingup", instance_seed(9, i)), &settings);
        assert_eq!(rep.converged(), rep.final_kkt.total <= settings.abs_tol);
        if !rep.converged() {
            assert_eq!(rep.status, SolveStatus::MaxIters);
            assert_eq!(rep.iterations, 5);
        }
    }
}

#[test]
fn invalid_settings_are_reported() {
    let settings = SolverSettings {
        tau: 1.5,
        ..SolverSettings::default()
    };
    let (_, rep) = solve_default(&library("double_integrator", 0), &settings);
    assert_eq!(rep.status, SolveStatus::StepFailure);
    assert!(rep.failure.is_some());
    assert_eq!(rep.iterations, 0);
}

#[test]
fn warm_start_from_solution_is_no_slower() {
    let problem = library("pendulum_swingup", 2);
    let settings = SolverSettings::default();
    let (sol, rep) = solve_default(&problem, &settings);
    assert!(rep.converged());
    let (_, again) = solve(&problem, sol, &settings);
    assert!(again.converged());
    // slacks and multipliers are re-initialized, so a few steps remain
    assert!(again.iterations <= rep.iterations);
}

#[test]
fn repeated_escapes_are_counted() {
    let (_, rep) = solve_default(&circle_stall(0.1), &SolverSettings::default());
    assert_eq!(rep.escapes, rep.trace.iter().filter(|r| r.escape).count());
    assert!(rep.escapes >= 1);
    for (i, r) in rep.trace.iter().enumerate() {
        if r.escape {
            assert_eq!((r.alpha, r.alpha_nu), (0.0, 0.0));
            let next = &rep.trace[i + 1];
            assert!(next.forced && next.mu_start == 1.0 && next.alpha <= 0.01);
        } else if r.forced {
            assert!(rep.trace[i - 1].escape);
        }
    }
}
