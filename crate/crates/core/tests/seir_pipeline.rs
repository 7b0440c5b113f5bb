//! End-to-end checks on the SEIR case study: feasibility transfer from a
//! forward-integrated trajectory, and a full transcribe/solve/verify pass.

use trajshape::expr::Workspace;
use trajshape::model::{build_seir, MeasureKind, Pdf, SeirParams};
use trajshape::nlp::{kkt_check, solve, SolveOptions, SolveStatus};
use trajshape::transcribe::{build_grid, transcribe, NlpInstance};
use trajshape::QuadRule;

fn seir_rhs(state: [f64; 4], yu: f64, p: &SeirParams) -> [f64; 4] {
    let [s, _e, i, _r] = state;
    let infect = (1.0 - yu) * p.beta * s * i;
    [
        -infect,
        infect - p.xi * state[1],
        p.xi * state[1] - p.gamma * i,
        p.gamma * i,
    ]
}

/// Classic fixed-step RK4 on the SEIR system with a constant policy.
fn simulate(p: &SeirParams, yu: f64, times: &[f64], substeps: usize) -> Vec<[f64; 4]> {
    let mut out = Vec::with_capacity(times.len());
    let mut state = [p.s0, p.e0, p.i0, p.r0];
    out.push(state);
    for w in times.windows(2) {
        let dt = (w[1] - w[0]) / substeps as f64;
        for _ in 0..substeps {
            let k1 = seir_rhs(state, yu, p);
            let mid1 = std::array::from_fn(|j| state[j] + 0.5 * dt * k1[j]);
            let k2 = seir_rhs(mid1, yu, p);
            let mid2 = std::array::from_fn(|j| state[j] + 0.5 * dt * k2[j]);
            let k3 = seir_rhs(mid2, yu, p);
            let end = std::array::from_fn(|j| state[j] + dt * k3[j]);
            let k4 = seir_rhs(end, yu, p);
            for j in 0..4 {
                state[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        out.push(state);
    }
    out
}

/// Max absolute residual of the transcribed ODE path constraints when a
/// simulated trajectory (derivatives from backward differences) is plugged
/// in.
fn max_ode_residual(nlp: &NlpInstance, times: &[f64], states: &[[f64; 4]], yu: f64) -> f64 {
    let n = times.len();
    let mut x = vec![0.0; nlp.num_vars];
    for (v, column) in [(0usize, 0usize), (1, 1), (2, 2), (3, 3)] {
        for k in 0..n {
            x[nlp.map.var_index(v, k)] = states[k][column];
        }
    }
    for k in 0..n {
        x[nlp.map.var_index(4, k)] = yu;
    }
    let p = SeirParams::default();
    for d in 0..4 {
        // dy_0 from the ODE itself, dy_k from the divided difference.
        x[nlp.map.deriv_index(d, 0)] = seir_rhs(states[0], yu, &p)[d];
        for k in 1..n {
            let h = times[k] - times[k - 1];
            x[nlp.map.deriv_index(d, k)] =
                (states[k][d] - states[k - 1][d]) / h;
        }
    }
    let mut ws = Workspace::new();
    let mut worst = 0.0f64;
    for c in nlp.constraints.iter().take(4 * n) {
        let v = c.body.eval_with(&x, &mut ws).unwrap();
        worst = worst.max((v - c.rhs).abs());
    }
    worst
}

#[test]
fn ode_residuals_shrink_first_order_in_h() {
    let p = SeirParams {
        yi_max: 1.0,
        ..SeirParams::default()
    };
    let m = build_seir(&p, MeasureKind::Expectation(Pdf::uniform())).unwrap();
    // No isolation: the epidemic wave gives the states real curvature.
    let mut residuals = Vec::new();
    for n in [51usize, 101, 201] {
        let grid = build_grid(m.domain, n).unwrap();
        let nlp = transcribe(&m, &grid, QuadRule::Trapezoid).unwrap();
        let states = simulate(&p, 0.0, grid.supports(), 400);
        residuals.push(max_ode_residual(&nlp, grid.supports(), &states, 0.0));
    }
    // Halving h roughly halves the worst residual.
    for w in residuals.windows(2) {
        let ratio = w[0] / w[1];
        assert!(
            ratio > 1.5 && ratio < 3.0,
            "first-order trend violated: {residuals:?}"
        );
    }
}

#[test]
fn trivial_constant_ode_reaches_its_analytic_solution() {
    // dy/dt = 0, y(0) = 1, integral objective: y stays 1, objective tf - t0.
    use trajshape::expr::Expression;
    use trajshape::model::{MeasureSpec, ModelBuilder, Sense};
    let mut mb = ModelBuilder::new(0.0, 3.0).unwrap();
    let y = mb.var("y", f64::NEG_INFINITY, f64::INFINITY, 0.5);
    let dy = mb.deriv(y).unwrap();
    mb.path(Expression::var(dy), Sense::Eq, 0.0);
    mb.point(Expression::var(y), 0.0, Sense::Eq, 1.0);
    let m = mb.seal(MeasureSpec {
        kind: MeasureKind::Integral,
        operand: Expression::var(y),
    });
    let grid = build_grid(m.domain, 2).unwrap();
    let nlp = transcribe(&m, &grid, QuadRule::Trapezoid).unwrap();
    let sol = solve(&nlp, &SolveOptions::default());
    assert_eq!(sol.status, SolveStatus::Optimal);
    for k in 0..2 {
        assert!((sol.x[nlp.map.var_index(0, k)] - 1.0).abs() <= 1e-7);
    }
    assert!((sol.objective_value - 3.0).abs() <= 1e-6);
}

#[test]
fn seir_expectation_full_pipeline() {
    let m = build_seir(
        &SeirParams::default(),
        MeasureKind::Expectation(Pdf::uniform()),
    )
    .unwrap();
    let grid = build_grid(m.domain, 101).unwrap();
    let nlp = transcribe(&m, &grid, QuadRule::Trapezoid).unwrap();
    let sol = solve(&nlp, &SolveOptions::default());
    eprintln!(
        "status={:?} obj={} kkt={:?} outer={} inner={}",
        sol.status, sol.objective_value, sol.kkt, sol.outer_iterations, sol.inner_iterations
    );
    assert_eq!(sol.status, SolveStatus::Optimal);
    let r = kkt_check(&nlp, &sol).unwrap();
    assert!(r.stationarity <= 1e-6, "stationarity {}", r.stationarity);
    assert!(r.feasibility <= 1e-8, "feasibility {}", r.feasibility);
    assert!(r.complementarity <= 1e-6, "complementarity {}", r.complementarity);
    // Trajectory-level structure: caps respected, population conserved.
    for k in 0..101 {
        let yi = sol.x[nlp.map.var_index(2, k)];
        let yu = sol.x[nlp.map.var_index(4, k)];
        assert!(yi <= 0.02 + 1e-6);
        assert!((-1e-9..=0.8 + 1e-9).contains(&yu));
        let total: f64 = (0..4).map(|v| sol.x[nlp.map.var_index(v, k)]).sum();
        assert!((total - 1.0).abs() <= 1e-6, "population {total} at {k}");
    }
}
