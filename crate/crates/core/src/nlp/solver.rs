//! Augmented-Lagrangian outer loop over a projected limited-memory
//! quasi-Newton inner solver. Inequalities become equalities through
//! nonnegative slacks; variable bounds are handled by projection. The
//! objective is normalized by its start-point gradient scale so the iterate
//! path is invariant to positive objective rescaling.

use std::collections::VecDeque;

use crate::expr::{Expression, Workspace};
use crate::model::Sense;
use crate::transcribe::NlpInstance;

use super::{BoundMultipliers, KktResiduals, Solution, SolveOptions, SolveStatus};

const RHO_MAX: f64 = 1e12;
const STALL_PROGRESS: f64 = 1e-14;
const STALL_LIMIT: usize = 50;
const ARMIJO: f64 = 1e-4;

struct SlackedCon<'a> {
    body: &'a Expression,
    rhs: f64,
    /// Extended index of the slack variable, with its sign in the equality
    /// `body - rhs + sign*slack = 0`.
    slack: Option<(usize, f64)>,
}

struct Problem<'a> {
    nlp: &'a NlpInstance,
    cons: Vec<SlackedCon<'a>>,
    /// Structural variable indices touched by each constraint (slack last).
    cols: Vec<Vec<usize>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    n_orig: usize,
    n: usize,
    obj_scale: f64,
}

impl<'a> Problem<'a> {
    /// Constraint values of the slacked equality system; false on a domain
    /// failure.
    fn constraint_values(&self, x: &[f64], out: &mut [f64], ws: &mut Workspace) -> bool {
        for (i, c) in self.cons.iter().enumerate() {
            let v = match c.body.eval_with(&x[..self.n_orig], ws) {
                Ok(v) => v,
                Err(_) => return false,
            };
            let mut ci = v - c.rhs;
            if let Some((j, sign)) = c.slack {
                ci += sign * x[j];
            }
            out[i] = ci;
        }
        true
    }

    /// Augmented merit `f/s + lambda.c + rho/2 |c|^2`; +inf outside the
    /// expression domain so the line search rejects the step.
    fn merit(
        &self,
        x: &[f64],
        lambda: &[f64],
        rho: f64,
        c_buf: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        let f = match self.nlp.objective.eval_with(&x[..self.n_orig], ws) {
            Ok(f) => f,
            Err(_) => return f64::INFINITY,
        };
        if !self.constraint_values(x, c_buf, ws) {
            return f64::INFINITY;
        }
        let mut m = f / self.obj_scale;
        for (i, &ci) in c_buf.iter().enumerate() {
            m += lambda[i] * ci + 0.5 * rho * ci * ci;
        }
        if m.is_nan() {
            f64::INFINITY
        } else {
            m
        }
    }

    /// Merit gradient into `g`; also refreshes `c_buf`. Returns the merit or
    /// None on a domain failure at `x`.
    fn merit_gradient(
        &self,
        x: &[f64],
        lambda: &[f64],
        rho: f64,
        c_buf: &mut [f64],
        g: &mut [f64],
        ws: &mut Workspace,
    ) -> Option<f64> {
        g.fill(0.0);
        let f = self
            .nlp
            .objective
            .accumulate_gradient(&x[..self.n_orig], 1.0 / self.obj_scale, g, ws)
            .ok()?;
        if !self.constraint_values(x, c_buf, ws) {
            return None;
        }
        let mut m = f / self.obj_scale;
        for (i, c) in self.cons.iter().enumerate() {
            let ci = c_buf[i];
            let w = lambda[i] + rho * ci;
            m += lambda[i] * ci + 0.5 * rho * ci * ci;
            if w != 0.0 {
                c.body
                    .accumulate_gradient(&x[..self.n_orig], w, g, ws)
                    .ok()?;
                if let Some((j, sign)) = c.slack {
                    g[j] += w * sign;
                }
            }
        }
        if m.is_nan() {
            None
        } else {
            Some(m)
        }
    }

    fn project(&self, x: &mut [f64]) {
        for j in 0..self.n {
            x[j] = x[j].clamp(self.lower[j], self.upper[j]);
        }
    }

    /// Infinity norm of the projected gradient step `x - P(x - g)`.
    fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        let mut pg = 0.0f64;
        for j in 0..self.n {
            let step = x[j] - (x[j] - g[j]).clamp(self.lower[j], self.upper[j]);
            pg = pg.max(step.abs());
        }
        pg
    }

    /// Gradient components that point out of the feasible box at an active
    /// bound are masked to zero.
    fn mask_active(&self, x: &[f64], g: &[f64], masked: &mut [f64]) {
        for j in 0..self.n {
            let blocked = (x[j] <= self.lower[j] && g[j] > 0.0)
                || (x[j] >= self.upper[j] && g[j] < 0.0);
            masked[j] = if blocked { 0.0 } else { g[j] };
        }
    }

    /// Diagonal Gauss-Newton curvature `1 + rho sum_i (grad c_i)_j^2` at `x`,
    /// inverted for use as the quasi-Newton seed matrix. Equalizes the very
    /// different penalty curvature seen by state, derivative, and control
    /// columns.
    fn penalty_preconditioner(
        &self,
        x: &[f64],
        rho: f64,
        h0: &mut [f64],
        ws: &mut Workspace,
    ) -> bool {
        let mut q = vec![0.0; self.n];
        let mut scratch = vec![0.0; self.n];
        for (c, cols) in self.cons.iter().zip(&self.cols) {
            if c
                .body
                .accumulate_gradient(&x[..self.n_orig], 1.0, &mut scratch, ws)
                .is_err()
            {
                return false;
            }
            if let Some((j, sign)) = c.slack {
                scratch[j] = sign;
            }
            for &j in cols {
                q[j] += scratch[j] * scratch[j];
                scratch[j] = 0.0;
            }
        }
        for j in 0..self.n {
            h0[j] = 1.0 / (1.0 + rho * q[j]);
        }
        true
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Lbfgs {
    mem: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    cap: usize,
}

impl Lbfgs {
    fn new(cap: usize) -> Self {
        Lbfgs {
            mem: VecDeque::new(),
            cap: cap.max(1),
        }
    }

    fn clear(&mut self) {
        self.mem.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm2(&s) * norm2(&y) && sy.is_finite() {
            if self.mem.len() == self.cap {
                self.mem.pop_front();
            }
            self.mem.push_back((s, y, 1.0 / sy));
        }
    }

    /// Two-loop recursion `d = -H g` with the diagonal seed `h0`, rescaled to
    /// match the curvature of the most recent pair.
    fn direction(&self, g: &[f64], h0: &[f64], d: &mut Vec<f64>) {
        d.clear();
        d.extend_from_slice(g);
        let k = self.mem.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let (s, y, r) = &self.mem[i];
            let a = r * dot(s, d);
            alpha[i] = a;
            for (dj, yj) in d.iter_mut().zip(y) {
                *dj -= a * yj;
            }
        }
        let mut gamma = 1.0;
        if let Some((s, y, _)) = self.mem.back() {
            let yhy: f64 = y.iter().zip(h0).map(|(yj, hj)| yj * yj * hj).sum();
            if yhy > 0.0 {
                gamma = dot(s, y) / yhy;
            }
        }
        for (dj, hj) in d.iter_mut().zip(h0) {
            *dj *= gamma * hj;
        }
        for i in 0..k {
            let (s, y, r) = &self.mem[i];
            let b = r * dot(y, d);
            let a = alpha[i] - b;
            for (dj, sj) in d.iter_mut().zip(s) {
                *dj += a * sj;
            }
        }
        for dj in d.iter_mut() {
            *dj = -*dj;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InnerEnd {
    Converged,
    MaxIter,
    Stalled,
    EvalFailure,
}

struct InnerState {
    x: Vec<f64>,
    g: Vec<f64>,
    merit: f64,
    iterations: usize,
}

/// Minimize the augmented merit over the box to `tol` in projected-gradient
/// norm.
#[allow(clippy::too_many_arguments)]
fn inner_solve(
    p: &Problem,
    st: &mut InnerState,
    lambda: &[f64],
    rho: f64,
    tol: f64,
    max_iter: usize,
    lbfgs_cap: usize,
    ws: &mut Workspace,
) -> InnerEnd {
    let n = p.n;
    let mut c_buf = vec![0.0; p.cons.len()];
    let mut lbfgs = Lbfgs::new(lbfgs_cap);
    let mut masked = vec![0.0; n];
    let mut d = Vec::with_capacity(n);
    let mut x_trial = vec![0.0; n];
    let mut stall = 0usize;

    let mut h0 = vec![1.0; n];
    if !p.penalty_preconditioner(&st.x, rho, &mut h0, ws) {
        return InnerEnd::EvalFailure;
    }

    st.merit = match p.merit_gradient(&st.x, lambda, rho, &mut c_buf, &mut st.g, ws) {
        Some(m) => m,
        None => return InnerEnd::EvalFailure,
    };

    for _ in 0..max_iter {
        st.iterations += 1;
        if p.projected_gradient_norm(&st.x, &st.g) <= tol {
            return InnerEnd::Converged;
        }
        p.mask_active(&st.x, &st.g, &mut masked);
        lbfgs.direction(&masked, &h0, &mut d);
        for j in 0..n {
            if masked[j] == 0.0 {
                d[j] = 0.0;
            }
        }
        let descent = dot(&d, &masked);
        if !(descent < -1e-14 * norm2(&d) * norm2(&masked)) || !descent.is_finite() {
            for j in 0..n {
                d[j] = -h0[j] * masked[j];
            }
            lbfgs.clear();
        }

        // Projected Armijo backtracking. Near the f64 resolution of the
        // merit, sufficient decrease is indistinguishable from rounding
        // noise; steps whose predicted change sits below that floor are
        // accepted on a no-increase basis.
        let noise = STALL_PROGRESS * st.merit.abs().max(1.0);
        let mut accepted = false;
        let mut step = 1.0f64;
        let mut new_merit = st.merit;
        for _ in 0..60 {
            for j in 0..n {
                x_trial[j] = (st.x[j] + step * d[j]).clamp(p.lower[j], p.upper[j]);
            }
            let pred: f64 = (0..n).map(|j| st.g[j] * (x_trial[j] - st.x[j])).sum();
            if pred < 0.0 {
                let m = p.merit(&x_trial, lambda, rho, &mut c_buf, ws);
                let target = if -pred <= 10.0 * noise {
                    st.merit + noise
                } else {
                    st.merit + ARMIJO * pred
                };
                if m <= target {
                    new_merit = m;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // Retry once along steepest descent with fresh memory.
            lbfgs.clear();
            let mut sd_ok = false;
            let mut step = 1.0f64;
            for _ in 0..60 {
                for j in 0..n {
                    x_trial[j] =
                        (st.x[j] - step * h0[j] * masked[j]).clamp(p.lower[j], p.upper[j]);
                }
                let pred: f64 = (0..n).map(|j| st.g[j] * (x_trial[j] - st.x[j])).sum();
                if pred < 0.0 {
                    let m = p.merit(&x_trial, lambda, rho, &mut c_buf, ws);
                    let target = if -pred <= 10.0 * noise {
                        st.merit + noise
                    } else {
                        st.merit + ARMIJO * pred
                    };
                    if m <= target {
                        new_merit = m;
                        sd_ok = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !sd_ok {
                return InnerEnd::Stalled;
            }
        }

        let mut s_vec = vec![0.0; n];
        for j in 0..n {
            s_vec[j] = x_trial[j] - st.x[j];
        }
        std::mem::swap(&mut st.x, &mut x_trial);
        let g_prev = st.g.clone();
        let m = match p.merit_gradient(&st.x, lambda, rho, &mut c_buf, &mut st.g, ws) {
            Some(m) => m,
            None => return InnerEnd::EvalFailure,
        };
        let y_vec: Vec<f64> = st.g.iter().zip(&g_prev).map(|(a, b)| a - b).collect();
        lbfgs.push(s_vec, y_vec);

        if st.merit - new_merit <= STALL_PROGRESS * st.merit.abs().max(1.0) {
            stall += 1;
            if stall >= STALL_LIMIT {
                if std::env::var_os("TRAJSHAPE_TRACE").is_some_and(|v| v == "3") {
                    let pg = p.projected_gradient_norm(&st.x, &st.g);
                    eprintln!(
                        "  inner stall: merit={:.17e} new={new_merit:.17e} pg={pg:.3e} |d|={:.3e} it={}",
                        st.merit,
                        norm2(&d),
                        st.iterations
                    );
                }
                st.merit = m;
                return InnerEnd::Stalled;
            }
        } else {
            stall = 0;
        }
        st.merit = m;
    }
    InnerEnd::MaxIter
}

/// Multipliers mapped back to the original problem with residuals recomputed
/// there (same formulas as `kkt_check`).
struct Certificate {
    equality_multipliers: Vec<f64>,
    inequality_multipliers: Vec<f64>,
    bounds: BoundMultipliers,
    kkt: KktResiduals,
}

fn certify(
    nlp: &NlpInstance,
    x: &[f64],
    lambda_hat: &[f64],
    obj_scale: f64,
    ws: &mut Workspace,
) -> Option<Certificate> {
    let n = nlp.num_vars;
    let mut r = vec![0.0; n];
    nlp.objective.accumulate_gradient(x, 1.0, &mut r, ws).ok()?;

    let mut eq = Vec::new();
    let mut ineq = Vec::new();
    let mut feasibility = 0.0f64;
    let mut complementarity = 0.0f64;
    for (i, c) in nlp.constraints.iter().enumerate() {
        let value = c.body.eval_with(x, ws).ok()?;
        let gap = value - c.rhs;
        let signed = obj_scale * lambda_hat[i];
        match c.sense {
            Sense::Eq => {
                eq.push(signed);
                c.body.accumulate_gradient(x, signed, &mut r, ws).ok()?;
                feasibility = feasibility.max(gap.abs());
            }
            Sense::Le => {
                let mu = signed.max(0.0);
                ineq.push(mu);
                c.body.accumulate_gradient(x, mu, &mut r, ws).ok()?;
                feasibility = feasibility.max(gap.max(0.0));
                complementarity = complementarity.max((mu * gap).abs());
            }
            Sense::Ge => {
                let mu = (-signed).max(0.0);
                ineq.push(mu);
                c.body.accumulate_gradient(x, -mu, &mut r, ws).ok()?;
                feasibility = feasibility.max((-gap).max(0.0));
                complementarity = complementarity.max((mu * gap).abs());
            }
        }
    }

    let mut zl = vec![0.0; n];
    let mut zu = vec![0.0; n];
    let mut stationarity = 0.0f64;
    for j in 0..n {
        let (l, u) = (nlp.lower[j], nlp.upper[j]);
        let at_lower = l.is_finite() && x[j] - l <= 1e-9 * l.abs().max(1.0);
        let at_upper = u.is_finite() && u - x[j] <= 1e-9 * u.abs().max(1.0);
        if at_lower && r[j] > 0.0 {
            zl[j] = r[j];
        }
        if at_upper && r[j] < 0.0 {
            zu[j] = -r[j];
        }
        stationarity = stationarity.max((r[j] - zl[j] + zu[j]).abs());
        if zl[j] != 0.0 {
            complementarity = complementarity.max((zl[j] * (x[j] - l)).abs());
        }
        if zu[j] != 0.0 {
            complementarity = complementarity.max((zu[j] * (u - x[j])).abs());
        }
        feasibility = feasibility.max(l - x[j]).max(x[j] - u);
    }

    Some(Certificate {
        equality_multipliers: eq,
        inequality_multipliers: ineq,
        bounds: BoundMultipliers {
            lower: zl,
            upper: zu,
        },
        kkt: KktResiduals {
            stationarity,
            feasibility,
            complementarity,
        },
    })
}

fn empty_certificate(nlp: &NlpInstance) -> Certificate {
    let n_eq = nlp
        .constraints
        .iter()
        .filter(|c| c.sense == Sense::Eq)
        .count();
    Certificate {
        equality_multipliers: vec![0.0; n_eq],
        inequality_multipliers: vec![0.0; nlp.constraints.len() - n_eq],
        bounds: BoundMultipliers {
            lower: vec![0.0; nlp.num_vars],
            upper: vec![0.0; nlp.num_vars],
        },
        kkt: KktResiduals {
            stationarity: f64::INFINITY,
            feasibility: f64::INFINITY,
            complementarity: f64::INFINITY,
        },
    }
}

fn finish(
    nlp: &NlpInstance,
    x_orig: Vec<f64>,
    status: SolveStatus,
    cert: Certificate,
    outer: usize,
    inner: usize,
    ws: &mut Workspace,
) -> Solution {
    let objective_value = nlp.objective.eval_with(&x_orig, ws).unwrap_or(f64::MAX);
    Solution {
        x: x_orig,
        objective_value,
        status,
        equality_multipliers: cert.equality_multipliers,
        inequality_multipliers: cert.inequality_multipliers,
        bound_multipliers: cert.bounds,
        kkt: cert.kkt,
        outer_iterations: outer,
        inner_iterations: inner,
    }
}

pub fn solve(nlp: &NlpInstance, opts: &SolveOptions) -> Solution {
    let n_orig = nlp.num_vars;
    let mut ws = Workspace::new();

    // Extended problem: original box copied, one nonnegative slack per
    // inequality.
    let mut lower = nlp.lower.clone();
    let mut upper = nlp.upper.clone();
    let mut cons = Vec::with_capacity(nlp.constraints.len());
    let mut cols = Vec::with_capacity(nlp.constraints.len());
    let mut next = n_orig;
    for c in &nlp.constraints {
        let slack = match c.sense {
            Sense::Eq => None,
            Sense::Le => Some((next, 1.0)),
            Sense::Ge => Some((next, -1.0)),
        };
        let mut touched = c.body.var_indices();
        if slack.is_some() {
            lower.push(0.0);
            upper.push(f64::INFINITY);
            touched.push(next);
            next += 1;
        }
        cols.push(touched);
        cons.push(SlackedCon {
            body: &c.body,
            rhs: c.rhs,
            slack,
        });
    }
    let n = next;

    let mut x = vec![0.0; n];
    for j in 0..n_orig {
        let s = if nlp.start[j].is_finite() { nlp.start[j] } else { 0.0 };
        x[j] = s.clamp(nlp.lower[j], nlp.upper[j]);
    }

    // Objective normalization from the start-point gradient.
    let mut g0 = vec![0.0; n_orig];
    let obj_scale = match nlp
        .objective
        .accumulate_gradient(&x[..n_orig], 1.0, &mut g0, &mut ws)
    {
        Ok(_) => {
            let s = g0.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            if s.is_finite() && s > 0.0 {
                s.clamp(1e-8, 1e8)
            } else {
                1.0
            }
        }
        Err(_) => {
            let x_orig = x[..n_orig].to_vec();
            return finish(
                nlp,
                x_orig,
                SolveStatus::NumericFailure,
                empty_certificate(nlp),
                0,
                0,
                &mut ws,
            );
        }
    };

    let p = Problem {
        nlp,
        cons,
        cols,
        lower,
        upper,
        n_orig,
        n,
        obj_scale,
    };

    // Feasible slack initialization: c_i(x0) = 0 where the sign allows.
    let mut c0 = vec![0.0; p.cons.len()];
    if p.constraint_values(&x, &mut c0, &mut ws) {
        for (i, c) in p.cons.iter().enumerate() {
            if let Some((j, sign)) = c.slack {
                x[j] = (-c0[i] * sign).max(0.0);
            }
        }
    }
    p.project(&mut x);

    let mut lambda = vec![0.0; p.cons.len()];
    let mut rho = opts.penalty_init.max(1e-8);
    // Scaled-space stationarity target. Fixed so that positively rescaled
    // objectives follow identical iterate paths; tightened further below
    // when the certified original-space stationarity needs it.
    let base_target = 0.25 * opts.kkt_tol;
    let mut inner_tol = 1e-2f64.max(base_target);

    let mut st = InnerState {
        x,
        g: vec![0.0; n],
        merit: f64::INFINITY,
        iterations: 0,
    };
    let mut c_buf = vec![0.0; p.cons.len()];
    let mut v_prev = f64::INFINITY;
    let mut stalled_outers = 0usize;
    let mut stagnant_at_cap = 0usize;
    let mut last_cert: Option<Certificate> = None;
    let mut status = SolveStatus::IterLimit;
    let mut outer_done = 0usize;

    for outer in 0..opts.max_outer_iter {
        outer_done = outer + 1;
        let end = inner_solve(
            &p,
            &mut st,
            &lambda,
            rho,
            inner_tol,
            opts.max_inner_iter,
            opts.lbfgs_memory,
            &mut ws,
        );
        if end == InnerEnd::EvalFailure {
            status = SolveStatus::NumericFailure;
            break;
        }
        if !p.constraint_values(&st.x, &mut c_buf, &mut ws) {
            status = SolveStatus::NumericFailure;
            break;
        }
        let violation = c_buf.iter().fold(0.0f64, |a, &v| a.max(v.abs()));

        // First-order multiplier estimate, then certify on the original
        // problem.
        let lambda_hat: Vec<f64> = lambda
            .iter()
            .zip(&c_buf)
            .map(|(l, c)| l + rho * c)
            .collect();
        let cert = certify(nlp, &st.x[..n_orig], &lambda_hat, obj_scale, &mut ws);
        if std::env::var_os("TRAJSHAPE_TRACE").is_some() {
            let pg = p.projected_gradient_norm(&st.x, &st.g);
            let worst = c_buf
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .map(|(i, v)| (i, *v));
            eprintln!(
                "outer {outer}: end={end:?} rho={rho:.1e} tol={inner_tol:.1e} pg={pg:.2e} viol={violation:.2e} worst={worst:?} iters={} cert={:?}",
                st.iterations,
                cert.as_ref().map(|c| c.kkt)
            );
        }
        if std::env::var_os("TRAJSHAPE_TRACE").is_some_and(|v| v == "2") {
            for (label, j) in [
                ("yi0", 202usize),
                ("yi1", 203),
                ("yi2", 204),
                ("ye1", 102),
                ("dyi0", 707),
                ("dyi1", 708),
            ] {
                if j < p.n {
                    eprintln!(
                        "  {label}: x={:.6e} g={:.3e} lo={} hi={}",
                        st.x[j], st.g[j], p.lower[j], p.upper[j]
                    );
                }
            }
        }
        let tight = inner_tol <= base_target * 1.0001;
        let mut stat_blocked = false;
        if let Some(cert) = cert {
            let ok = cert.kkt.stationarity <= opts.kkt_tol
                && cert.kkt.feasibility <= opts.feas_tol
                && cert.kkt.complementarity <= opts.kkt_tol;
            let converged_inner = end == InnerEnd::Converged || end == InnerEnd::Stalled;
            if ok && tight && converged_inner {
                let x_orig = st.x[..n_orig].to_vec();
                return finish(
                    nlp,
                    x_orig,
                    SolveStatus::Optimal,
                    cert,
                    outer_done,
                    st.iterations,
                    &mut ws,
                );
            }
            stat_blocked = tight && cert.kkt.stationarity > opts.kkt_tol;
            last_cert = Some(cert);
        }

        lambda = lambda_hat;
        let improved = violation <= 0.25 * v_prev;
        if !improved && violation > 0.1 * opts.feas_tol {
            rho = (rho * opts.penalty_growth).min(RHO_MAX);
        }
        if rho >= RHO_MAX && violation > (100.0 * opts.feas_tol).max(1e-6) {
            if violation > 0.9 * v_prev {
                stagnant_at_cap += 1;
                if stagnant_at_cap >= 3 {
                    status = SolveStatus::Infeasible;
                    break;
                }
            } else {
                stagnant_at_cap = 0;
            }
        }
        v_prev = violation;
        if tight && stat_blocked {
            // Original-space stationarity may demand extra inner accuracy
            // when the objective scale exceeds one.
            inner_tol = (inner_tol * 0.2).max(1e-12);
        } else {
            inner_tol = (inner_tol * 0.2).max(base_target);
        }

        if end == InnerEnd::Stalled && !improved {
            stalled_outers += 1;
            if stalled_outers >= 5 {
                status = SolveStatus::NumericFailure;
                break;
            }
        } else {
            stalled_outers = 0;
        }
    }

    let x_orig: Vec<f64> = st.x[..n_orig]
        .iter()
        .map(|&v| if v.is_finite() { v } else { 0.0 })
        .collect();
    let cert = last_cert.unwrap_or_else(|| empty_certificate(nlp));
    finish(nlp, x_orig, status, cert, outer_done, st.iterations, &mut ws)
}
