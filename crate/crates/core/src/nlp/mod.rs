//! Smooth NLP solving and verification: a bundled augmented-Lagrangian
//! solver with a projected limited-memory quasi-Newton inner loop, an
//! independent KKT residual checker, and portable JSON export/import for
//! cross-checking with external solvers.

mod portable;
mod solver;

pub use portable::{export_nlp, import_nlp};

use thiserror::Error;

use crate::expr::{EvalError, Workspace};
use crate::model::Sense;
use crate::transcribe::NlpInstance;

/// Solver tolerances and schedule parameters. Solving is deterministic by
/// construction; there is no seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub kkt_tol: f64,
    pub feas_tol: f64,
    pub max_outer_iter: usize,
    pub max_inner_iter: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub lbfgs_memory: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            kkt_tol: 1e-6,
            feas_tol: 1e-8,
            max_outer_iter: 100,
            max_inner_iter: 5000,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            lbfgs_memory: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    IterLimit,
    Infeasible,
    NumericFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "Optimal",
            SolveStatus::IterLimit => "IterLimit",
            SolveStatus::Infeasible => "Infeasible",
            SolveStatus::NumericFailure => "NumericFailure",
        };
        write!(f, "{s}")
    }
}

/// First-order optimality residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn within(&self, opts: &SolveOptions) -> bool {
        self.stationarity <= opts.kkt_tol
            && self.feasibility <= opts.feas_tol
            && self.complementarity <= opts.kkt_tol
    }
}

/// Multipliers for the variable box, one pair per variable; entries are zero
/// away from active bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundMultipliers {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Solver outcome. Multiplier vectors follow the order of appearance of
/// equality/inequality constraints in the instance; inequality multipliers
/// are nonnegative regardless of the constraint sense.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub status: SolveStatus,
    pub equality_multipliers: Vec<f64>,
    pub inequality_multipliers: Vec<f64>,
    pub bound_multipliers: BoundMultipliers,
    pub kkt: KktResiduals,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

#[derive(Debug, Error)]
pub enum NlpError {
    #[error("solution has {got} values for an instance with {expected} variables")]
    LengthMismatch { expected: usize, got: usize },
    #[error("expression evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed NLP document: {0}")]
    Format(String),
}

/// Solve to first-order stationarity. Never panics on numeric trouble; the
/// outcome is always reported through the status field, and `x` is NaN-free.
pub fn solve(nlp: &NlpInstance, opts: &SolveOptions) -> Solution {
    solver::solve(nlp, opts)
}

/// Recompute KKT residuals from scratch at `sol`: stationarity
/// `||grad f + J^T lambda - boundTerms||_inf`, worst feasibility violation,
/// and worst complementarity product. Independent of solver bookkeeping.
pub fn kkt_check(nlp: &NlpInstance, sol: &Solution) -> Result<KktResiduals, NlpError> {
    let x = &sol.x;
    if x.len() != nlp.num_vars {
        return Err(NlpError::LengthMismatch {
            expected: nlp.num_vars,
            got: x.len(),
        });
    }
    let n_eq = nlp
        .constraints
        .iter()
        .filter(|c| c.sense == Sense::Eq)
        .count();
    let n_ineq = nlp.constraints.len() - n_eq;
    if sol.equality_multipliers.len() != n_eq {
        return Err(NlpError::LengthMismatch {
            expected: n_eq,
            got: sol.equality_multipliers.len(),
        });
    }
    if sol.inequality_multipliers.len() != n_ineq {
        return Err(NlpError::LengthMismatch {
            expected: n_ineq,
            got: sol.inequality_multipliers.len(),
        });
    }
    if sol.bound_multipliers.lower.len() != nlp.num_vars
        || sol.bound_multipliers.upper.len() != nlp.num_vars
    {
        return Err(NlpError::LengthMismatch {
            expected: nlp.num_vars,
            got: sol.bound_multipliers.lower.len(),
        });
    }

    let mut ws = Workspace::new();
    let mut r = vec![0.0; nlp.num_vars];
    nlp.objective.accumulate_gradient(x, 1.0, &mut r, &mut ws)?;

    let mut feasibility = 0.0f64;
    let mut complementarity = 0.0f64;
    let (mut eq_i, mut ineq_i) = (0, 0);
    for c in &nlp.constraints {
        let value = c.body.eval_with(x, &mut ws)?;
        let gap = value - c.rhs;
        match c.sense {
            Sense::Eq => {
                let lambda = sol.equality_multipliers[eq_i];
                eq_i += 1;
                c.body.accumulate_gradient(x, lambda, &mut r, &mut ws)?;
                feasibility = feasibility.max(gap.abs());
            }
            Sense::Le => {
                let mu = sol.inequality_multipliers[ineq_i];
                ineq_i += 1;
                c.body.accumulate_gradient(x, mu, &mut r, &mut ws)?;
                feasibility = feasibility.max(gap.max(0.0));
                complementarity = complementarity.max((mu * gap).abs());
            }
            Sense::Ge => {
                let mu = sol.inequality_multipliers[ineq_i];
                ineq_i += 1;
                c.body.accumulate_gradient(x, -mu, &mut r, &mut ws)?;
                feasibility = feasibility.max((-gap).max(0.0));
                complementarity = complementarity.max((mu * gap).abs());
            }
        }
    }

    let mut stationarity = 0.0f64;
    for j in 0..nlp.num_vars {
        let (l, u) = (nlp.lower[j], nlp.upper[j]);
        feasibility = feasibility.max(l - x[j]).max(x[j] - u);
        let zl = sol.bound_multipliers.lower[j];
        let zu = sol.bound_multipliers.upper[j];
        stationarity = stationarity.max((r[j] - zl + zu).abs());
        if zl != 0.0 {
            let gap = if l.is_finite() { x[j] - l } else { 1.0 };
            complementarity = complementarity.max((zl * gap).abs());
        }
        if zu != 0.0 {
            let gap = if u.is_finite() { u - x[j] } else { 1.0 };
            complementarity = complementarity.max((zu * gap).abs());
        }
    }

    Ok(KktResiduals {
        stationarity,
        feasibility,
        complementarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{ExprBuilder, VarId};
    use crate::transcribe::{NlpConstraint, NlpInstance};

    fn quadratic_on_line() -> NlpInstance {
        // min x0^2 + x1^2  s.t.  x0 + x1 = 1
        let mut b = ExprBuilder::new();
        let x0 = b.var(VarId(0));
        let x1 = b.var(VarId(1));
        let s0 = b.pow(x0, 2.0);
        let s1 = b.pow(x1, 2.0);
        let obj = b.add(s0, s1);
        let objective = b.finish(obj);
        let mut cb = ExprBuilder::new();
        let x0 = cb.var(VarId(0));
        let x1 = cb.var(VarId(1));
        let sum = cb.add(x0, x1);
        NlpInstance::raw(
            vec![f64::NEG_INFINITY; 2],
            vec![f64::INFINITY; 2],
            vec![0.0; 2],
            objective,
            vec![NlpConstraint {
                body: cb.finish(sum),
                sense: Sense::Eq,
                rhs: 1.0,
            }],
        )
    }

    #[test]
    fn analytic_solution_has_tiny_residuals() {
        let nlp = quadratic_on_line();
        // Lagrangian: grad f + lambda grad c = (2x0 + l, 2x1 + l) = 0 at
        // x = (1/2, 1/2), lambda = -1.
        let sol = Solution {
            x: vec![0.5, 0.5],
            objective_value: 0.5,
            status: SolveStatus::Optimal,
            equality_multipliers: vec![-1.0],
            inequality_multipliers: vec![],
            bound_multipliers: BoundMultipliers {
                lower: vec![0.0; 2],
                upper: vec![0.0; 2],
            },
            kkt: KktResiduals {
                stationarity: 0.0,
                feasibility: 0.0,
                complementarity: 0.0,
            },
            outer_iterations: 0,
            inner_iterations: 0,
        };
        let r = kkt_check(&nlp, &sol).unwrap();
        assert!(r.stationarity <= 1e-12);
        assert!(r.feasibility <= 1e-12);
        assert!(r.complementarity <= 1e-12);
    }

    #[test]
    fn infeasible_point_reports_positive_feasibility() {
        let nlp = quadratic_on_line();
        let sol = Solution {
            x: vec![3.0, 3.0],
            objective_value: 18.0,
            status: SolveStatus::Optimal,
            equality_multipliers: vec![0.0],
            inequality_multipliers: vec![],
            bound_multipliers: BoundMultipliers {
                lower: vec![0.0; 2],
                upper: vec![0.0; 2],
            },
            kkt: KktResiduals {
                stationarity: 0.0,
                feasibility: 0.0,
                complementarity: 0.0,
            },
            outer_iterations: 0,
            inner_iterations: 0,
        };
        let r = kkt_check(&nlp, &sol).unwrap();
        assert!(r.feasibility >= 5.0 - 1e-12);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let nlp = quadratic_on_line();
        let sol = Solution {
            x: vec![0.5],
            objective_value: 0.0,
            status: SolveStatus::Optimal,
            equality_multipliers: vec![-1.0],
            inequality_multipliers: vec![],
            bound_multipliers: BoundMultipliers {
                lower: vec![0.0],
                upper: vec![0.0],
            },
            kkt: KktResiduals {
                stationarity: 0.0,
                feasibility: 0.0,
                complementarity: 0.0,
            },
            outer_iterations: 0,
            inner_iterations: 0,
        };
        assert!(matches!(
            kkt_check(&nlp, &sol),
            Err(NlpError::LengthMismatch { .. })
        ));
    }
}
