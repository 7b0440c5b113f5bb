//! Direct transcription: instantiate a [`DynModel`] on a support grid,
//! encode derivatives by backward finite differences, lower the measure
//! objective, and assemble the finite-dimensional NLP.
//!
//! Layout of the NLP variable vector: each infinite variable occupies one
//! contiguous block of `N` supports, then each derivative variable, then the
//! measure auxiliaries. Trajectories are therefore plain slices.

use thiserror::Error;

use crate::expr::{Expression, VarId, VarSubst};
use crate::measures::{lower_measure, MeasureError, QuadRule};
use crate::model::{Diagnostic, DynModel, Sense, TimeDomain};

/// Strictly increasing support times spanning the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    supports: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TranscribeError {
    #[error("grid needs at least 2 supports (got {0})")]
    BadCount(usize),
    #[error("supports must be strictly increasing")]
    NotIncreasing,
    #[error("model is invalid: {0:?}")]
    InvalidModel(Vec<Diagnostic>),
    #[error("point constraint time {0} does not lie on a grid support")]
    OffGridPoint(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

impl Grid {
    /// Evenly spaced grid with exact endpoints.
    pub fn even(domain: TimeDomain, n: usize) -> Result<Grid, TranscribeError> {
        if n < 2 {
            return Err(TranscribeError::BadCount(n));
        }
        let h = domain.length() / (n - 1) as f64;
        let mut supports = Vec::with_capacity(n);
        for k in 0..n {
            let t = if k == 0 {
                domain.t0
            } else if k == n - 1 {
                domain.tf
            } else {
                domain.t0 + k as f64 * h
            };
            supports.push(t);
        }
        Ok(Grid { supports })
    }

    /// User-supplied supports; must be strictly increasing with at least two
    /// entries.
    pub fn from_supports(supports: Vec<f64>) -> Result<Grid, TranscribeError> {
        if supports.len() < 2 {
            return Err(TranscribeError::BadCount(supports.len()));
        }
        if supports.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(TranscribeError::NotIncreasing);
        }
        Ok(Grid { supports })
    }

    pub fn supports(&self) -> &[f64] {
        &self.supports
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spacing `h_k = t_{k+1} - t_k`.
    pub fn spacing(&self, k: usize) -> f64 {
        self.supports[k + 1] - self.supports[k]
    }
}

/// Build an evenly spaced grid over `domain` with `n` supports.
pub fn build_grid(domain: TimeDomain, n: usize) -> Result<Grid, TranscribeError> {
    Grid::even(domain, n)
}

/// Mapping from (model symbol, support index) to NLP variable index.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableMap {
    n_supports: usize,
    n_vars: usize,
    n_derivs: usize,
    n_aux: usize,
}

impl VariableMap {
    pub fn n_supports(&self) -> usize {
        self.n_supports
    }

    /// NLP index of infinite variable `v` at support `k`.
    pub fn var_index(&self, v: usize, k: usize) -> usize {
        debug_assert!(k < self.n_supports && v < self.n_vars);
        v * self.n_supports + k
    }

    /// NLP index of derivative variable `d` at support `k`.
    pub fn deriv_index(&self, d: usize, k: usize) -> usize {
        debug_assert!(k < self.n_supports && d < self.n_derivs);
        (self.n_vars + d) * self.n_supports + k
    }

    /// Range of the measure auxiliary variables.
    pub fn aux_range(&self) -> std::ops::Range<usize> {
        let base = (self.n_vars + self.n_derivs) * self.n_supports;
        base..base + self.n_aux
    }

    pub fn num_vars(&self) -> usize {
        (self.n_vars + self.n_derivs) * self.n_supports + self.n_aux
    }

    /// Contiguous slice of NLP indices holding variable `v`'s trajectory.
    pub fn var_slice(&self, v: usize) -> std::ops::Range<usize> {
        v * self.n_supports..(v + 1) * self.n_supports
    }

    pub fn deriv_slice(&self, d: usize) -> std::ops::Range<usize> {
        let base = (self.n_vars + d) * self.n_supports;
        base..base + self.n_supports
    }
}

/// One transcribed constraint.
#[derive(Debug, Clone)]
pub struct NlpConstraint {
    pub body: Expression,
    pub sense: Sense,
    pub rhs: f64,
}

/// Finite-dimensional smooth program produced by transcription (or imported
/// from an exported document, in which case the map is empty).
#[derive(Debug, Clone)]
pub struct NlpInstance {
    pub num_vars: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub start: Vec<f64>,
    pub objective: Expression,
    pub constraints: Vec<NlpConstraint>,
    pub map: VariableMap,
}

impl NlpInstance {
    /// Map-less instance over raw vectors (used by the importer and tests).
    pub fn raw(
        lower: Vec<f64>,
        upper: Vec<f64>,
        start: Vec<f64>,
        objective: Expression,
        constraints: Vec<NlpConstraint>,
    ) -> Self {
        let num_vars = lower.len();
        NlpInstance {
            num_vars,
            lower,
            upper,
            start,
            objective,
            constraints,
            map: VariableMap {
                n_supports: 0,
                n_vars: 0,
                n_derivs: 0,
                n_aux: num_vars,
            },
        }
    }
}

/// Backward-difference linking constraints for one differentiated variable:
/// `dy_k h_{k-1} - y_k + y_{k-1} = 0` for `k = 1..N-1`. No equation at the
/// first support; the path constraints instantiated at `t0` pin `dy_0`.
pub fn backward_difference_constraints(
    map: &VariableMap,
    var: usize,
    deriv: usize,
    grid: &Grid,
) -> Vec<NlpConstraint> {
    let mut out = Vec::with_capacity(grid.len() - 1);
    for k in 1..grid.len() {
        let h = grid.spacing(k - 1);
        let mut b = crate::expr::ExprBuilder::new();
        let dy = b.var(VarId(map.deriv_index(deriv, k)));
        let yk = b.var(VarId(map.var_index(var, k)));
        let ykm1 = b.var(VarId(map.var_index(var, k - 1)));
        let hc = b.constant(h);
        let scaled = b.mul(dy, hc);
        let diff = b.sub(scaled, yk);
        let body = b.add(diff, ykm1);
        out.push(NlpConstraint {
            body: b.finish(body),
            sense: Sense::Eq,
            rhs: 0.0,
        });
    }
    out
}

enum SymbolTarget {
    Var(usize),
    Deriv(usize),
    Time,
}

/// Transcribe a validated model onto `grid`, weighting the measure with
/// `rule`. Path constraints are instantiated at every support; path bounds
/// that are bare variables fold into the box instead.
pub fn transcribe(
    model: &DynModel,
    grid: &Grid,
    rule: QuadRule,
) -> Result<NlpInstance, TranscribeError> {
    let diags = model.validate();
    if !diags.is_empty() {
        return Err(TranscribeError::InvalidModel(diags));
    }

    let n = grid.len();
    let times = grid.supports();
    let nv = model.vars.len();
    let nd = model.derivs.len();

    // Symbol lookup table for instantiating bodies per support.
    let mut symbols: Vec<Option<SymbolTarget>> = Vec::with_capacity(model.symbol_count());
    symbols.resize_with(model.symbol_count(), || None);
    for (i, v) in model.vars.iter().enumerate() {
        symbols[v.symbol.0] = Some(SymbolTarget::Var(i));
    }
    for (i, d) in model.derivs.iter().enumerate() {
        symbols[d.symbol.0] = Some(SymbolTarget::Deriv(i));
    }
    if let Some(t) = model.time_symbol() {
        symbols[t.0] = Some(SymbolTarget::Time);
    }

    let mut map = VariableMap {
        n_supports: n,
        n_vars: nv,
        n_derivs: nd,
        n_aux: 0,
    };

    let mut lower = vec![f64::NEG_INFINITY; (nv + nd) * n];
    let mut upper = vec![f64::INFINITY; (nv + nd) * n];
    let mut start = vec![0.0; (nv + nd) * n];
    for (i, v) in model.vars.iter().enumerate() {
        for k in 0..n {
            let idx = map.var_index(i, k);
            lower[idx] = v.lower;
            upper[idx] = v.upper;
            start[idx] = v.start;
        }
    }
    // Derivative variables are free with zero starts.

    let instantiate = |body: &Expression, k: usize| -> Expression {
        body.map_vars(|VarId(s)| match symbols[s] {
            Some(SymbolTarget::Var(i)) => VarSubst::Var(VarId(map.var_index(i, k))),
            Some(SymbolTarget::Deriv(d)) => VarSubst::Var(VarId(map.deriv_index(d, k))),
            Some(SymbolTarget::Time) => VarSubst::Const(times[k]),
            None => VarSubst::Var(VarId(usize::MAX)),
        })
    };

    let mut constraints = Vec::new();

    // Path constraints at every support; bare-variable bounds fold into the
    // box (the bundled solver handles bounds by projection).
    for p in &model.paths {
        let bound_var = match (p.body.as_single_var(), p.sense) {
            (Some(VarId(s)), Sense::Le | Sense::Ge) => match symbols[s] {
                Some(SymbolTarget::Var(i)) => Some(i),
                _ => None,
            },
            _ => None,
        };
        if let Some(i) = bound_var {
            for k in 0..n {
                let idx = map.var_index(i, k);
                match p.sense {
                    Sense::Le => upper[idx] = upper[idx].min(p.rhs),
                    Sense::Ge => lower[idx] = lower[idx].max(p.rhs),
                    Sense::Eq => unreachable!(),
                }
                start[idx] = start[idx].clamp(lower[idx], upper[idx]);
            }
            continue;
        }
        for k in 0..n {
            constraints.push(NlpConstraint {
                body: instantiate(&p.body, k),
                sense: p.sense,
                rhs: p.rhs,
            });
        }
    }

    // Backward differences for every differentiated variable.
    for (d, dv) in model.derivs.iter().enumerate() {
        constraints.extend(backward_difference_constraints(&map, dv.of, d, grid));
    }

    // Point constraints must land on a support.
    let tol = 1e-9 * model.domain.length();
    for p in &model.points {
        let k = times
            .iter()
            .position(|&t| (t - p.at).abs() <= tol)
            .ok_or(TranscribeError::OffGridPoint(p.at))?;
        constraints.push(NlpConstraint {
            body: instantiate(&p.body, k),
            sense: p.sense,
            rhs: p.rhs,
        });
    }

    // Objective: instantiate the operand per support, then lower the measure.
    let operand: Vec<Expression> = (0..n)
        .map(|k| instantiate(&model.objective.operand, k))
        .collect();
    let operand_starts: Vec<f64> = operand
        .iter()
        .map(|e| e.evaluate(&start).unwrap_or(0.0))
        .collect();
    let first_aux = (nv + nd) * n;
    let lowered = lower_measure(
        &model.objective.kind,
        &operand,
        times,
        rule,
        first_aux,
        &operand_starts,
    )?;

    map.n_aux = lowered.aux_vars.len();
    for a in &lowered.aux_vars {
        lower.push(a.lower);
        upper.push(a.upper);
        start.push(a.start.clamp(a.lower, a.upper));
    }
    for c in lowered.aux_constraints {
        constraints.push(NlpConstraint {
            body: c.body,
            sense: c.sense,
            rhs: c.rhs,
        });
    }

    Ok(NlpInstance {
        num_vars: map.num_vars(),
        lower,
        upper,
        start,
        objective: lowered.objective,
        constraints,
        map,
    })
}
