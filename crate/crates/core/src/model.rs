//! Symbolic continuous-time problems: a time domain, time-valued decision
//! variables with optional derivatives, path/point constraints, and one
//! measure objective. Models are immutable once sealed; discretization lives
//! in [`crate::transcribe`].

use thiserror::Error;

use crate::expr::{ExprBuilder, Expression, VarId};

/// Closed time interval `[t0, tf]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeDomain {
    pub t0: f64,
    pub tf: f64,
}

impl TimeDomain {
    pub fn length(&self) -> f64 {
        self.tf - self.t0
    }
}

/// Constraint sense for path, point, and transcribed constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl std::fmt::Display for Sense {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sense::Le => write!(f, "<="),
            Sense::Eq => write!(f, "=="),
            Sense::Ge => write!(f, ">="),
        }
    }
}

/// Time-valued decision variable. `start` is the initial guess replicated
/// across supports at transcription time; it is clamped into the bounds.
#[derive(Debug, Clone)]
pub struct InfiniteVar {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub start: f64,
    pub symbol: VarId,
}

/// First derivative of an infinite variable; at most one per variable.
#[derive(Debug, Clone)]
pub struct DerivVar {
    /// Index into the model's variable list.
    pub of: usize,
    pub symbol: VarId,
}

/// Constraint imposed at every point of the time domain.
#[derive(Debug, Clone)]
pub struct PathConstraint {
    pub body: Expression,
    pub sense: Sense,
    pub rhs: f64,
}

/// Constraint on variable values at one fixed time, which must land on a
/// grid support at transcription time.
#[derive(Debug, Clone)]
pub struct PointConstraint {
    pub body: Expression,
    pub at: f64,
    pub sense: Sense,
    pub rhs: f64,
}

/// Time-valued weighting function kind. `Custom` expressions are in a single
/// symbol `Var(0)` standing for `t`.
#[derive(Debug, Clone)]
pub enum PdfKind {
    Uniform,
    Exponential { gamma: f64 },
    Custom(Expression),
}

/// Weighting density over the time domain. With `normalize` set, the density
/// is rescaled to integrate to one over `[t0, tf]`; unset, it is used exactly
/// as written (the exponential density's default).
#[derive(Debug, Clone)]
pub struct Pdf {
    pub kind: PdfKind,
    pub normalize: bool,
}

impl Pdf {
    /// Uniform density `1/(tf - t0)`.
    pub fn uniform() -> Self {
        Pdf {
            kind: PdfKind::Uniform,
            normalize: true,
        }
    }

    /// Constant weight 1: pure integration weights.
    pub fn unit() -> Self {
        Pdf {
            kind: PdfKind::Uniform,
            normalize: false,
        }
    }

    /// Exponential decay `gamma * exp(-gamma t)`, unnormalized over the
    /// domain by default.
    pub fn exponential(gamma: f64) -> Self {
        Pdf {
            kind: PdfKind::Exponential { gamma },
            normalize: false,
        }
    }

    pub fn custom(expr: Expression) -> Self {
        Pdf {
            kind: PdfKind::Custom(expr),
            normalize: false,
        }
    }
}

/// Disutility penalty function.
#[derive(Debug, Clone)]
pub enum DisutilityG {
    /// Smooth single-symbol expression in `Var(0)`.
    Smooth(Expression),
    /// The CVaR generator `(1-alpha)^-1 max(0, x) - x`, realized exactly with
    /// auxiliary variables and linear inequalities at lowering time.
    CvarExact { alpha: f64 },
}

/// Objective measure kind with its parameters.
#[derive(Debug, Clone)]
pub enum MeasureKind {
    Integral,
    Expectation(Pdf),
    MeanVariance { pdf: Pdf, lambda: f64 },
    CVaR { pdf: Pdf, alpha: f64 },
    /// Diagnostic only: not lowerable as an optimization objective.
    Quantile { pdf: Pdf, alpha: f64 },
    Disutility { pdf: Pdf, g: DisutilityG, translation_invariant: bool },
}

impl MeasureKind {
    pub fn name(&self) -> &'static str {
        match self {
            MeasureKind::Integral => "integral",
            MeasureKind::Expectation(_) => "expectation",
            MeasureKind::MeanVariance { .. } => "mean-variance",
            MeasureKind::CVaR { .. } => "cvar",
            MeasureKind::Quantile { .. } => "quantile",
            MeasureKind::Disutility { .. } => "disutility",
        }
    }

    pub fn pdf(&self) -> Option<&Pdf> {
        match self {
            MeasureKind::Integral => None,
            MeasureKind::Expectation(pdf)
            | MeasureKind::MeanVariance { pdf, .. }
            | MeasureKind::CVaR { pdf, .. }
            | MeasureKind::Quantile { pdf, .. }
            | MeasureKind::Disutility { pdf, .. } => Some(pdf),
        }
    }
}

/// Measure description plus the trajectory operand it scalarizes.
#[derive(Debug, Clone)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    pub operand: Expression,
}

/// Sealed continuous-time problem (minimization only).
#[derive(Debug, Clone)]
pub struct DynModel {
    pub domain: TimeDomain,
    pub vars: Vec<InfiniteVar>,
    pub derivs: Vec<DerivVar>,
    pub paths: Vec<PathConstraint>,
    pub points: Vec<PointConstraint>,
    pub objective: MeasureSpec,
    time_symbol: Option<VarId>,
    symbol_count: usize,
}

/// One validation finding: the subject symbol/field and the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub subject: String,
    pub reason: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.subject, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter out of range: {0}")]
    Param(String),
    #[error("time domain requires t0 < tf (got [{t0}, {tf}])")]
    BadDomain { t0: f64, tf: f64 },
    #[error("variable {0} already has a derivative")]
    DuplicateDeriv(String),
    #[error("higher-order derivatives are not representable")]
    HigherOrderDeriv,
    #[error("unknown symbol {0}")]
    UnknownSymbol(VarId),
}

/// Incremental model construction; `seal` produces the immutable model.
#[derive(Debug)]
pub struct ModelBuilder {
    domain: TimeDomain,
    vars: Vec<InfiniteVar>,
    derivs: Vec<DerivVar>,
    paths: Vec<PathConstraint>,
    points: Vec<PointConstraint>,
    time_symbol: Option<VarId>,
    next_symbol: usize,
}

impl ModelBuilder {
    pub fn new(t0: f64, tf: f64) -> Result<Self, ModelError> {
        if !(t0 < tf) || !t0.is_finite() || !tf.is_finite() {
            return Err(ModelError::BadDomain { t0, tf });
        }
        Ok(ModelBuilder {
            domain: TimeDomain { t0, tf },
            vars: Vec::new(),
            derivs: Vec::new(),
            paths: Vec::new(),
            points: Vec::new(),
            time_symbol: None,
            next_symbol: 0,
        })
    }

    fn fresh_symbol(&mut self) -> VarId {
        let s = VarId(self.next_symbol);
        self.next_symbol += 1;
        s
    }

    /// Register an infinite variable; `start` is clamped into the bounds.
    pub fn var(&mut self, name: &str, lower: f64, upper: f64, start: f64) -> VarId {
        let symbol = self.fresh_symbol();
        self.vars.push(InfiniteVar {
            name: name.to_string(),
            lower,
            upper,
            start: start.clamp(lower, upper),
            symbol,
        });
        symbol
    }

    /// Register the derivative of `of`. Rejects duplicates and derivatives of
    /// derivatives.
    pub fn deriv(&mut self, of: VarId) -> Result<VarId, ModelError> {
        if self.derivs.iter().any(|d| d.symbol == of) {
            return Err(ModelError::HigherOrderDeriv);
        }
        let idx = self
            .vars
            .iter()
            .position(|v| v.symbol == of)
            .ok_or(ModelError::UnknownSymbol(of))?;
        if self.derivs.iter().any(|d| d.of == idx) {
            return Err(ModelError::DuplicateDeriv(self.vars[idx].name.clone()));
        }
        let symbol = self.fresh_symbol();
        self.derivs.push(DerivVar { of: idx, symbol });
        Ok(symbol)
    }

    /// Symbol standing for the time parameter `t` in path constraint bodies
    /// and measure operands.
    pub fn time(&mut self) -> VarId {
        if let Some(t) = self.time_symbol {
            return t;
        }
        let t = self.fresh_symbol();
        self.time_symbol = Some(t);
        t
    }

    pub fn path(&mut self, body: Expression, sense: Sense, rhs: f64) {
        self.paths.push(PathConstraint { body, sense, rhs });
    }

    pub fn point(&mut self, body: Expression, at: f64, sense: Sense, rhs: f64) {
        self.points.push(PointConstraint {
            body,
            at,
            sense,
            rhs,
        });
    }

    pub fn seal(self, objective: MeasureSpec) -> DynModel {
        DynModel {
            domain: self.domain,
            vars: self.vars,
            derivs: self.derivs,
            paths: self.paths,
            points: self.points,
            objective,
            time_symbol: self.time_symbol,
            symbol_count: self.next_symbol,
        }
    }
}

impl DynModel {
    pub fn time_symbol(&self) -> Option<VarId> {
        self.time_symbol
    }

    /// Total count of registered symbols (variables, derivatives, time).
    pub fn symbol_count(&self) -> usize {
        self.symbol_count
    }

    pub fn var_by_name(&self, name: &str) -> Option<&InfiniteVar> {
        self.vars.iter().find(|v| v.name == name)
    }

    /// Check every model invariant; an empty list means the model is sound.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut push = |subject: &str, reason: String| {
            out.push(Diagnostic {
                subject: subject.to_string(),
                reason,
            })
        };
        if !(self.domain.t0 < self.domain.tf) {
            push("domain", format!("t0 {} !< tf {}", self.domain.t0, self.domain.tf));
        }
        for (i, v) in self.vars.iter().enumerate() {
            if v.lower > v.upper {
                push(&v.name, format!("lower {} above upper {}", v.lower, v.upper));
            }
            if v.start < v.lower || v.start > v.upper {
                push(&v.name, format!("start {} outside bounds", v.start));
            }
            if self.vars.iter().skip(i + 1).any(|w| w.name == v.name) {
                push(&v.name, "duplicate variable name".to_string());
            }
        }
        for d in &self.derivs {
            if d.of >= self.vars.len() {
                push("deriv", format!("references variable index {}", d.of));
            }
        }
        let nsym = self.symbol_count;
        let var_symbols: Vec<VarId> = self.vars.iter().map(|v| v.symbol).collect();
        for (k, p) in self.paths.iter().enumerate() {
            if p.body.max_var_index().is_some_and(|m| m >= nsym) {
                push(&format!("path[{k}]"), "references an unregistered symbol".to_string());
            }
        }
        for (k, p) in self.points.iter().enumerate() {
            let subject = format!("point[{k}]");
            if p.at < self.domain.t0 || p.at > self.domain.tf {
                push(&subject, "point time outside domain".to_string());
            }
            if p.body.max_var_index().is_some_and(|m| m >= nsym) {
                push(&subject, "references an unregistered symbol".to_string());
            }
            for idx in p.body.var_indices() {
                if idx < nsym && !var_symbols.contains(&VarId(idx)) {
                    push(
                        &subject,
                        "point bodies may reference infinite variables only".to_string(),
                    );
                    break;
                }
            }
        }
        if self
            .objective
            .operand
            .max_var_index()
            .is_some_and(|m| m >= nsym)
        {
            push("objective", "operand references an unregistered symbol".to_string());
        }
        self.validate_measure(&self.objective.kind, &mut out);
        out
    }

    fn validate_measure(&self, kind: &MeasureKind, out: &mut Vec<Diagnostic>) {
        let mut push = |reason: String| {
            out.push(Diagnostic {
                subject: "objective".to_string(),
                reason,
            })
        };
        if let Some(pdf) = kind.pdf() {
            match &pdf.kind {
                PdfKind::Exponential { gamma } if !(*gamma > 0.0) => {
                    push(format!("exponential pdf requires gamma > 0 (got {gamma})"));
                }
                PdfKind::Custom(e) if e.max_var_index().is_some_and(|m| m > 0) => {
                    push("custom pdf must be an expression in the single symbol t".to_string());
                }
                _ => {}
            }
        }
        match kind {
            MeasureKind::MeanVariance { lambda, .. } if !(*lambda >= 0.0) => {
                push(format!("lambda out of [0, inf) (got {lambda})"));
            }
            MeasureKind::CVaR { alpha, .. } if !(*alpha >= 0.0 && *alpha < 1.0) => {
                push(format!("alpha out of [0,1) (got {alpha})"));
            }
            MeasureKind::Quantile { alpha, .. } if !(*alpha >= 0.0 && *alpha <= 1.0) => {
                push(format!("alpha out of [0,1] (got {alpha})"));
            }
            MeasureKind::Disutility { g, .. } => match g {
                DisutilityG::Smooth(e) if e.max_var_index().is_some_and(|m| m > 0) => {
                    push("disutility g must be an expression in one symbol".to_string());
                }
                DisutilityG::CvarExact { alpha } if !(*alpha >= 0.0 && *alpha < 1.0) => {
                    push(format!("alpha out of [0,1) (got {alpha})"));
                }
                _ => {}
            },
            _ => {}
        }
    }
}

/// SEIR pandemic-control parameters. Defaults reproduce the case study:
/// infection/recovery/incubation rates, initial populations summing to one,
/// isolation-policy cap 0.8, infectious cap 0.02, horizon [0, 200].
#[derive(Debug, Clone, PartialEq)]
pub struct SeirParams {
    pub beta: f64,
    pub gamma: f64,
    pub xi: f64,
    pub s0: f64,
    pub e0: f64,
    pub i0: f64,
    pub r0: f64,
    pub yu_max: f64,
    pub yi_max: f64,
    pub t0: f64,
    pub tf: f64,
    /// Bound the s/e/r states to [0, 1] (harmless tightening; disable to
    /// leave them free).
    pub bound_states: bool,
}

impl Default for SeirParams {
    fn default() -> Self {
        SeirParams {
            beta: 0.727,
            gamma: 0.303,
            xi: 0.3,
            s0: 1.0 - 1e-5,
            e0: 1e-5,
            i0: 0.0,
            r0: 0.0,
            yu_max: 0.8,
            yi_max: 0.02,
            t0: 0.0,
            tf: 200.0,
            bound_states: true,
        }
    }
}

/// Build the SEIR isolation-policy control problem: four ODE states, one
/// bounded control `y_u`, initial conditions at `t0`, infectious cap as a
/// variable bound, and `measure` applied to the operand `y_u`.
pub fn build_seir(params: &SeirParams, measure: MeasureKind) -> Result<DynModel, ModelError> {
    for (name, v) in [
        ("s0", params.s0),
        ("e0", params.e0),
        ("i0", params.i0),
        ("r0", params.r0),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(ModelError::Param(format!("{name} = {v} outside [0, 1]")));
        }
    }
    if !(params.yu_max > 0.0 && params.yu_max <= 1.0) {
        return Err(ModelError::Param(format!(
            "yu_max = {} outside (0, 1]",
            params.yu_max
        )));
    }
    if !(params.yi_max > 0.0 && params.yi_max <= 1.0) {
        return Err(ModelError::Param(format!(
            "yi_max = {} outside (0, 1]",
            params.yi_max
        )));
    }

    let mut mb = ModelBuilder::new(params.t0, params.tf)?;
    let (state_lo, state_hi) = if params.bound_states {
        (0.0, 1.0)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    let ys = mb.var("y_s", state_lo, state_hi, params.s0);
    let ye = mb.var("y_e", state_lo, state_hi, params.e0);
    let yi = mb.var("y_i", if params.bound_states { 0.0 } else { f64::NEG_INFINITY }, params.yi_max, params.i0);
    let yr = mb.var("y_r", state_lo, state_hi, params.r0);
    // Control starts at the midpoint of its box.
    let yu = mb.var("y_u", 0.0, params.yu_max, params.yu_max / 2.0);
    let dys = mb.deriv(ys)?;
    let dye = mb.deriv(ye)?;
    let dyi = mb.deriv(yi)?;
    let dyr = mb.deriv(yr)?;

    let mut b = ExprBuilder::new();
    let (vys, vye, vyi, vyu) = (b.var(ys), b.var(ye), b.var(yi), b.var(yu));
    let (vdys, vdye, vdyi, vdyr) = (b.var(dys), b.var(dye), b.var(dyi), b.var(dyr));
    let one = b.constant(1.0);
    let beta = b.constant(params.beta);
    let gamma = b.constant(params.gamma);
    let xi = b.constant(params.xi);

    // Infection terms share association order so the four right-hand sides
    // cancel exactly: (y_u - 1) b y_s y_i = -((1 - y_u) b y_s y_i) bitwise.
    let yu_m1 = b.sub(vyu, one);
    let infect_neg = {
        let t = b.mul(yu_m1, beta);
        let t = b.mul(t, vys);
        b.mul(t, vyi)
    };
    let one_m_yu = b.sub(one, vyu);
    let infect_pos = {
        let t = b.mul(one_m_yu, beta);
        let t = b.mul(t, vys);
        b.mul(t, vyi)
    };
    let xi_ye = b.mul(xi, vye);
    let gamma_yi = b.mul(gamma, vyi);

    // d y_s/dt = (y_u - 1) b y_s y_i
    let rhs_s = infect_neg;
    // d y_e/dt = (1 - y_u) b y_s y_i - xi y_e
    let rhs_e = b.sub(infect_pos, xi_ye);
    // d y_i/dt = xi y_e - gamma y_i
    let rhs_i = b.sub(xi_ye, gamma_yi);
    // d y_r/dt = gamma y_i
    let rhs_r = gamma_yi;

    let mut mb = mb;
    for (d, rhs) in [(vdys, rhs_s), (vdye, rhs_e), (vdyi, rhs_i), (vdyr, rhs_r)] {
        let body = b.sub(d, rhs);
        mb.path(b.finish(body), Sense::Eq, 0.0);
    }
    for (sym, value) in [(ys, params.s0), (ye, params.e0), (yi, params.i0), (yr, params.r0)] {
        mb.point(Expression::var(sym), params.t0, Sense::Eq, value);
    }

    let spec = MeasureSpec {
        kind: measure,
        operand: Expression::var(yu),
    };
    Ok(mb.seal(spec))
}
