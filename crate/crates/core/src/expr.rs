//! Expression graphs: the evaluation and differentiation substrate.
//!
//! Expressions are immutable DAGs of arithmetic/transcendental nodes over
//! indexed scalar variables. Shared subexpressions are stored once via
//! hash-consing in [`ExprBuilder`]. Differentiation is reverse-mode: one
//! backward sweep per expression yields the full gradient.

use std::collections::HashMap;

use thiserror::Error;

/// Index of one scalar decision variable within an evaluation context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

impl std::fmt::Display for VarId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// Unary primitives. `max(0, .)` is deliberately absent: nonsmooth terms are
/// handled upstream with auxiliary variables and linear inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
}

/// Binary primitives. `Pow` exponents must be constant nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// One node of an expression DAG. Child indices always precede the parent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Constant(f64),
    Var(VarId),
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
}

/// Evaluation/differentiation failures: domain errors and index errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("log of non-positive argument {arg}")]
    LogNonPositive { arg: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("pow with base {base} and constant exponent {exponent} leaves the real domain")]
    PowDomain { base: f64, exponent: f64 },
    #[error("variable x{index} out of range for input of length {len}")]
    VarOutOfRange { index: usize, len: usize },
}

/// Substitution target for [`Expression::map_vars`].
#[derive(Debug, Clone, Copy)]
pub enum VarSubst {
    Var(VarId),
    Const(f64),
}

/// Immutable expression DAG in topological order, fully reachable from `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    nodes: Vec<Node>,
    root: usize,
}

/// Reference to a node in an [`ExprBuilder`]; only valid for that builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef(usize);

impl NodeRef {
    /// Position within the builder's node pool.
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum NodeKey {
    Constant(u64),
    Var(usize),
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
}

/// Hash-consing builder: structurally identical subexpressions share one node.
#[derive(Debug, Default)]
pub struct ExprBuilder {
    nodes: Vec<Node>,
    memo: HashMap<NodeKey, usize>,
}

impl ExprBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// All nodes interned so far, in creation order (children first).
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    fn intern(&mut self, key: NodeKey, node: Node) -> NodeRef {
        if let Some(&idx) = self.memo.get(&key) {
            return NodeRef(idx);
        }
        let idx = self.nodes.len();
        self.nodes.push(node);
        self.memo.insert(key, idx);
        NodeRef(idx)
    }

    pub fn constant(&mut self, value: f64) -> NodeRef {
        self.intern(NodeKey::Constant(value.to_bits()), Node::Constant(value))
    }

    pub fn var(&mut self, id: VarId) -> NodeRef {
        self.intern(NodeKey::Var(id.0), Node::Var(id))
    }

    fn unary(&mut self, op: UnaryOp, child: NodeRef) -> NodeRef {
        self.intern(NodeKey::Unary(op, child.0), Node::Unary(op, child.0))
    }

    fn binary(&mut self, op: BinaryOp, left: NodeRef, right: NodeRef) -> NodeRef {
        self.intern(
            NodeKey::Binary(op, left.0, right.0),
            Node::Binary(op, left.0, right.0),
        )
    }

    pub fn neg(&mut self, a: NodeRef) -> NodeRef {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn exp(&mut self, a: NodeRef) -> NodeRef {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: NodeRef) -> NodeRef {
        self.unary(UnaryOp::Log, a)
    }

    pub fn sin(&mut self, a: NodeRef) -> NodeRef {
        self.unary(UnaryOp::Sin, a)
    }

    pub fn cos(&mut self, a: NodeRef) -> NodeRef {
        self.unary(UnaryOp::Cos, a)
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        self.binary(BinaryOp::Div, a, b)
    }

    /// Power with a constant exponent (the only `pow` form supported).
    pub fn pow(&mut self, base: NodeRef, exponent: f64) -> NodeRef {
        let e = self.constant(exponent);
        self.binary(BinaryOp::Pow, base, e)
    }

    /// Left-fold sum of `terms`; empty input yields the constant 0.
    pub fn sum<I: IntoIterator<Item = NodeRef>>(&mut self, terms: I) -> NodeRef {
        let mut iter = terms.into_iter();
        let first = match iter.next() {
            Some(t) => t,
            None => return self.constant(0.0),
        };
        iter.fold(first, |acc, t| self.add(acc, t))
    }

    /// Scale a node by a constant, folding the trivial factors 1 and -1.
    pub fn scale(&mut self, coeff: f64, term: NodeRef) -> NodeRef {
        if coeff == 1.0 {
            term
        } else if coeff == -1.0 {
            self.neg(term)
        } else {
            let c = self.constant(coeff);
            self.mul(c, term)
        }
    }

    /// Copy `e` into this builder verbatim, keeping its variable indices.
    pub fn embed(&mut self, e: &Expression) -> NodeRef {
        let mut mapped = Vec::with_capacity(e.nodes.len());
        for node in &e.nodes {
            let r = match *node {
                Node::Constant(c) => self.constant(c),
                Node::Var(v) => self.var(v),
                Node::Unary(op, a) => self.unary(op, mapped[a]),
                Node::Binary(op, a, b) => self.binary(op, mapped[a], mapped[b]),
            };
            mapped.push(r);
        }
        mapped[e.root]
    }

    /// Copy `g` into this builder, replacing `g`'s `Var(i)` with `args[i]`.
    /// Panics if `g` references a variable index not covered by `args`.
    pub fn inline(&mut self, g: &Expression, args: &[NodeRef]) -> NodeRef {
        let mut mapped = Vec::with_capacity(g.nodes.len());
        for node in &g.nodes {
            let r = match *node {
                Node::Constant(c) => self.constant(c),
                Node::Var(VarId(i)) => args[i],
                Node::Unary(op, a) => self.unary(op, mapped[a]),
                Node::Binary(op, a, b) => self.binary(op, mapped[a], mapped[b]),
            };
            mapped.push(r);
        }
        mapped[g.root]
    }

    /// Extract the subgraph reachable from `root` as a standalone expression.
    pub fn finish(&self, root: NodeRef) -> Expression {
        let mut reachable = vec![false; self.nodes.len()];
        let mut stack = vec![root.0];
        while let Some(i) = stack.pop() {
            if reachable[i] {
                continue;
            }
            reachable[i] = true;
            match self.nodes[i] {
                Node::Constant(_) | Node::Var(_) => {}
                Node::Unary(_, a) => stack.push(a),
                Node::Binary(_, a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
            }
        }
        // Ascending index order preserves the child-before-parent invariant.
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !reachable[i] {
                continue;
            }
            remap[i] = nodes.len();
            nodes.push(match *node {
                Node::Constant(c) => Node::Constant(c),
                Node::Var(v) => Node::Var(v),
                Node::Unary(op, a) => Node::Unary(op, remap[a]),
                Node::Binary(op, a, b) => Node::Binary(op, remap[a], remap[b]),
            });
        }
        Expression {
            root: remap[root.0],
            nodes,
        }
    }
}

/// Caller-owned scratch buffers; one per concurrent evaluator.
#[derive(Debug, Default)]
pub struct Workspace {
    values: Vec<f64>,
    adjoints: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }
}

fn pow_value(base: f64, exponent: f64) -> Result<f64, EvalError> {
    if base < 0.0 && exponent.fract() != 0.0 {
        return Err(EvalError::PowDomain { base, exponent });
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(EvalError::PowDomain { base, exponent });
    }
    Ok(base.powf(exponent))
}

// d/dx x^c = c*x^(c-1); singular at x = 0 for 0 < c < 1.
fn pow_partial(base: f64, exponent: f64) -> Result<f64, EvalError> {
    if exponent == 0.0 {
        return Ok(0.0);
    }
    if exponent == 1.0 {
        return Ok(1.0);
    }
    if base == 0.0 && exponent < 1.0 {
        return Err(EvalError::PowDomain { base, exponent });
    }
    Ok(exponent * pow_value(base, exponent - 1.0)?)
}

impl Expression {
    /// Extract the subgraph of `pool` reachable from `root` as a standalone
    /// expression. The pool must already be topologically ordered.
    pub(crate) fn from_pool(pool: &[Node], root: usize) -> Expression {
        let mut b = ExprBuilder::new();
        let mut mapped = Vec::with_capacity(pool.len());
        for node in pool {
            let r = match *node {
                Node::Constant(c) => b.constant(c),
                Node::Var(v) => b.var(v),
                Node::Unary(op, a) => b.unary(op, mapped[a]),
                Node::Binary(op, a, bb) => b.binary(op, mapped[a], mapped[bb]),
            };
            mapped.push(r);
        }
        b.finish(mapped[root])
    }

    /// Single-node constant expression.
    pub fn constant(value: f64) -> Self {
        Expression {
            nodes: vec![Node::Constant(value)],
            root: 0,
        }
    }

    /// Single-node variable expression.
    pub fn var(id: VarId) -> Self {
        Expression {
            nodes: vec![Node::Var(id)],
            root: 0,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Root node, when the expression is a single constant or variable.
    pub fn as_single_var(&self) -> Option<VarId> {
        match self.nodes[self.root] {
            Node::Var(v) => Some(v),
            _ => None,
        }
    }

    /// Sorted, deduplicated indices of the variables this expression reads.
    /// This is the structural sparsity pattern: it does not depend on the
    /// evaluation point.
    pub fn var_indices(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Var(VarId(i)) => Some(*i),
                _ => None,
            })
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Largest variable index referenced, if any.
    pub fn max_var_index(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Var(VarId(i)) => Some(*i),
                _ => None,
            })
            .max()
    }

    /// Rebuild with every variable substituted by another variable or a
    /// constant. Used by transcription to instantiate symbolic bodies on a
    /// support grid.
    pub fn map_vars<F: FnMut(VarId) -> VarSubst>(&self, mut f: F) -> Expression {
        let mut b = ExprBuilder::new();
        let mut mapped = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let r = match *node {
                Node::Constant(c) => b.constant(c),
                Node::Var(v) => match f(v) {
                    VarSubst::Var(w) => b.var(w),
                    VarSubst::Const(c) => b.constant(c),
                },
                Node::Unary(op, a) => {
                    let a = mapped[a];
                    b.unary(op, a)
                }
                Node::Binary(op, a, bb) => {
                    let (a, bb) = (mapped[a], mapped[bb]);
                    b.binary(op, a, bb)
                }
            };
            mapped.push(r);
        }
        b.finish(mapped[self.root])
    }

    fn forward(&self, x: &[f64], values: &mut Vec<f64>) -> Result<f64, EvalError> {
        values.clear();
        values.reserve(self.nodes.len());
        for node in &self.nodes {
            let v = match *node {
                Node::Constant(c) => c,
                Node::Var(VarId(i)) => {
                    if i >= x.len() {
                        return Err(EvalError::VarOutOfRange {
                            index: i,
                            len: x.len(),
                        });
                    }
                    x[i]
                }
                Node::Unary(op, a) => {
                    let a = values[a];
                    match op {
                        UnaryOp::Neg => -a,
                        UnaryOp::Exp => a.exp(),
                        UnaryOp::Log => {
                            if a <= 0.0 {
                                return Err(EvalError::LogNonPositive { arg: a });
                            }
                            a.ln()
                        }
                        UnaryOp::Sin => a.sin(),
                        UnaryOp::Cos => a.cos(),
                    }
                }
                Node::Binary(op, a, b) => {
                    let (a, b) = (values[a], values[b]);
                    match op {
                        BinaryOp::Add => a + b,
                        BinaryOp::Sub => a - b,
                        BinaryOp::Mul => a * b,
                        BinaryOp::Div => {
                            if b == 0.0 {
                                return Err(EvalError::DivisionByZero);
                            }
                            a / b
                        }
                        BinaryOp::Pow => pow_value(a, b)?,
                    }
                }
            };
            values.push(v);
        }
        Ok(values[self.root])
    }

    /// Evaluate at `x`. Deterministic: identical inputs give bit-identical
    /// results.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, EvalError> {
        let mut ws = Workspace::new();
        self.eval_with(x, &mut ws)
    }

    /// Evaluate reusing caller-owned scratch space.
    pub fn eval_with(&self, x: &[f64], ws: &mut Workspace) -> Result<f64, EvalError> {
        self.forward(x, &mut ws.values)
    }

    /// Gradient at `x`, one entry per slot of `x` (zero for variables the
    /// expression does not read).
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; x.len()];
        let mut ws = Workspace::new();
        self.accumulate_gradient(x, 1.0, &mut out, &mut ws)?;
        Ok(out)
    }

    /// Reverse sweep: adds `seed * de/dx_i` into `out[i]` for every variable
    /// and returns the forward value. `out` must cover every referenced index.
    pub fn accumulate_gradient(
        &self,
        x: &[f64],
        seed: f64,
        out: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<f64, EvalError> {
        let value = self.forward(x, &mut ws.values)?;
        let values = &ws.values;
        let adjoints = &mut ws.adjoints;
        adjoints.clear();
        adjoints.resize(self.nodes.len(), 0.0);
        adjoints[self.root] = seed;
        for i in (0..self.nodes.len()).rev() {
            let adj = adjoints[i];
            if adj == 0.0 {
                continue;
            }
            match self.nodes[i] {
                Node::Constant(_) => {}
                Node::Var(VarId(v)) => out[v] += adj,
                Node::Unary(op, a) => {
                    let pa = match op {
                        UnaryOp::Neg => -1.0,
                        UnaryOp::Exp => values[i],
                        UnaryOp::Log => 1.0 / values[a],
                        UnaryOp::Sin => values[a].cos(),
                        UnaryOp::Cos => -values[a].sin(),
                    };
                    adjoints[a] += adj * pa;
                }
                Node::Binary(op, a, b) => match op {
                    BinaryOp::Add => {
                        adjoints[a] += adj;
                        adjoints[b] += adj;
                    }
                    BinaryOp::Sub => {
                        adjoints[a] += adj;
                        adjoints[b] -= adj;
                    }
                    BinaryOp::Mul => {
                        adjoints[a] += adj * values[b];
                        adjoints[b] += adj * values[a];
                    }
                    BinaryOp::Div => {
                        let inv = 1.0 / values[b];
                        adjoints[a] += adj * inv;
                        adjoints[b] -= adj * values[a] * inv * inv;
                    }
                    BinaryOp::Pow => {
                        // Exponent is a constant node; no adjoint flows into it.
                        adjoints[a] += adj * pow_partial(values[a], values[b])?;
                    }
                },
            }
        }
        Ok(value)
    }
}

/// Structurally nonzero Jacobian entries of `rows` at `x`, as sorted
/// `(row, col, value)` triplets. The pattern depends only on which variables
/// each row reads, never on `x`.
pub fn sparse_jacobian(
    rows: &[Expression],
    x: &[f64],
) -> Result<Vec<(usize, usize, f64)>, EvalError> {
    let mut triplets = Vec::new();
    let mut ws = Workspace::new();
    let mut dense = vec![0.0; x.len()];
    for (r, e) in rows.iter().enumerate() {
        let cols = e.var_indices();
        if let Some(&max) = cols.last() {
            if max >= x.len() {
                return Err(EvalError::VarOutOfRange {
                    index: max,
                    len: x.len(),
                });
            }
        }
        for &c in &cols {
            dense[c] = 0.0;
        }
        e.accumulate_gradient(x, 1.0, &mut dense, &mut ws)?;
        for &c in &cols {
            triplets.push((r, c, dense[c]));
            dense[c] = 0.0;
        }
    }
    Ok(triplets)
}
