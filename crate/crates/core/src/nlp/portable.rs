//! Portable JSON document for NLP instances, for archival and cross-checking
//! against external solvers.
//!
//! Layout: `{version, numVars, lower[], upper[], start[], nodes[][],
//! objectiveRoot, constraints[{root, sense, rhs}]}`. All expression graphs
//! share one node pool in child-before-parent order; each node is a tagged
//! array like `["const", 2.0]`, `["var", 3]`, `["add", 0, 1]`, with the
//! lowercase primitive names as operator tags. Unbounded box entries are
//! `null`.

use std::io;

use serde_json::{json, Map, Value};

use crate::expr::{BinaryOp, ExprBuilder, Expression, Node, UnaryOp, VarId};
use crate::model::Sense;
use crate::transcribe::{NlpConstraint, NlpInstance};

use super::NlpError;

fn bound_to_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn unary_tag(op: UnaryOp) -> &'static str {
    match op {
        UnaryOp::Neg => "neg",
        UnaryOp::Exp => "exp",
        UnaryOp::Log => "log",
        UnaryOp::Sin => "sin",
        UnaryOp::Cos => "cos",
    }
}

fn binary_tag(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
        BinaryOp::Pow => "pow",
    }
}

fn sense_tag(s: Sense) -> &'static str {
    match s {
        Sense::Le => "le",
        Sense::Eq => "eq",
        Sense::Ge => "ge",
    }
}

/// Serialize `nlp` as a self-contained JSON document.
pub fn export_nlp<W: io::Write>(nlp: &NlpInstance, mut w: W) -> Result<(), NlpError> {
    let mut pool = ExprBuilder::new();
    let obj_root = pool.embed(&nlp.objective).index();
    let con_roots: Vec<usize> = nlp
        .constraints
        .iter()
        .map(|c| pool.embed(&c.body).index())
        .collect();

    let mut nodes = Vec::with_capacity(pool.nodes().len());
    for node in pool.nodes() {
        let v = match *node {
            Node::Constant(c) => {
                if !c.is_finite() {
                    return Err(NlpError::Format(format!(
                        "non-finite constant {c} cannot be serialized"
                    )));
                }
                json!(["const", c])
            }
            Node::Var(VarId(i)) => json!(["var", i]),
            Node::Unary(op, a) => json!([unary_tag(op), a]),
            Node::Binary(op, a, b) => json!([binary_tag(op), a, b]),
        };
        nodes.push(v);
    }

    let constraints: Vec<Value> = nlp
        .constraints
        .iter()
        .zip(&con_roots)
        .map(|(c, &root)| {
            json!({
                "root": root,
                "sense": sense_tag(c.sense),
                "rhs": c.rhs,
            })
        })
        .collect();

    let doc = json!({
        "version": 1,
        "numVars": nlp.num_vars,
        "lower": nlp.lower.iter().map(|&v| bound_to_json(v)).collect::<Vec<_>>(),
        "upper": nlp.upper.iter().map(|&v| bound_to_json(v)).collect::<Vec<_>>(),
        "start": nlp.start.clone(),
        "nodes": nodes,
        "objectiveRoot": obj_root,
        "constraints": constraints,
    });
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| NlpError::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

fn as_array<'a>(v: &'a Value, field: &str) -> Result<&'a Vec<Value>, NlpError> {
    v.as_array()
        .ok_or_else(|| NlpError::Format(format!("`{field}` must be an array")))
}

fn as_usize(v: &Value, field: &str) -> Result<usize, NlpError> {
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| NlpError::Format(format!("`{field}` must be a nonnegative integer")))
}

fn as_f64(v: &Value, field: &str) -> Result<f64, NlpError> {
    v.as_f64()
        .ok_or_else(|| NlpError::Format(format!("`{field}` must be a number")))
}

fn bound_from_json(v: &Value, field: &str, sign: f64) -> Result<f64, NlpError> {
    if v.is_null() {
        Ok(sign * f64::INFINITY)
    } else {
        as_f64(v, field)
    }
}

fn child(v: &Value, at: usize, limit: usize) -> Result<usize, NlpError> {
    let idx = as_usize(v, "node child")?;
    let _ = at;
    if idx >= limit {
        return Err(NlpError::Format(format!(
            "node child {idx} does not precede its parent {limit}"
        )));
    }
    Ok(idx)
}

/// Parse a document produced by [`export_nlp`]. The reconstructed instance
/// has the same counts, bounds, starts, senses, and expression semantics.
pub fn import_nlp<R: io::Read>(r: R) -> Result<NlpInstance, NlpError> {
    let doc: Value = serde_json::from_reader(r).map_err(|e| NlpError::Format(e.to_string()))?;
    let obj: &Map<String, Value> = doc
        .as_object()
        .ok_or_else(|| NlpError::Format("document must be a JSON object".into()))?;
    let get = |k: &str| -> Result<&Value, NlpError> {
        obj.get(k)
            .ok_or_else(|| NlpError::Format(format!("missing field `{k}`")))
    };

    let version = as_usize(get("version")?, "version")?;
    if version != 1 {
        return Err(NlpError::Format(format!("unsupported version {version}")));
    }
    let num_vars = as_usize(get("numVars")?, "numVars")?;

    let lower: Vec<f64> = as_array(get("lower")?, "lower")?
        .iter()
        .map(|v| bound_from_json(v, "lower", -1.0))
        .collect::<Result<_, _>>()?;
    let upper: Vec<f64> = as_array(get("upper")?, "upper")?
        .iter()
        .map(|v| bound_from_json(v, "upper", 1.0))
        .collect::<Result<_, _>>()?;
    let start: Vec<f64> = as_array(get("start")?, "start")?
        .iter()
        .map(|v| as_f64(v, "start"))
        .collect::<Result<_, _>>()?;
    if lower.len() != num_vars || upper.len() != num_vars || start.len() != num_vars {
        return Err(NlpError::Format(
            "lower/upper/start lengths must equal numVars".into(),
        ));
    }

    let raw_nodes = as_array(get("nodes")?, "nodes")?;
    let mut pool: Vec<Node> = Vec::with_capacity(raw_nodes.len());
    for (i, rn) in raw_nodes.iter().enumerate() {
        let parts = as_array(rn, "nodes[]")?;
        let tag = parts
            .first()
            .and_then(|t| t.as_str())
            .ok_or_else(|| NlpError::Format(format!("node {i} lacks an operator tag")))?;
        let node = match tag {
            "const" => Node::Constant(as_f64(&parts[1], "const value")?),
            "var" => {
                let idx = as_usize(&parts[1], "var index")?;
                if idx >= num_vars {
                    return Err(NlpError::Format(format!(
                        "var index {idx} out of range for numVars {num_vars}"
                    )));
                }
                Node::Var(VarId(idx))
            }
            "neg" | "exp" | "log" | "sin" | "cos" => {
                let a = child(&parts[1], i, i)?;
                let op = match tag {
                    "neg" => UnaryOp::Neg,
                    "exp" => UnaryOp::Exp,
                    "log" => UnaryOp::Log,
                    "sin" => UnaryOp::Sin,
                    _ => UnaryOp::Cos,
                };
                Node::Unary(op, a)
            }
            "add" | "sub" | "mul" | "div" | "pow" => {
                let a = child(&parts[1], i, i)?;
                let b = child(&parts[2], i, i)?;
                let op = match tag {
                    "add" => BinaryOp::Add,
                    "sub" => BinaryOp::Sub,
                    "mul" => BinaryOp::Mul,
                    "div" => BinaryOp::Div,
                    _ => BinaryOp::Pow,
                };
                if op == BinaryOp::Pow && !matches!(pool[b], Node::Constant(_)) {
                    return Err(NlpError::Format(format!(
                        "pow node {i} requires a constant exponent"
                    )));
                }
                Node::Binary(op, a, b)
            }
            other => {
                return Err(NlpError::Format(format!(
                    "unknown operator tag `{other}` at node {i}"
                )))
            }
        };
        pool.push(node);
    }

    let obj_root = as_usize(get("objectiveRoot")?, "objectiveRoot")?;
    if obj_root >= pool.len() {
        return Err(NlpError::Format("objectiveRoot out of range".into()));
    }
    let objective = Expression::from_pool(&pool, obj_root);

    let mut constraints = Vec::new();
    for (k, rc) in as_array(get("constraints")?, "constraints")?.iter().enumerate() {
        let co = rc
            .as_object()
            .ok_or_else(|| NlpError::Format(format!("constraint {k} must be an object")))?;
        let root = as_usize(
            co.get("root")
                .ok_or_else(|| NlpError::Format(format!("constraint {k} missing `root`")))?,
            "root",
        )?;
        if root >= pool.len() {
            return Err(NlpError::Format(format!("constraint {k} root out of range")));
        }
        let sense = match co.get("sense").and_then(|s| s.as_str()) {
            Some("le") => Sense::Le,
            Some("eq") => Sense::Eq,
            Some("ge") => Sense::Ge,
            _ => {
                return Err(NlpError::Format(format!(
                    "constraint {k} has an invalid `sense`"
                )))
            }
        };
        let rhs = as_f64(
            co.get("rhs")
                .ok_or_else(|| NlpError::Format(format!("constraint {k} missing `rhs`")))?,
            "rhs",
        )?;
        constraints.push(NlpConstraint {
            body: Expression::from_pool(&pool, root),
            sense,
            rhs,
        });
    }

    Ok(NlpInstance::raw(lower, upper, start, objective, constraints))
}
