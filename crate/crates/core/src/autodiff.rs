//! Scalar expression tapes with reverse-mode differentiation.
//!
//! A [`Tape`] is built once with a [`TapeBuilder`] and then evaluated many
//! times with different parameter and input values. The tape itself is
//! immutable; all numeric scratch lives in an [`Evaluator`], so one tape can
//! be shared across threads with an evaluator per thread.
//!
//! Subgradient conventions at kinks: `relu'(0) = 0`, `abs'(0) = 0`,
//! `step' = 0` everywhere, and `min`/`max` route the whole adjoint to the
//! attaining child, the first child on exact ties.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("expected {expected} {kind} values, got {found}")]
    Arity {
        kind: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{kind} `{name}` is not bound")]
    Unbound { kind: &'static str, name: String },
    #[error("non-finite value {value} at node {node} ({path})")]
    NonFinite { node: usize, value: f64, path: String },
    #[error("backward called before forward")]
    NotEvaluated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Const(f64),
    Param(u32),
    Input(u32),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Min(NodeId, NodeId),
    Max(NodeId, NodeId),
    Neg(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    /// Heaviside step: 1 for `x >= 0`, else 0.
    Step(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Const(_) => "const",
            Op::Param(_) => "param",
            Op::Input(_) => "input",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Min(..) => "min",
            Op::Max(..) => "max",
            Op::Neg(_) => "neg",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Abs(_) => "abs",
            Op::Step(_) => "step",
        }
    }

    pub fn children(&self) -> Vec<NodeId> {
        match *self {
            Op::Const(_) | Op::Param(_) | Op::Input(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Min(a, b) | Op::Max(a, b) => {
                vec![a, b]
            }
            Op::Neg(a) | Op::Log(a) | Op::Exp(a) | Op::Tanh(a) | Op::Relu(a) | Op::Abs(a) | Op::Step(a) => vec![a],
        }
    }

    fn key(&self) -> (u8, u64, u32) {
        match *self {
            Op::Const(c) => (0, c.to_bits(), 0),
            Op::Param(i) => (1, i as u64, 0),
            Op::Input(i) => (2, i as u64, 0),
            Op::Add(a, b) => (3, a.0 as u64, b.0),
            Op::Sub(a, b) => (4, a.0 as u64, b.0),
            Op::Mul(a, b) => (5, a.0 as u64, b.0),
            Op::Div(a, b) => (6, a.0 as u64, b.0),
            Op::Min(a, b) => (7, a.0 as u64, b.0),
            Op::Max(a, b) => (8, a.0 as u64, b.0),
            Op::Neg(a) => (9, a.0 as u64, 0),
            Op::Log(a) => (10, a.0 as u64, 0),
            Op::Exp(a) => (11, a.0 as u64, 0),
            Op::Tanh(a) => (12, a.0 as u64, 0),
            Op::Relu(a) => (13, a.0 as u64, 0),
            Op::Abs(a) => (14, a.0 as u64, 0),
            Op::Step(a) => (15, a.0 as u64, 0),
        }
    }
}

/// Records nodes in topological order, sharing identical subexpressions.
#[derive(Debug, Default)]
pub struct TapeBuilder {
    ops: Vec<Op>,
    params: Vec<String>,
    param_nodes: Vec<NodeId>,
    inputs: Vec<String>,
    input_nodes: Vec<NodeId>,
    shared: HashMap<(u8, u64, u32), NodeId>,
    by_name: HashMap<(bool, String), NodeId>,
}

impl TapeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let key = op.key();
        if let Some(&id) = self.shared.get(&key) {
            return id;
        }
        let id = NodeId(self.ops.len() as u32);
        self.ops.push(op);
        self.shared.insert(key, id);
        id
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Op::Const(value))
    }

    /// A named trainable parameter. Asking for the same name twice returns
    /// the same node.
    pub fn param(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.by_name.get(&(true, name.to_string())) {
            return id;
        }
        let id = self.push(Op::Param(self.params.len() as u32));
        self.params.push(name.to_string());
        self.param_nodes.push(id);
        self.by_name.insert((true, name.to_string()), id);
        id
    }

    /// A named external input, rebound on every evaluation.
    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.by_name.get(&(false, name.to_string())) {
            return id;
        }
        let id = self.push(Op::Input(self.inputs.len() as u32));
        self.inputs.push(name.to_string());
        self.input_nodes.push(id);
        self.by_name.insert((false, name.to_string()), id);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }
    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Min(a, b))
    }
    pub fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Max(a, b))
    }
    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a))
    }
    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a))
    }
    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }
    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Abs(a))
    }
    pub fn step(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Step(a))
    }

    /// Left fold with `add`; a constant zero for an empty slice.
    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        match terms.split_first() {
            None => self.constant(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    pub fn finish(self, root: NodeId) -> Tape {
        Tape {
            ops: self.ops,
            params: self.params,
            param_nodes: self.param_nodes,
            inputs: self.inputs,
            input_nodes: self.input_nodes,
            root,
        }
    }
}

/// A frozen expression graph with a scalar root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    ops: Vec<Op>,
    params: Vec<String>,
    param_nodes: Vec<NodeId>,
    inputs: Vec<String>,
    input_nodes: Vec<NodeId>,
    root: NodeId,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn param_names(&self) -> &[String] {
        &self.params
    }

    pub fn input_names(&self) -> &[String] {
        &self.inputs
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator {
            tape: self,
            values: vec![0.0; self.ops.len()],
            adjoints: vec![0.0; self.ops.len()],
            evaluated: false,
        }
    }

    /// Evaluate the root with freshly allocated scratch.
    pub fn eval(&self, params: &[f64], inputs: &[f64]) -> Result<f64, AutodiffError> {
        self.evaluator().forward(params, inputs)
    }

    /// Arrange named values in registry order.
    pub fn bind(
        names: &[String],
        kind: &'static str,
        values: &HashMap<String, f64>,
    ) -> Result<Vec<f64>, AutodiffError> {
        names
            .iter()
            .map(|n| {
                values.get(n).copied().ok_or_else(|| AutodiffError::Unbound {
                    kind,
                    name: n.clone(),
                })
            })
            .collect()
    }

    /// Forward pass with values bound by name.
    pub fn forward_named(
        &self,
        params: &HashMap<String, f64>,
        inputs: &HashMap<String, f64>,
    ) -> Result<f64, AutodiffError> {
        let p = Self::bind(&self.params, "param", params)?;
        let i = Self::bind(&self.inputs, "input", inputs)?;
        self.eval(&p, &i)
    }

    /// Text dump, one s-expression per node, then the root.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, op) in self.ops.iter().enumerate() {
            let _ = match op {
                Op::Const(c) => writeln!(out, "({i} const {c:e})"),
                Op::Param(p) => writeln!(out, "({i} param {})", self.params[*p as usize]),
                Op::Input(p) => writeln!(out, "({i} input {})", self.inputs[*p as usize]),
                other => {
                    let kids: Vec<String> = other.children().iter().map(|c| c.to_string()).collect();
                    writeln!(out, "({i} {} {})", other.name(), kids.join(" "))
                }
            };
        }
        let _ = writeln!(out, "(root {})", self.root);
        out
    }

    // Chain of `id:op` from the root down to `target`.
    fn path_to(&self, target: NodeId) -> String {
        fn search(tape: &Tape, at: NodeId, target: NodeId, trail: &mut Vec<NodeId>) -> bool {
            trail.push(at);
            if at == target {
                return true;
            }
            for c in tape.ops[at.index()].children() {
                if c >= target && search(tape, c, target, trail) {
                    return true;
                }
            }
            trail.pop();
            false
        }
        let mut trail = Vec::new();
        if !search(self, self.root, target, &mut trail) {
            trail = vec![target];
        }
        trail
            .iter()
            .map(|n| format!("{}:{}", n, self.ops[n.index()].name()))
            .collect::<Vec<_>>()
            .join(" > ")
    }
}

/// Adjoints for every registered parameter, keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    names: Vec<String>,
    values: Vec<f64>,
}

impl Gradient {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

/// Caller-owned value and adjoint buffers for one tape.
pub struct Evaluator<'t> {
    tape: &'t Tape,
    values: Vec<f64>,
    adjoints: Vec<f64>,
    evaluated: bool,
}

impl Evaluator<'_> {
    pub fn forward(&mut self, params: &[f64], inputs: &[f64]) -> Result<f64, AutodiffError> {
        let tape = self.tape;
        if params.len() != tape.params.len() {
            return Err(AutodiffError::Arity {
                kind: "param",
                expected: tape.params.len(),
                found: params.len(),
            });
        }
        if inputs.len() != tape.inputs.len() {
            return Err(AutodiffError::Arity {
                kind: "input",
                expected: tape.inputs.len(),
                found: inputs.len(),
            });
        }
        self.evaluated = false;
        let v = &mut self.values;
        for (i, op) in tape.ops.iter().enumerate() {
            let x = match *op {
                Op::Const(c) => c,
                Op::Param(p) => params[p as usize],
                Op::Input(p) => inputs[p as usize],
                Op::Add(a, b) => v[a.index()] + v[b.index()],
                Op::Sub(a, b) => v[a.index()] - v[b.index()],
                Op::Mul(a, b) => v[a.index()] * v[b.index()],
                Op::Div(a, b) => v[a.index()] / v[b.index()],
                Op::Min(a, b) => {
                    let (x, y) = (v[a.index()], v[b.index()]);
                    if x <= y { x } else { y }
                }
                Op::Max(a, b) => {
                    let (x, y) = (v[a.index()], v[b.index()]);
                    if x >= y { x } else { y }
                }
                Op::Neg(a) => -v[a.index()],
                Op::Log(a) => v[a.index()].ln(),
                Op::Exp(a) => v[a.index()].exp(),
                Op::Tanh(a) => v[a.index()].tanh(),
                Op::Relu(a) => v[a.index()].max(0.0),
                Op::Abs(a) => v[a.index()].abs(),
                Op::Step(a) => {
                    if v[a.index()] >= 0.0 { 1.0 } else { 0.0 }
                }
            };
            if !x.is_finite() {
                return Err(AutodiffError::NonFinite {
                    node: i,
                    value: x,
                    path: tape.path_to(NodeId(i as u32)),
                });
            }
            v[i] = x;
        }
        self.evaluated = true;
        Ok(v[tape.root.index()])
    }

    pub fn value(&self, node: NodeId) -> f64 {
        self.values[node.index()]
    }

    fn propagate(&mut self) -> Result<(), AutodiffError> {
        if !self.evaluated {
            return Err(AutodiffError::NotEvaluated);
        }
        let tape = self.tape;
        let (v, g) = (&self.values, &mut self.adjoints);
        g.iter_mut().for_each(|x| *x = 0.0);
        g[tape.root.index()] = 1.0;
        for i in (0..=tape.root.index()).rev() {
            let gi = g[i];
            if gi == 0.0 {
                continue;
            }
            match tape.ops[i] {
                Op::Const(_) | Op::Param(_) | Op::Input(_) | Op::Step(_) => {}
                Op::Add(a, b) => {
                    g[a.index()] += gi;
                    g[b.index()] += gi;
                }
                Op::Sub(a, b) => {
                    g[a.index()] += gi;
                    g[b.index()] -= gi;
                }
                Op::Mul(a, b) => {
                    g[a.index()] += gi * v[b.index()];
                    g[b.index()] += gi * v[a.index()];
                }
                Op::Div(a, b) => {
                    let y = v[b.index()];
                    g[a.index()] += gi / y;
                    g[b.index()] -= gi * v[a.index()] / (y * y);
                }
                Op::Min(a, b) => {
                    let t = if v[a.index()] <= v[b.index()] { a } else { b };
                    g[t.index()] += gi;
                }
                Op::Max(a, b) => {
                    let t = if v[a.index()] >= v[b.index()] { a } else { b };
                    g[t.index()] += gi;
                }
                Op::Neg(a) => g[a.index()] -= gi,
                Op::Log(a) => g[a.index()] += gi / v[a.index()],
                Op::Exp(a) => g[a.index()] += gi * v[i],
                Op::Tanh(a) => g[a.index()] += gi * (1.0 - v[i] * v[i]),
                Op::Relu(a) => {
                    if v[a.index()] > 0.0 {
                        g[a.index()] += gi;
                    }
                }
                Op::Abs(a) => {
                    let x = v[a.index()];
                    if x > 0.0 {
                        g[a.index()] += gi;
                    } else if x < 0.0 {
                        g[a.index()] -= gi;
                    }
                }
            }
        }
        Ok(())
    }

    /// Reverse pass; adjoints of the root with respect to every parameter.
    pub fn backward(&mut self) -> Result<Gradient, AutodiffError> {
        self.propagate()?;
        let tape = self.tape;
        let values = tape.param_nodes.iter().map(|n| self.adjoints[n.index()]).collect();
        Ok(Gradient {
            names: tape.params.clone(),
            values,
        })
    }

    /// Reverse pass that adds `scale *` each parameter adjoint into `out`.
    pub fn backward_accumulate(&mut self, out: &mut [f64], scale: f64) -> Result<(), AutodiffError> {
        self.propagate()?;
        for (o, n) in out.iter_mut().zip(&self.tape.param_nodes) {
            *o += scale * self.adjoints[n.index()];
        }
        Ok(())
    }

    /// Input adjoints from the most recent reverse pass.
    pub fn input_adjoints(&self) -> Vec<f64> {
        self.tape.input_nodes.iter().map(|n| self.adjoints[n.index()]).collect()
    }
}

/// Outcome of comparing reverse-mode adjoints with central differences.
#[derive(Debug, Clone, PartialEq)]
pub enum GradCheck {
    /// Largest `|analytic - numeric| / max(1, |analytic|)` over parameters.
    Checked { max_rel_error: f64 },
    /// The point lies within `10h` of a kink; these nodes are responsible.
    Skipped { kinks: Vec<NodeId> },
}

impl GradCheck {
    pub fn max_rel_error(&self) -> Option<f64> {
        match self {
            GradCheck::Checked { max_rel_error } => Some(*max_rel_error),
            GradCheck::Skipped { .. } => None,
        }
    }
}

/// Compare [`Evaluator::backward`] against central finite differences with
/// step `h` in every parameter.
pub fn check_gradient(tape: &Tape, params: &[f64], inputs: &[f64], h: f64) -> Result<GradCheck, AutodiffError> {
    let mut ev = tape.evaluator();
    ev.forward(params, inputs)?;
    let near = |x: f64| x.abs() < 10.0 * h;
    let kinks: Vec<NodeId> = tape
        .ops
        .iter()
        .enumerate()
        .filter(|(_, op)| match **op {
            Op::Min(a, b) | Op::Max(a, b) => near(ev.value(a) - ev.value(b)),
            Op::Relu(a) | Op::Abs(a) | Op::Step(a) => near(ev.value(a)),
            _ => false,
        })
        .map(|(i, _)| NodeId(i as u32))
        .collect();
    if !kinks.is_empty() {
        return Ok(GradCheck::Skipped { kinks });
    }
    let analytic = ev.backward()?;
    let mut worst = 0.0f64;
    let mut shifted = params.to_vec();
    for (k, &a) in analytic.values().iter().enumerate() {
        shifted[k] = params[k] + h;
        let up = ev.forward(&shifted, inputs)?;
        shifted[k] = params[k] - h;
        let down = ev.forward(&shifted, inputs)?;
        shifted[k] = params[k];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(GradCheck::Checked { max_rel_error: worst })
}
