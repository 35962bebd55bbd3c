//! Relaxing rules into differentiable truth values and losses.
//!
//! A desugared formula is first *softened*: each predicate becomes the model
//! probability for that label (a [`SoftSlot`]) and each connective becomes
//! the corresponding real-valued operator of the chosen [`TNorm`]:
//!
//! | connective | product       | Gödel                   | Łukasiewicz        |
//! |------------|---------------|-------------------------|--------------------|
//! | `!a`       | `1 - a`       | `1 - a`                 | `1 - a`            |
//! | `a & b`    | `a * b`       | `min(a, b)`             | `max(0, a + b - 1)`|
//! | `a \| b`   | `a + b - a*b` | `max(a, b)`             | `min(1, a + b)`    |
//! | `a -> b`   | `min(1, b/a)` | `1` if `b >= a` else `b`| `min(1, 1 - a + b)`|
//!
//! The loss is the negative log of that truth value. Under the product
//! t-norm it is rewritten into log space: products become sums of terms and
//! each residuum `min(1, b/a)` becomes `relu(log a - log b)`. The familiar
//! losses fall out: `true -> gold` gives cross-entropy, and a biconditional
//! between two predicates gives `|log a - log b|`. Other t-norms use the
//! generic `-log(max(eps, truth))`.

mod expr;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, TapeBuilder};
use crate::logic::{desugar, Formula, Label, LabelSet, Rule, RuleSet, Target};

pub use expr::{Expr, ExprDisplay};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before they
/// reach a loss graph.
pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("biconditional reached the softener; desugar first")]
    NotDesugared,
    #[error("rule labels [{rules}] do not match model labels [{model}]")]
    LabelMismatch { rules: String, model: String },
    #[error("malformed probability vector: {0}")]
    MalformedProbabilities(String),
    #[error("no value bound for slot {0}")]
    MissingSlot(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TNorm {
    Product,
    Goedel,
    Lukasiewicz,
}

impl TNorm {
    pub const ALL: [TNorm; 3] = [TNorm::Product, TNorm::Goedel, TNorm::Lukasiewicz];
}

impl fmt::Display for TNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TNorm::Product => "product",
            TNorm::Goedel => "goedel",
            TNorm::Lukasiewicz => "lukasiewicz",
        })
    }
}

impl FromStr for TNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "product" => Ok(TNorm::Product),
            "goedel" | "godel" | "gödel" => Ok(TNorm::Goedel),
            "lukasiewicz" | "łukasiewicz" => Ok(TNorm::Lukasiewicz),
            other => Err(format!("unknown t-norm `{other}` (expected product, goedel or lukasiewicz)")),
        }
    }
}

/// A model probability standing in for one predicate: the probability of
/// `target` on the example formed by the rule variables at `args`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SoftSlot {
    pub args: Vec<usize>,
    pub target: Target,
}

impl SoftSlot {
    /// `c(P,H)` style name; the gold label renders as `y*`.
    pub fn render(&self, vars: &[String], labels: &LabelSet) -> String {
        let head = match self.target {
            Target::Label(l) => labels.name(l).to_lowercase(),
            Target::Gold => "y*".to_string(),
        };
        let args: Vec<&str> = self.args.iter().map(|&i| vars[i].as_str()).collect();
        format!("{head}({})", args.join(","))
    }
}

/// Soften a desugared formula, registering the slots it reads.
pub fn soften(f: &Formula, t: TNorm, rule: &Rule, slots: &mut Vec<SoftSlot>) -> Result<Expr, CompileError> {
    let one = || Expr::Const(1.0);
    Ok(match f {
        Formula::Top => one(),
        Formula::Pred(atom) => {
            let slot = SoftSlot {
                args: rule.positions(&atom.args),
                target: atom.target,
            };
            let idx = match slots.iter().position(|s| *s == slot) {
                Some(i) => i,
                None => {
                    slots.push(slot);
                    slots.len() - 1
                }
            };
            Expr::Slot(idx)
        }
        Formula::Not(a) => Expr::sub(one(), soften(a, t, rule, slots)?),
        Formula::And(a, b) => {
            let (a, b) = (soften(a, t, rule, slots)?, soften(b, t, rule, slots)?);
            match t {
                TNorm::Product => Expr::mul(a, b),
                TNorm::Goedel => Expr::min(a, b),
                TNorm::Lukasiewicz => Expr::max(Expr::Const(0.0), Expr::sub(Expr::add(a, b), one())),
            }
        }
        Formula::Or(a, b) => {
            let (a, b) = (soften(a, t, rule, slots)?, soften(b, t, rule, slots)?);
            match t {
                TNorm::Product => Expr::sub(Expr::add(a.clone(), b.clone()), Expr::mul(a, b)),
                TNorm::Goedel => Expr::max(a, b),
                TNorm::Lukasiewicz => Expr::min(one(), Expr::add(a, b)),
            }
        }
        Formula::Implies(a, b) => {
            let top = **a == Formula::Top;
            let (a, b) = (soften(a, t, rule, slots)?, soften(b, t, rule, slots)?);
            // Every residuum of a true antecedent is the consequent itself.
            if top {
                return Ok(b);
            }
            match t {
                TNorm::Product => Expr::min(one(), Expr::div(b, a)),
                TNorm::Goedel => Expr::max(b.clone(), Expr::step(Expr::sub(b, a))),
                TNorm::Lukasiewicz => Expr::min(one(), Expr::add(Expr::sub(one(), a), b)),
            }
        }
        Formula::Iff(..) => return Err(CompileError::NotDesugared),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    /// Fold `relu(u) + relu(-u)` into `|u|` in product losses.
    pub fold_abs: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { fold_abs: true }
    }
}

/// Negative-log loss for a soft truth expression.
pub fn to_loss(truth: &Expr, t: TNorm, options: CompileOptions) -> Expr {
    match t {
        TNorm::Product => {
            let mut terms = Vec::new();
            neglog_terms(truth, &mut terms);
            if options.fold_abs {
                fold_abs(&mut terms);
            }
            terms
                .into_iter()
                .reduce(Expr::add)
                .unwrap_or(Expr::Const(0.0))
        }
        TNorm::Goedel | TNorm::Lukasiewicz => Expr::neg(Expr::log(Expr::max(Expr::Const(PROB_EPS), truth.clone()))),
    }
}

// `min(1, b / a)` as (a, b).
fn residuum(e: &Expr) -> Option<(&Expr, &Expr)> {
    match e {
        Expr::Min(one, q) if one.is_const(1.0) => match &**q {
            Expr::Div(b, a) => Some((a, b)),
            _ => None,
        },
        _ => None,
    }
}

fn neglog_terms(e: &Expr, out: &mut Vec<Expr>) {
    if e.is_const(1.0) {
        return;
    }
    if let Expr::Mul(a, b) = e {
        neglog_terms(a, out);
        neglog_terms(b, out);
    } else if let Some((a, b)) = residuum(e) {
        out.push(Expr::relu(Expr::sub(log_of(a), log_of(b))));
    } else {
        out.push(Expr::neg(log_of(e)));
    }
}

fn log_of(e: &Expr) -> Expr {
    if e.is_const(1.0) {
        return Expr::Const(0.0);
    }
    if let Expr::Mul(a, b) = e {
        return Expr::add(log_of(a), log_of(b));
    }
    if let Some((a, b)) = residuum(e) {
        return Expr::neg(Expr::relu(Expr::sub(log_of(a), log_of(b))));
    }
    Expr::log(e.clone())
}

fn fold_abs(terms: &mut Vec<Expr>) {
    let mut i = 0;
    while i < terms.len() {
        let partner = match &terms[i] {
            Expr::Relu(u) => match &**u {
                Expr::Sub(x, y) => {
                    let mirrored = Expr::relu(Expr::sub((**y).clone(), (**x).clone()));
                    terms.iter().skip(i + 1).position(|t| *t == mirrored).map(|j| j + i + 1)
                }
                _ => None,
            },
            _ => None,
        };
        if let Some(j) = partner {
            terms.remove(j);
            let Expr::Relu(u) = terms[i].clone() else { unreachable!() };
            terms[i] = Expr::Abs(u);
        }
        i += 1;
    }
}

/// One rule compiled under one t-norm: symbolic forms plus two tapes whose
/// inputs are the slot probabilities, in slot order.
#[derive(Debug, Clone)]
pub struct CompiledLoss {
    rule: String,
    arity: usize,
    tnorm: TNorm,
    slots: Vec<SoftSlot>,
    slot_names: Vec<String>,
    truth: Expr,
    loss: Expr,
    truth_graph: Tape,
    loss_graph: Tape,
}

impl CompiledLoss {
    pub fn rule(&self) -> &str {
        &self.rule
    }

    /// Size of the collections the rule ranges over.
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn tnorm(&self) -> TNorm {
        self.tnorm
    }

    pub fn slots(&self) -> &[SoftSlot] {
        &self.slots
    }

    pub fn slot_names(&self) -> &[String] {
        &self.slot_names
    }

    pub fn uses_gold(&self) -> bool {
        self.slots.iter().any(|s| s.target == Target::Gold)
    }

    pub fn truth_expr(&self) -> &Expr {
        &self.truth
    }

    pub fn loss_expr(&self) -> &Expr {
        &self.loss
    }

    pub fn truth_graph(&self) -> &Tape {
        &self.truth_graph
    }

    pub fn loss_graph(&self) -> &Tape {
        &self.loss_graph
    }

    /// Soft truth at the given (already clamped) slot values.
    pub fn truth_value(&self, slots: &[f64]) -> Result<f64, CompileError> {
        Ok(self.truth_graph.eval(&[], slots)?)
    }

    /// Loss at the given (already clamped) slot values.
    pub fn loss_value(&self, slots: &[f64]) -> Result<f64, CompileError> {
        Ok(self.loss_graph.eval(&[], slots)?)
    }

    /// Clamped slot values from per-example probability vectors.
    ///
    /// `probs(args)` returns the probability vector for the example at those
    /// rule positions; `gold(args)` its annotated label.
    pub fn bind<'p>(
        &self,
        mut probs: impl FnMut(&[usize]) -> Option<&'p [f64]>,
        mut gold: impl FnMut(&[usize]) -> Option<Label>,
    ) -> Result<Vec<f64>, CompileError> {
        self.slots
            .iter()
            .zip(&self.slot_names)
            .map(|(slot, name)| {
                let p = probs(&slot.args).ok_or_else(|| CompileError::MissingSlot(name.clone()))?;
                let label = match slot.target {
                    Target::Label(l) => l,
                    Target::Gold => gold(&slot.args).ok_or_else(|| CompileError::MissingSlot(name.clone()))?,
                };
                p.get(label.index())
                    .map(|&v| clamp_prob(v))
                    .ok_or_else(|| CompileError::MissingSlot(name.clone()))
            })
            .collect()
    }

    /// `L_name = <loss>` in readable algebra.
    pub fn render(&self) -> String {
        format!("L_{} = {}", self.rule, self.loss.display(&self.slot_names))
    }

    pub fn render_truth(&self) -> String {
        format!("T_{} = {}", self.rule, self.truth.display(&self.slot_names))
    }

    /// Truth and loss tape dumps, for golden-file comparison.
    pub fn dump(&self) -> String {
        format!(
            "; rule {} ({})\n; truth\n{}; loss\n{}",
            self.rule,
            self.tnorm,
            self.truth_graph.dump(),
            self.loss_graph.dump()
        )
    }
}

pub fn compile_rule(rule: &Rule, labels: &LabelSet, t: TNorm, options: CompileOptions) -> Result<CompiledLoss, CompileError> {
    let mut slots = Vec::new();
    let truth = soften(&desugar(rule.body()), t, rule, &mut slots)?;
    let loss = to_loss(&truth, t, options);
    let slot_names: Vec<String> = slots.iter().map(|s| s.render(rule.vars(), labels)).collect();
    let graph = |e: &Expr| {
        let mut b = TapeBuilder::new();
        let inputs: Vec<_> = slot_names.iter().map(|n| b.input(n)).collect();
        let root = e.lower(&mut b, &inputs);
        b.finish(root)
    };
    Ok(CompiledLoss {
        rule: rule.name().to_string(),
        arity: rule.arity(),
        tnorm: t,
        truth_graph: graph(&truth),
        loss_graph: graph(&loss),
        slots,
        slot_names,
        truth,
        loss,
    })
}

/// One compiled loss per rule, in file order.
pub fn compile(rs: &RuleSet, t: TNorm) -> Result<Vec<CompiledLoss>, CompileError> {
    compile_with(rs, t, CompileOptions::default())
}

pub fn compile_with(rs: &RuleSet, t: TNorm, options: CompileOptions) -> Result<Vec<CompiledLoss>, CompileError> {
    rs.rules()
        .iter()
        .map(|r| compile_rule(r, rs.labels(), t, options))
        .collect()
}

/// The rule file and the model must agree on labels and their order.
pub fn check_labels(rules: &LabelSet, model: &LabelSet) -> Result<(), CompileError> {
    if rules == model {
        Ok(())
    } else {
        Err(CompileError::LabelMismatch {
            rules: rules.names().join(","),
            model: model.names().join(","),
        })
    }
}

fn shipped_transitivity() -> &'static CompiledLoss {
    static TRAN: OnceLock<CompiledLoss> = OnceLock::new();
    TRAN.get_or_init(|| {
        let rs = crate::rules::nli();
        let rule = rs.get("tran").expect("shipped rules define tran");
        compile_rule(rule, rs.labels(), TNorm::Product, CompileOptions::default()).expect("compiles")
    })
}

/// Product transitivity loss for one sentence triple, from the label
/// distributions `[e, c, n]` on `(P,H)`, `(H,Z)` and `(P,Z)`.
pub fn eval_transitivity_example(ph: &[f64], hz: &[f64], pz: &[f64]) -> Result<f64, CompileError> {
    for (name, p) in [("(P,H)", ph), ("(H,Z)", hz), ("(P,Z)", pz)] {
        if p.len() != 3 {
            return Err(CompileError::MalformedProbabilities(format!("{name} has {} entries", p.len())));
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CompileError::MalformedProbabilities(format!("{name} has an entry outside [0, 1]")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CompileError::MalformedProbabilities(format!("{name} sums to {total}")));
        }
    }
    let tran = shipped_transitivity();
    let values = tran.bind(
        |args| match args {
            [0, 1] => Some(ph),
            [1, 2] => Some(hz),
            [0, 2] => Some(pz),
            _ => None,
        },
        |_| None,
    )?;
    tran.loss_value(&values)
}
