//! Consistency rules over classifier predictions.
//!
//! A rule quantifies over a collection of examples (a pair or triple of
//! sentences, say) and states a conjunction of implications between label
//! predicates. Predicates are Boolean here; the [`crate::tnorm`] module
//! relaxes the same formulas into differentiable losses.

mod parser;
mod print;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub use parser::parse_rule_file;
pub use print::{FormulaDisplay, RuleSetDisplay};

/// Identifiers the rule language keeps for itself.
pub const RESERVED: &[&str] = &["rule", "over", "true", "labels", "gold"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogicError {
    #[error("{line}:{col}: syntax error: expected {}, found {found}", .expected.join(" or "))]
    Syntax {
        line: usize,
        col: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("{line}:{col}: variable `{var}` is not declared by rule `{rule}`")]
    UndeclaredVariable {
        line: usize,
        col: usize,
        rule: String,
        var: String,
    },
    #[error("{line}:{col}: label `{label}` is not declared")]
    UndeclaredLabel {
        line: usize,
        col: usize,
        label: String,
    },
    #[error("rule `{rule}`: top-level connective must be an implication")]
    NotImplication { rule: String },
    #[error("rule `{rule}`: predicate over ({args}) has arity {found}, expected {expected}")]
    PredicateArity {
        rule: String,
        args: String,
        found: usize,
        expected: usize,
    },
    #[error("rule `{rule}`: {reason}")]
    BadSignature { rule: String, reason: String },
    #[error("duplicate rule name `{0}`")]
    DuplicateRule(String),
    #[error("invalid label set: {0}")]
    BadLabels(String),
    #[error("no {kind} entry for ({args})")]
    MissingAssignment { kind: &'static str, args: String },
}

/// Index of a label in its [`LabelSet`] declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(usize);

impl Label {
    pub const fn new(index: usize) -> Self {
        Label(index)
    }

    pub const fn index(self) -> usize {
        self.0
    }
}

/// The finite, ordered label vocabulary a rule file declares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, LogicError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(LogicError::BadLabels("label set is empty".into()));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(LogicError::BadLabels(format!("duplicate label `{name}`")));
            }
            if RESERVED.contains(&name.as_str()) {
                return Err(LogicError::BadLabels(format!("`{name}` is reserved")));
            }
        }
        Ok(LabelSet { names })
    }

    /// The three-way inference labels `E, C, N`.
    pub fn nli() -> Self {
        LabelSet::new(["E", "C", "N"]).expect("static label set")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, label: Label) -> &str {
        &self.names[label.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lookup(&self, name: &str) -> Option<Label> {
        self.names.iter().position(|n| n == name).map(Label)
    }

    pub fn iter(&self) -> impl Iterator<Item = Label> + '_ {
        (0..self.names.len()).map(Label)
    }
}

/// What a predicate asserts about its argument tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    /// The model predicts this label.
    Label(Label),
    /// The model predicts the annotated label, whatever it is.
    Gold,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub target: Target,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Top,
    Pred(Atom),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn pred(label: Label, args: &[&str]) -> Self {
        Formula::Pred(Atom {
            target: Target::Label(label),
            args: args.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn gold(args: &[&str]) -> Self {
        Formula::Pred(Atom {
            target: Target::Gold,
            args: args.iter().map(|s| s.to_string()).collect(),
        })
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn iff(a: Formula, b: Formula) -> Self {
        Formula::Iff(Box::new(a), Box::new(b))
    }

    pub fn contains_iff(&self) -> bool {
        match self {
            Formula::Top | Formula::Pred(_) => false,
            Formula::Iff(..) => true,
            Formula::Not(a) => a.contains_iff(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.contains_iff() || b.contains_iff()
            }
        }
    }

    /// Every predicate occurrence, left to right.
    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        match self {
            Formula::Top => {}
            Formula::Pred(a) => out.push(a),
            Formula::Not(a) => a.collect_atoms(out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    pub fn display<'a>(&'a self, labels: &'a LabelSet) -> FormulaDisplay<'a> {
        FormulaDisplay::new(self, labels)
    }
}

/// Rewrite every biconditional as a pair of implications.
pub fn desugar(f: &Formula) -> Formula {
    match f {
        Formula::Top | Formula::Pred(_) => f.clone(),
        Formula::Not(a) => Formula::not(desugar(a)),
        Formula::And(a, b) => Formula::and(desugar(a), desugar(b)),
        Formula::Or(a, b) => Formula::or(desugar(a), desugar(b)),
        Formula::Implies(a, b) => Formula::implies(desugar(a), desugar(b)),
        Formula::Iff(a, b) => {
            let (a, b) = (desugar(a), desugar(b));
            Formula::and(
                Formula::implies(a.clone(), b.clone()),
                Formula::implies(b, a),
            )
        }
    }
}

/// One `L -> R` conjunct of a rule body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub antecedent: Formula,
    pub consequent: Formula,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    name: String,
    vars: Vec<String>,
    body: Formula,
    clauses: Vec<Clause>,
}

impl Rule {
    /// Checks the signature and splits the desugared body into clauses.
    ///
    /// The body must be a conjunction of implications; a top-level `<->`
    /// qualifies because it desugars into two.
    pub fn new(name: impl Into<String>, vars: Vec<String>, body: Formula) -> Result<Self, LogicError> {
        let name = name.into();
        if vars.is_empty() {
            return Err(LogicError::BadSignature {
                rule: name,
                reason: "no variables declared".into(),
            });
        }
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].contains(v) {
                return Err(LogicError::BadSignature {
                    rule: name,
                    reason: format!("variable `{v}` declared twice"),
                });
            }
        }
        let expected = if vars.len() == 1 { 1 } else { 2 };
        for atom in body.atoms() {
            if atom.args.len() != expected {
                return Err(LogicError::PredicateArity {
                    rule: name,
                    args: atom.args.join(","),
                    found: atom.args.len(),
                    expected,
                });
            }
            if let Some(v) = atom.args.iter().find(|a| !vars.contains(a)) {
                return Err(LogicError::UndeclaredVariable {
                    line: 0,
                    col: 0,
                    rule: name,
                    var: v.clone(),
                });
            }
        }
        let mut clauses = Vec::new();
        if !split_clauses(&desugar(&body), &mut clauses) {
            return Err(LogicError::NotImplication { rule: name });
        }
        Ok(Rule {
            name,
            vars,
            body,
            clauses,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// Number of examples in the collections this rule quantifies over.
    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    pub fn body(&self) -> &Formula {
        &self.body
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn uses_gold(&self) -> bool {
        self.body.atoms().iter().any(|a| a.target == Target::Gold)
    }

    /// Positions of `args` within the rule's variable tuple.
    pub fn positions(&self, args: &[String]) -> Vec<usize> {
        args.iter()
            .map(|a| self.vars.iter().position(|v| v == a).expect("validated at construction"))
            .collect()
    }

    /// Violated under the assignment: some clause has a true antecedent and
    /// a false consequent.
    pub fn violated(&self, assignment: &PredictionAssignment) -> Result<bool, LogicError> {
        for clause in &self.clauses {
            if eval_boolean(&clause.antecedent, assignment)?
                && !eval_boolean(&clause.consequent, assignment)?
            {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Some clause antecedent holds under the assignment.
    pub fn antecedent_holds(&self, assignment: &PredictionAssignment) -> Result<bool, LogicError> {
        for clause in &self.clauses {
            if eval_boolean(&clause.antecedent, assignment)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

fn split_clauses(f: &Formula, out: &mut Vec<Clause>) -> bool {
    match f {
        Formula::And(a, b) => split_clauses(a, out) && split_clauses(b, out),
        Formula::Implies(a, b) => {
            out.push(Clause {
                antecedent: (**a).clone(),
                consequent: (**b).clone(),
            });
            true
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    labels: LabelSet,
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(labels: LabelSet, rules: Vec<Rule>) -> Result<Self, LogicError> {
        for (i, r) in rules.iter().enumerate() {
            if rules[..i].iter().any(|o| o.name == r.name) {
                return Err(LogicError::DuplicateRule(r.name.clone()));
            }
        }
        Ok(RuleSet { labels, rules })
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }

    /// A rule set restricted to the rules accepted by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&Rule) -> bool) -> RuleSet {
        RuleSet {
            labels: self.labels.clone(),
            rules: self.rules.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn display(&self) -> RuleSetDisplay<'_> {
        RuleSetDisplay::new(self)
    }
}

/// Hard label decisions for the argument tuples a rule mentions, plus the
/// annotated labels where known.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionAssignment {
    predicted: HashMap<Vec<String>, Label>,
    gold: HashMap<Vec<String>, Label>,
}

impl PredictionAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn predict(&mut self, args: &[&str], label: Label) -> &mut Self {
        self.predicted.insert(owned(args), label);
        self
    }

    pub fn annotate(&mut self, args: &[&str], label: Label) -> &mut Self {
        self.gold.insert(owned(args), label);
        self
    }

    pub fn predicted(&self, args: &[String]) -> Option<Label> {
        self.predicted.get(args).copied()
    }

    pub fn gold(&self, args: &[String]) -> Option<Label> {
        self.gold.get(args).copied()
    }
}

fn owned(args: &[&str]) -> Vec<String> {
    args.iter().map(|s| s.to_string()).collect()
}

/// Two-valued evaluation of a formula.
pub fn eval_boolean(f: &Formula, assignment: &PredictionAssignment) -> Result<bool, LogicError> {
    Ok(match f {
        Formula::Top => true,
        Formula::Pred(atom) => {
            let predicted = assignment
                .predicted(&atom.args)
                .ok_or_else(|| missing("prediction", &atom.args))?;
            match atom.target {
                Target::Label(l) => predicted == l,
                Target::Gold => {
                    predicted
                        == assignment
                            .gold(&atom.args)
                            .ok_or_else(|| missing("gold", &atom.args))?
                }
            }
        }
        Formula::Not(a) => !eval_boolean(a, assignment)?,
        Formula::And(a, b) => eval_boolean(a, assignment)? & eval_boolean(b, assignment)?,
        Formula::Or(a, b) => eval_boolean(a, assignment)? | eval_boolean(b, assignment)?,
        Formula::Implies(a, b) => !eval_boolean(a, assignment)? | eval_boolean(b, assignment)?,
        Formula::Iff(a, b) => eval_boolean(a, assignment)? == eval_boolean(b, assignment)?,
    })
}

fn missing(kind: &'static str, args: &[String]) -> LogicError {
    LogicError::MissingAssignment {
        kind,
        args: args.join(","),
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}
