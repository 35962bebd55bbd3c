//! Pretty-printing in the rule-file syntax.
//!
//! Parentheses are emitted only where precedence or associativity
//! requires them, so printed output parses back to the same tree.

use std::fmt;

use super::{Formula, LabelSet, RuleSet, Target};

// Binding strength, loosest first.
const IFF: u8 = 1;
const IMPLIES: u8 = 2;
const OR: u8 = 3;
const AND: u8 = 4;
const NOT: u8 = 5;
const ATOM: u8 = 6;

fn precedence(f: &Formula) -> u8 {
    match f {
        Formula::Iff(..) => IFF,
        Formula::Implies(..) => IMPLIES,
        Formula::Or(..) => OR,
        Formula::And(..) => AND,
        Formula::Not(_) => NOT,
        Formula::Top | Formula::Pred(_) => ATOM,
    }
}

pub struct FormulaDisplay<'a> {
    formula: &'a Formula,
    labels: &'a LabelSet,
}

impl<'a> FormulaDisplay<'a> {
    pub(super) fn new(formula: &'a Formula, labels: &'a LabelSet) -> Self {
        FormulaDisplay { formula, labels }
    }
}

fn write_formula(out: &mut fmt::Formatter<'_>, f: &Formula, labels: &LabelSet, min: u8) -> fmt::Result {
    let prec = precedence(f);
    let wrap = prec < min;
    if wrap {
        out.write_str("(")?;
    }
    let binary = |out: &mut fmt::Formatter<'_>, a, b, op: &str, lmin, rmin| {
        write_formula(out, a, labels, lmin)?;
        write!(out, " {op} ")?;
        write_formula(out, b, labels, rmin)
    };
    match f {
        Formula::Top => out.write_str("true")?,
        Formula::Pred(atom) => {
            let name = match atom.target {
                Target::Label(l) => labels.name(l),
                Target::Gold => "gold",
            };
            write!(out, "{name}({})", atom.args.join(","))?;
        }
        Formula::Not(a) => {
            out.write_str("!")?;
            write_formula(out, a, labels, NOT)?;
        }
        // Left-associative operators need parentheses on a right child of
        // equal precedence; `->` is right-associative.
        Formula::And(a, b) => binary(out, a, b, "&", AND, AND + 1)?,
        Formula::Or(a, b) => binary(out, a, b, "|", OR, OR + 1)?,
        Formula::Implies(a, b) => binary(out, a, b, "->", IMPLIES + 1, IMPLIES)?,
        Formula::Iff(a, b) => binary(out, a, b, "<->", IFF, IFF + 1)?,
    }
    if wrap {
        out.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for FormulaDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_formula(f, self.formula, self.labels, IFF)
    }
}

pub struct RuleSetDisplay<'a> {
    rules: &'a RuleSet,
}

impl<'a> RuleSetDisplay<'a> {
    pub(super) fn new(rules: &'a RuleSet) -> Self {
        RuleSetDisplay { rules }
    }
}

impl fmt::Display for RuleSetDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels = self.rules.labels();
        writeln!(f, "labels: {}", labels.names().join(", "))?;
        for rule in self.rules.rules() {
            writeln!(
                f,
                "rule {} over ({}): {}",
                rule.name(),
                rule.vars().join(","),
                rule.body().display(labels)
            )?;
        }
        Ok(())
    }
}
