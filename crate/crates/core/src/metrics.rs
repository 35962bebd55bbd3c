//! Violation rates, coverage and prediction cross tables.
//!
//! Violations are counted on hard argmax predictions with the Boolean rule
//! semantics. A collection violates the rule set when any applicable rule
//! is violated, and counts toward the conditional denominator when any
//! applicable rule has a clause whose antecedent holds.

use std::fmt::Write as _;

use thiserror::Error;

use crate::classifier::{ClassifierError, Predictor};
use crate::data::{Collection, Dataset, Kind};
use crate::logic::{Label, LabelSet, LogicError, PredictionAssignment, Rule, RuleSet, Target};
use crate::tnorm::{check_labels, CompileError, CompiledLoss};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("collection {index} is a {kind} but no rule ranges over {arity} examples")]
    ArityMismatch { index: usize, kind: Kind, arity: usize },
    #[error("rule `{rule}` needs slot {args:?}, which a {kind} does not carry")]
    MissingSlot { rule: String, kind: Kind, args: Vec<usize> },
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Compile(#[from] CompileError),
}

/// Which group of constraints a rule belongs to, by shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Rules mentioning gold labels.
    Annotation,
    /// Unlabeled rules over pairs (and single examples).
    Pairwise,
    /// Unlabeled rules over triples.
    Triple,
}

impl Family {
    pub fn of(rule: &Rule) -> Family {
        if rule.uses_gold() {
            Family::Annotation
        } else if rule.arity() >= 3 {
            Family::Triple
        } else {
            Family::Pairwise
        }
    }

    /// Suffix used in metric keys (`rho_S`, `tau_T`).
    pub fn suffix(self) -> &'static str {
        match self {
            Family::Annotation => "A",
            Family::Pairwise => "S",
            Family::Triple => "T",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleBreakdown {
    pub rule: String,
    /// Collections the rule applies to.
    pub applicable: usize,
    pub antecedent: usize,
    pub violations: usize,
}

impl RuleBreakdown {
    pub fn rho(&self) -> f64 {
        ratio(self.violations, self.applicable).unwrap_or(0.0)
    }

    pub fn tau(&self) -> Option<f64> {
        ratio(self.violations, self.antecedent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    pub numerator: usize,
    pub global_denominator: usize,
    pub conditional_denominator: usize,
    pub rho: f64,
    /// Absent when no antecedent ever holds.
    pub tau: Option<f64>,
    pub per_rule: Vec<RuleBreakdown>,
    /// Over annotated slots; absent when nothing is annotated.
    pub accuracy: Option<f64>,
    pub labeled: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Hard predictions for every slot of a collection.
pub fn predict_slots(c: &Collection, model: &impl Predictor) -> Result<Vec<Label>, ClassifierError> {
    c.features.iter().map(|f| model.predict_label(f)).collect()
}

struct Prepared<'r> {
    rule: &'r Rule,
    /// Positions of each predicate atom, deduplicated.
    predicted: Vec<Vec<usize>>,
    gold: Vec<Vec<usize>>,
}

fn prepare(rule: &Rule) -> Prepared<'_> {
    let mut predicted: Vec<Vec<usize>> = Vec::new();
    let mut gold: Vec<Vec<usize>> = Vec::new();
    // A gold atom compares the prediction with the annotation, so it needs
    // both.
    for atom in rule.body().atoms() {
        let pos = rule.positions(&atom.args);
        if atom.target == Target::Gold && !gold.contains(&pos) {
            gold.push(pos.clone());
        }
        if !predicted.contains(&pos) {
            predicted.push(pos);
        }
    }
    Prepared { rule, predicted, gold }
}

impl Prepared<'_> {
    fn applies(&self, c: &Collection) -> bool {
        self.rule.arity() == c.kind.arity() && self.gold.iter().all(|g| c.gold_at(g).is_some())
    }

    fn assignment(&self, c: &Collection, preds: &[Label]) -> Result<PredictionAssignment, MetricsError> {
        let vars = self.rule.vars();
        let names = |pos: &[usize]| pos.iter().map(|&i| vars[i].as_str()).collect::<Vec<_>>();
        let mut asg = PredictionAssignment::new();
        for pos in &self.predicted {
            let slot = c.slot(pos).ok_or_else(|| MetricsError::MissingSlot {
                rule: self.rule.name().to_string(),
                kind: c.kind,
                args: pos.clone(),
            })?;
            asg.predict(&names(pos), preds[slot]);
        }
        for pos in &self.gold {
            asg.annotate(&names(pos), c.gold_at(pos).expect("checked by applies"));
        }
        Ok(asg)
    }
}

/// Global and conditional violation over a dataset, with a per-rule
/// breakdown and accuracy on annotated slots.
pub fn violation_report(d: &Dataset, rs: &RuleSet, model: &impl Predictor) -> Result<ViolationReport, MetricsError> {
    check_labels(rs.labels(), model.labels())?;
    let prepared: Vec<Prepared> = rs.rules().iter().map(prepare).collect();
    let mut per_rule: Vec<RuleBreakdown> = rs
        .rules()
        .iter()
        .map(|r| RuleBreakdown {
            rule: r.name().to_string(),
            applicable: 0,
            antecedent: 0,
            violations: 0,
        })
        .collect();
    let (mut numerator, mut conditional, mut correct, mut labeled) = (0, 0, 0, 0);
    for (index, c) in d.items.iter().enumerate() {
        if !prepared.iter().any(|p| p.rule.arity() == c.kind.arity()) {
            return Err(MetricsError::ArityMismatch {
                index,
                kind: c.kind,
                arity: c.kind.arity(),
            });
        }
        let preds = predict_slots(c, model)?;
        for &(slot, gold) in &c.gold {
            labeled += 1;
            correct += usize::from(preds[slot] == gold);
        }
        let (mut violated, mut fired) = (false, false);
        for (p, stats) in prepared.iter().zip(&mut per_rule) {
            if !p.applies(c) {
                continue;
            }
            let asg = p.assignment(c, &preds)?;
            let v = p.rule.violated(&asg)?;
            let a = p.rule.antecedent_holds(&asg)?;
            stats.applicable += 1;
            stats.violations += usize::from(v);
            stats.antecedent += usize::from(a);
            violated |= v;
            fired |= a;
        }
        numerator += usize::from(violated);
        conditional += usize::from(fired);
    }
    let report = ViolationReport {
        numerator,
        global_denominator: d.len(),
        conditional_denominator: conditional,
        rho: ratio(numerator, d.len()).unwrap_or(0.0),
        tau: ratio(numerator, conditional),
        per_rule,
        accuracy: ratio(correct, labeled),
        labeled,
    };
    if let Some(tau) = report.tau {
        debug_assert!(report.rho <= tau);
    }
    Ok(report)
}

/// Share of annotated slots predicted correctly; absent without annotations.
pub fn accuracy(d: &Dataset, model: &impl Predictor) -> Result<Option<f64>, ClassifierError> {
    let (mut correct, mut total) = (0, 0);
    for c in &d.items {
        for &(slot, gold) in &c.gold {
            total += 1;
            correct += usize::from(model.predict_label(&c.features[slot])? == gold);
        }
    }
    Ok(ratio(correct, total))
}

/// Report restricted to one family of rules.
pub fn family_report(
    d: &Dataset,
    rs: &RuleSet,
    family: Family,
    model: &impl Predictor,
) -> Result<ViolationReport, MetricsError> {
    violation_report(d, &rs.filter(|r| Family::of(r) == family), model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub rule: String,
    pub total: usize,
    pub positive: usize,
    /// Zero on an empty dataset.
    pub fraction: f64,
}

/// Clamped slot probabilities of one collection for a compiled loss.
pub fn bind_collection(
    loss: &CompiledLoss,
    c: &Collection,
    probs: &[Vec<f64>],
) -> Result<Vec<f64>, CompileError> {
    loss.bind(|args| c.slot(args).map(|s| &probs[s][..]), |args| c.gold_at(args))
}

/// Fraction of collections on which the compiled loss is strictly positive.
pub fn coverage(d: &Dataset, loss: &CompiledLoss, model: &impl Predictor) -> Result<CoverageReport, MetricsError> {
    let mut positive = 0;
    for (index, c) in d.items.iter().enumerate() {
        if c.kind.arity() != loss.arity() {
            return Err(MetricsError::ArityMismatch {
                index,
                kind: c.kind,
                arity: c.kind.arity(),
            });
        }
        let probs = c
            .features
            .iter()
            .map(|f| Ok(model.predict_proba(f)?.as_slice().to_vec()))
            .collect::<Result<Vec<_>, ClassifierError>>()?;
        let values = bind_collection(loss, c, &probs)?;
        if loss.loss_value(&values)? > 0.0 {
            positive += 1;
        }
    }
    Ok(CoverageReport {
        rule: loss.rule().to_string(),
        total: d.len(),
        positive,
        fraction: ratio(positive, d.len()).unwrap_or(0.0),
    })
}

/// Predictions on `(P,H)` against `(H,P)` for pairs, and per-slot label
/// counts for every collection.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTable {
    pub labels: LabelSet,
    /// `counts[a][b]`: pairs predicted `a` forward and `b` backward.
    pub counts: Vec<Vec<usize>>,
    /// `marginals[slot][label]`, slots in collection storage order.
    pub marginals: Vec<Vec<usize>>,
}

impl CrossTable {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Off-diagonal entries in the row and column of `label`: pairs where
    /// exactly one direction is predicted `label`.
    pub fn asymmetric(&self, label: Label) -> usize {
        let k = label.index();
        (0..self.labels.len())
            .filter(|&j| j != k)
            .map(|j| self.counts[k][j] + self.counts[j][k])
            .sum()
    }

    pub fn render(&self) -> String {
        let names = self.labels.names();
        let width = self
            .counts
            .iter()
            .flatten()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(names.iter().map(|n| n.len()).max().unwrap_or(1));
        let mut out = format!("{:>w$}", "fwd\\bwd", w = width.max(7));
        for n in names {
            let _ = write!(out, " {n:>width$}");
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            let _ = write!(out, "{:>w$}", names[i], w = width.max(7));
            for c in row {
                let _ = write!(out, " {c:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn cross_table(d: &Dataset, model: &impl Predictor) -> Result<CrossTable, MetricsError> {
    let k = model.labels().len();
    let mut table = CrossTable {
        labels: model.labels().clone(),
        counts: vec![vec![0; k]; k],
        marginals: Vec::new(),
    };
    for c in &d.items {
        let preds = predict_slots(c, model)?;
        if table.marginals.len() < preds.len() {
            table.marginals.resize(preds.len(), vec![0; k]);
        }
        for (slot, l) in preds.iter().enumerate() {
            table.marginals[slot][l.index()] += 1;
        }
        if c.kind == Kind::Pair {
            table.counts[preds[0].index()][preds[1].index()] += 1;
        }
    }
    Ok(table)
}

fn fmt_rate(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Aligned plain-text table, one row per `(name, report)`.
pub fn render_text(rows: &[(String, &ViolationReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut out = format!(
        "{:<name_w$} {:>7} {:>10} {:>10} {:>8} {:>8} {:>8}\n",
        "dataset", "n", "antecedent", "violations", "rho", "tau", "acc"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<name_w$} {:>7} {:>10} {:>10} {:>8} {:>8} {:>8}",
            name,
            r.global_denominator,
            r.conditional_denominator,
            r.numerator,
            fmt_rate(Some(r.rho)),
            fmt_rate(r.tau),
            fmt_rate(r.accuracy),
        );
        for b in &r.per_rule {
            if b.applicable == 0 {
                continue;
            }
            let _ = writeln!(
                out,
                "{:<name_w$} {:>7} {:>10} {:>10} {:>8} {:>8} {:>8}",
                format!("  {}", b.rule),
                b.applicable,
                b.antecedent,
                b.violations,
                fmt_rate(Some(b.rho())),
                fmt_rate(b.tau()),
                "",
            );
        }
    }
    out
}

/// `key=value` lines: `rho_<suffix>`, `tau_<suffix>` and per-rule
/// `rho_<suffix>.<rule>`. An absent rate is written as `none`.
pub fn render_key_values(suffix: &str, r: &ViolationReport) -> String {
    let rate = |x: Option<f64>| x.map_or_else(|| "none".to_string(), |v| format!("{v}"));
    let mut out = String::new();
    let _ = writeln!(out, "rho_{suffix}={}", r.rho);
    let _ = writeln!(out, "tau_{suffix}={}", rate(r.tau));
    let _ = writeln!(out, "violations_{suffix}={}", r.numerator);
    let _ = writeln!(out, "n_{suffix}={}", r.global_denominator);
    let _ = writeln!(out, "n_antecedent_{suffix}={}", r.conditional_denominator);
    if let Some(acc) = r.accuracy {
        let _ = writeln!(out, "accuracy_{suffix}={acc}");
    }
    for b in r.per_rule.iter().filter(|b| b.applicable > 0) {
        let _ = writeln!(out, "rho_{suffix}.{}={}", b.rule, b.rho());
        let _ = writeln!(out, "tau_{suffix}.{}={}", b.rule, rate(b.tau()));
    }
    out
}
