//! Two-stage training against annotation and constraint losses.
//!
//! Stage 1 fits the annotation loss alone. Stage 2 continues from there
//! with the constraint losses of the active auxiliary datasets mixed in:
//!
//! ```text
//! L = L_ann + λ_M·L_sym(M) + λ_U·L_sym(U) + λ_T·L_tran(T)
//! ```
//!
//! Each term is a mean over its dataset. Every compiled rule becomes one
//! tape that runs the classifier on each example of a collection, clamps
//! the probabilities and evaluates the rule's loss, so one backward pass
//! yields the parameter gradient for a whole collection.

mod adam;
mod config;

pub use adam::Adam;
pub use config::{ActiveSets, ConfigError, LossWeights, TrainConfig};

use std::fmt::Write as _;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, Tape, TapeBuilder};
use crate::classifier::{Classifier, ClassifierError};
use crate::data::{Collection, Dataset, DatasetBundle};
use crate::logic::{RuleSet, Target};
use crate::metrics::{self, bind_collection, Family, MetricsError};
use crate::tnorm::{check_labels, compile, CompileError, CompiledLoss, TNorm, PROB_EPS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("annotation loss is enabled but there is no labeled training data")]
    NoLabeledData,
    #[error("nothing to train: annotation loss is off and no constraint dataset is active")]
    NothingToTrain,
    #[error("dataset features have dimension {found}, the model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("rule `{rule}` needs slot {args:?}, which the collection does not carry")]
    MissingSlot { rule: String, args: Vec<usize> },
    #[error("non-finite loss in stage {stage}, epoch {epoch}, batch {batch}: {source}")]
    NonFinite {
        stage: u8,
        epoch: usize,
        batch: usize,
        #[source]
        source: AutodiffError,
    },
}

/// A compiled rule lowered onto a tape over the classifier parameters.
struct Template {
    loss: CompiledLoss,
    family: Family,
    tape: Tape,
    /// Collection slots whose features feed the tape, in input order.
    feature_slots: Vec<Vec<usize>>,
    /// Slots whose gold label is fed as a one-hot vector, after the features.
    gold_slots: Vec<Vec<usize>>,
    labels: usize,
}

impl Template {
    fn build(loss: CompiledLoss, model: &Classifier) -> Template {
        let shape = model.shape();
        let mut b = TapeBuilder::new();
        let params: Vec<NodeId> = model.param_names().iter().map(|n| b.param(n)).collect();
        let mut feature_slots: Vec<Vec<usize>> = Vec::new();
        let mut gold_slots: Vec<Vec<usize>> = Vec::new();
        for slot in loss.slots() {
            if !feature_slots.contains(&slot.args) {
                feature_slots.push(slot.args.clone());
            }
            if slot.target == Target::Gold && !gold_slots.contains(&slot.args) {
                gold_slots.push(slot.args.clone());
            }
        }
        let (lo, hi) = (b.constant(PROB_EPS), b.constant(1.0 - PROB_EPS));
        let probs: Vec<Vec<NodeId>> = feature_slots
            .iter()
            .map(|args| {
                let tag = join_args(args);
                let x: Vec<NodeId> = (0..shape.input).map(|i| b.input(&format!("x{tag}[{i}]"))).collect();
                model
                    .build_probs(&mut b, &params, &x)
                    .into_iter()
                    .map(|p| {
                        let capped = b.min(p, hi);
                        b.max(lo, capped)
                    })
                    .collect()
            })
            .collect();
        let gold_nodes: Vec<NodeId> = gold_slots
            .iter()
            .map(|args| {
                let p = &probs[feature_slots.iter().position(|s| s == args).expect("gold slot has features")];
                let tag = join_args(args);
                let terms: Vec<NodeId> = (0..shape.output)
                    .map(|k| {
                        let g = b.input(&format!("gold{tag}[{k}]"));
                        b.mul(g, p[k])
                    })
                    .collect();
                b.sum(&terms)
            })
            .collect();
        let slot_nodes: Vec<NodeId> = loss
            .slots()
            .iter()
            .map(|s| match s.target {
                Target::Label(l) => probs[feature_slots.iter().position(|a| *a == s.args).expect("registered")][l.index()],
                Target::Gold => gold_nodes[gold_slots.iter().position(|a| *a == s.args).expect("registered")],
            })
            .collect();
        let root = loss.loss_expr().lower(&mut b, &slot_nodes);
        let tape = b.finish(root);
        debug_assert_eq!(tape.param_names(), &model.param_names()[..]);
        Template {
            family: Family::of_compiled(&loss),
            loss,
            tape,
            feature_slots,
            gold_slots,
            labels: shape.output,
        }
    }

    /// Whether the collection has the right size and the gold labels the
    /// rule needs.
    fn applies(&self, c: &Collection) -> bool {
        c.kind.arity() == self.loss.arity() && self.gold_slots.iter().all(|g| c.gold_at(g).is_some())
    }

    fn fill_inputs(&self, c: &Collection, buf: &mut Vec<f64>) -> Result<(), TrainError> {
        buf.clear();
        for args in &self.feature_slots {
            let f = c.features_at(args).ok_or_else(|| TrainError::MissingSlot {
                rule: self.loss.rule().to_string(),
                args: args.clone(),
            })?;
            buf.extend_from_slice(f);
        }
        for args in &self.gold_slots {
            let gold = c.gold_at(args).expect("checked by applies").index();
            buf.extend((0..self.labels).map(|k| if k == gold { 1.0 } else { 0.0 }));
        }
        Ok(())
    }
}

fn join_args(args: &[usize]) -> String {
    args.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",")
}

impl Family {
    fn of_compiled(loss: &CompiledLoss) -> Family {
        if loss.uses_gold() {
            Family::Annotation
        } else if loss.arity() >= 3 {
            Family::Triple
        } else {
            Family::Pairwise
        }
    }
}

/// One step's worth of collections, grouped by the loss family applied.
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    /// Labeled collections, for the annotation rules.
    pub labeled: Vec<&'a Collection>,
    /// Unlabeled pairs, for the pairwise rules.
    pub pairs: Vec<&'a Collection>,
    /// Unlabeled triples, for the triple rules.
    pub triples: Vec<&'a Collection>,
}

/// Summed losses of a batch: `total = ann + λ_sym·sym + λ_tran·tran`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub ann: f64,
    pub sym: f64,
    pub tran: f64,
    pub total: f64,
}

/// All rules of a rule set, compiled and lowered against one model shape.
pub struct Objective {
    templates: Vec<Template>,
}

impl Objective {
    pub fn new(rs: &RuleSet, tnorm: TNorm, model: &Classifier) -> Result<Self, TrainError> {
        check_labels(rs.labels(), crate::classifier::Predictor::labels(model))?;
        let templates = compile(rs, tnorm)?
            .into_iter()
            .map(|loss| Template::build(loss, model))
            .collect();
        Ok(Objective { templates })
    }

    pub fn has_family(&self, family: Family) -> bool {
        self.templates.iter().any(|t| t.family == family)
    }

    fn template(&self, rule: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.loss.rule() == rule)
    }

    /// The training graph of one rule: classifier parameters in, loss out.
    pub fn rule_tape(&self, rule: &str) -> Option<&Tape> {
        self.template(rule).map(|t| &t.tape)
    }

    /// Input vector of [`Objective::rule_tape`] for a collection, or `None`
    /// when the rule does not apply to it.
    pub fn tape_inputs(&self, rule: &str, c: &Collection) -> Result<Option<Vec<f64>>, TrainError> {
        let Some(t) = self.template(rule).filter(|t| t.applies(c)) else {
            return Ok(None);
        };
        let mut buf = Vec::new();
        t.fill_inputs(c, &mut buf)?;
        Ok(Some(buf))
    }

    /// Loss of the batch at `params`; adds `scale` times its gradient to
    /// `grad`. Terms with zero weight are evaluated but not differentiated.
    pub fn mix_losses(
        &self,
        params: &[f64],
        batch: &Batch,
        weights: LossWeights,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<LossParts, TrainError> {
        let mut parts = LossParts::default();
        let mut inputs = Vec::new();
        for t in &self.templates {
            let (items, weight, sum) = match t.family {
                Family::Annotation => (&batch.labeled, 1.0, &mut parts.ann),
                Family::Pairwise => (&batch.pairs, weights.lambda_sym, &mut parts.sym),
                Family::Triple => (&batch.triples, weights.lambda_tran, &mut parts.tran),
            };
            if items.is_empty() {
                continue;
            }
            let mut ev = t.tape.evaluator();
            for c in items.iter().filter(|c| t.applies(c)) {
                t.fill_inputs(c, &mut inputs)?;
                *sum += ev.forward(params, &inputs)?;
                if weight * scale != 0.0 {
                    ev.backward_accumulate(grad, weight * scale)?;
                }
            }
        }
        parts.total = parts.ann + weights.lambda_sym * parts.sym + weights.lambda_tran * parts.tran;
        Ok(parts)
    }

    /// Mean loss of one family over a dataset, from direct evaluation.
    pub fn mean_loss(&self, model: &Classifier, d: &Dataset, family: Family) -> Result<Option<f64>, TrainError> {
        use crate::classifier::Predictor;
        let mut total = 0.0;
        let mut count = 0;
        for c in &d.items {
            let mut probs: Option<Vec<Vec<f64>>> = None;
            for t in self.templates.iter().filter(|t| t.family == family && t.applies(c)) {
                let probs = match &mut probs {
                    Some(p) => p,
                    None => probs.insert(
                        c.features
                            .iter()
                            .map(|f| Ok(model.predict_proba(f)?.as_slice().to_vec()))
                            .collect::<Result<_, ClassifierError>>()?,
                    ),
                };
                total += t.loss.loss_value(&bind_collection(&t.loss, c, probs)?)?;
            }
            count += usize::from(probs.is_some());
        }
        Ok((count > 0).then(|| total / count as f64))
    }
}

/// Metrics recorded after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub l_ann: Option<f64>,
    pub l_sym_m: Option<f64>,
    pub l_sym_u: Option<f64>,
    pub l_tran: Option<f64>,
    /// The stage's weighted objective over the full datasets.
    pub objective: f64,
    pub dev_accuracy: Option<f64>,
    pub rho_s: Option<f64>,
    pub tau_s: Option<f64>,
    pub rho_t: Option<f64>,
    pub tau_t: Option<f64>,
    pub coverage_s: Option<f64>,
    pub coverage_t: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const COLUMNS: [&'static str; 14] = [
        "stage",
        "epoch",
        "l_ann",
        "l_sym_m",
        "l_sym_u",
        "l_tran",
        "objective",
        "dev_acc",
        "rho_S",
        "tau_S",
        "rho_T",
        "tau_T",
        "coverage_S",
        "coverage_T",
    ];

    pub fn to_tsv(&self) -> String {
        let cell = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
        let mut out = Self::COLUMNS.join("\t");
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.stage,
                r.epoch,
                cell(r.l_ann),
                cell(r.l_sym_m),
                cell(r.l_sym_u),
                cell(r.l_tran),
                r.objective,
                cell(r.dev_accuracy),
                cell(r.rho_s),
                cell(r.tau_s),
                cell(r.rho_t),
                cell(r.tau_t),
                cell(r.coverage_s),
                cell(r.coverage_t),
            );
        }
        out
    }

    /// Largest epoch-to-epoch rise of the objective within a stage.
    pub fn max_increase(&self, stage: u8) -> f64 {
        let obj: Vec<f64> = self.records.iter().filter(|r| r.stage == stage).map(|r| r.objective).collect();
        obj.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// Per-dataset weights and sources for one stage.
struct Part<'a> {
    items: Vec<&'a Collection>,
    family: Family,
    weight: f64,
    rng: ChaCha8Rng,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_dim(d: &Dataset, expected: usize) -> Result<(), TrainError> {
    match d.items.iter().flat_map(|c| &c.features).find(|f| f.len() != expected) {
        Some(f) => Err(TrainError::Dimension {
            expected,
            found: f.len(),
        }),
        None => Ok(()),
    }
}

struct Evaluation<'a> {
    bundle: &'a DatasetBundle,
    labeled: &'a Dataset,
    m: &'a Dataset,
    pairwise: RuleSet,
    triple: RuleSet,
}

impl Evaluation<'_> {
    fn record(
        &self,
        model: &Classifier,
        objective: &Objective,
        stage: u8,
        epoch: usize,
        weights: &[(Family, &str, f64)],
    ) -> Result<EpochRecord, TrainError> {
        let b = self.bundle;
        let l_ann = objective.mean_loss(model, self.labeled, Family::Annotation)?;
        let l_sym_m = objective.mean_loss(model, self.m, Family::Pairwise)?;
        let l_sym_u = objective.mean_loss(model, &b.u, Family::Pairwise)?;
        let l_tran = objective.mean_loss(model, &b.t, Family::Triple)?;
        let mut total = 0.0;
        for &(_, name, w) in weights {
            let v = match name {
                "ann" => l_ann,
                "M" => l_sym_m,
                "U" => l_sym_u,
                _ => l_tran,
            };
            total += w * v.unwrap_or(0.0);
        }
        let rates = |d: &Dataset, rs: &RuleSet| -> Result<(Option<f64>, Option<f64>), TrainError> {
            if d.is_empty() || rs.is_empty() {
                return Ok((None, None));
            }
            let r = metrics::violation_report(d, rs, model)?;
            Ok((Some(r.rho), r.tau))
        };
        let (rho_s, tau_s) = rates(&b.eval_pairs, &self.pairwise)?;
        let (rho_t, tau_t) = rates(&b.eval_triples, &self.triple)?;
        let cov = |d: &Dataset, family: Family| -> Result<Option<f64>, TrainError> {
            let t = objective.templates.iter().find(|t| t.family == family);
            match t {
                Some(t) if !d.is_empty() => Ok(Some(metrics::coverage(d, &t.loss, model)?.fraction)),
                _ => Ok(None),
            }
        };
        Ok(EpochRecord {
            stage,
            epoch,
            l_ann,
            l_sym_m,
            l_sym_u,
            l_tran,
            objective: total,
            dev_accuracy: metrics::accuracy(&b.dev, model)?,
            rho_s,
            tau_s,
            rho_t,
            tau_t,
            coverage_s: cov(&b.u, Family::Pairwise)?,
            coverage_t: cov(&b.t, Family::Triple)?,
        })
    }
}

/// Leading `fraction` of a dataset's collections.
fn head(d: &Dataset, fraction: f64) -> Dataset {
    let n = ((d.len() as f64) * fraction).ceil() as usize;
    Dataset {
        labels: d.labels.clone(),
        dim: d.dim,
        items: d.items[..n.min(d.len())].to_vec(),
    }
}

/// Train a fresh classifier on the bundle. Deterministic for a given
/// configuration.
pub fn train(cfg: &TrainConfig, bundle: &DatasetBundle, rs: &RuleSet) -> Result<(Classifier, TrainLog), TrainError> {
    cfg.validate()?;
    let dim = bundle.train.dim;
    for d in bundle.datasets() {
        check_dim(d, dim)?;
    }
    let model = Classifier::init(bundle.train.labels.clone(), dim, cfg.hidden, cfg.seed);
    train_from(cfg, bundle, rs, model)
}

/// Continue training an existing model.
pub fn train_from(
    cfg: &TrainConfig,
    bundle: &DatasetBundle,
    rs: &RuleSet,
    mut model: Classifier,
) -> Result<(Classifier, TrainLog), TrainError> {
    cfg.validate()?;
    let objective = Objective::new(rs, cfg.tnorm, &model)?;
    let labeled = head(&bundle.train, cfg.labeled_fraction);
    let m = head(&bundle.m, cfg.labeled_fraction);
    if cfg.annotation && labeled.is_empty() {
        return Err(TrainError::NoLabeledData);
    }
    if !cfg.annotation && !cfg.active.any() {
        return Err(TrainError::NothingToTrain);
    }
    let eval = Evaluation {
        bundle,
        labeled: &labeled,
        m: &m,
        pairwise: rs.filter(|r| Family::of(r) == Family::Pairwise),
        triple: rs.filter(|r| Family::of(r) == Family::Triple),
    };

    let mut log = TrainLog::default();
    for stage in [1u8, 2] {
        let (epochs, lr) = if stage == 1 {
            (cfg.stage1_epochs, cfg.stage1_lr)
        } else {
            (cfg.stage2_epochs, cfg.stage2_lr)
        };
        // Named sources with their family and weight; streams keep each
        // dataset's shuffling independent of the others.
        let mut sources: Vec<(&str, &Dataset, Family, f64, u64)> = Vec::new();
        if cfg.annotation {
            sources.push(("ann", &labeled, Family::Annotation, 1.0, 1));
        }
        if stage == 2 {
            let a = cfg.active;
            for (on, name, d, family, w, stream) in [
                (a.m, "M", &m, Family::Pairwise, cfg.lambda_m, 2),
                (a.u, "U", &bundle.u, Family::Pairwise, cfg.lambda_u, 3),
                (a.t, "T", &bundle.t, Family::Triple, cfg.lambda_t, 4),
            ] {
                if on && !d.is_empty() && objective.has_family(family) {
                    sources.push((name, d, family, w, stream));
                }
            }
        }
        if sources.is_empty() || epochs == 0 {
            debug!("stage {stage}: nothing to optimize");
            continue;
        }
        let weights: Vec<(Family, &str, f64)> = sources.iter().map(|s| (s.2, s.0, s.3)).collect();
        let mut parts: Vec<Part> = sources
            .iter()
            .map(|&(_, d, family, weight, stream)| Part {
                items: d.items.iter().collect(),
                family,
                weight,
                rng: rng_stream(cfg.seed, u64::from(stage) * 16 + stream),
            })
            .collect();
        let primary = if cfg.annotation {
            labeled.len()
        } else {
            parts.iter().map(|p| p.items.len()).max().unwrap_or(0)
        };
        let steps = primary.div_ceil(cfg.batch_size);
        let mut adam = Adam::new(model.params().len(), cfg.beta1, cfg.beta2, cfg.adam_eps);
        let mut grad = vec![0.0; model.params().len()];
        let mut previous: Option<f64> = None;
        info!("stage {stage}: {epochs} epochs, {steps} steps each, lr {lr}, sources {:?}", sources.iter().map(|s| s.0).collect::<Vec<_>>());

        for epoch in 1..=epochs {
            for p in &mut parts {
                p.items.shuffle(&mut p.rng);
            }
            for step in 0..steps {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for p in &parts {
                    let size = p.items.len().div_ceil(steps);
                    let lo = (step * size).min(p.items.len());
                    let hi = ((step + 1) * size).min(p.items.len());
                    if lo == hi {
                        continue;
                    }
                    let chunk = p.items[lo..hi].to_vec();
                    let (batch, w) = match p.family {
                        Family::Annotation => (Batch { labeled: chunk, ..Batch::default() }, LossWeights::ZERO),
                        Family::Pairwise => (
                            Batch { pairs: chunk, ..Batch::default() },
                            LossWeights { lambda_sym: p.weight, lambda_tran: 0.0 },
                        ),
                        Family::Triple => (
                            Batch { triples: chunk, ..Batch::default() },
                            LossWeights { lambda_sym: 0.0, lambda_tran: p.weight },
                        ),
                    };
                    let scale = 1.0 / (hi - lo) as f64;
                    objective
                        .mix_losses(model.params(), &batch, w, scale, &mut grad)
                        .map_err(|e| match e {
                            TrainError::Autodiff(source) => TrainError::NonFinite {
                                stage,
                                epoch,
                                batch: step,
                                source,
                            },
                            other => other,
                        })?;
                }
                adam.step(model.params_mut(), &grad, lr);
            }
            let record = eval.record(&model, &objective, stage, epoch, &weights)?;
            if !record.objective.is_finite() {
                return Err(TrainError::NonFinite {
                    stage,
                    epoch,
                    batch: steps,
                    source: AutodiffError::NonFinite {
                        node: 0,
                        value: record.objective,
                        path: "epoch objective".into(),
                    },
                });
            }
            if let Some(prev) = previous {
                if stage == 2 && record.objective - prev > cfg.descent_tolerance {
                    warn!(
                        "stage 2 epoch {epoch}: objective rose from {prev:.5} to {:.5}",
                        record.objective
                    );
                }
            }
            previous = Some(record.objective);
            debug!(
                "stage {stage} epoch {epoch}: objective {:.5} dev acc {:?}",
                record.objective, record.dev_accuracy
            );
            log.records.push(record);
        }
    }
    Ok((model, log))
}
