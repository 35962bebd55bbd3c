//! A one-hidden-layer softmax classifier.
//!
//! The model maps a pair feature vector to a probability per label:
//! `softmax(W2 · tanh(W1 · x + b1) + b2)`. It can be evaluated directly or
//! emitted onto an autodiff tape so that compiled rule losses can be
//! differentiated all the way back to the weights.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{NodeId, TapeBuilder};
use crate::logic::{Label, LabelSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifierError {
    #[error("feature vector has {found} entries, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("checkpoint line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpShape {
    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    // Offsets of W1, b1, W2, b2 in the flat parameter vector.
    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        [w1, b1, w2, b2]
    }
}

/// Per-label probabilities in label declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Self {
        ProbVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest entry; the earliest label wins ties.
    pub fn argmax(&self) -> Label {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        Label::new(best)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> ProbVector {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    ProbVector(exps.into_iter().map(|e| e / total).collect())
}

/// Anything that assigns label probabilities to feature vectors.
pub trait Predictor {
    fn labels(&self) -> &LabelSet;

    fn predict_proba(&self, x: &[f64]) -> Result<ProbVector, ClassifierError>;

    fn predict_label(&self, x: &[f64]) -> Result<Label, ClassifierError> {
        Ok(self.predict_proba(x)?.argmax())
    }
}

/// MLP weights, flattened row-major as W1 (hidden × input), b1, W2
/// (labels × hidden), b2.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    labels: LabelSet,
    shape: MlpShape,
    params: Vec<f64>,
}

impl Classifier {
    pub fn zeros(labels: LabelSet, input: usize, hidden: usize) -> Self {
        let shape = MlpShape {
            input,
            hidden,
            output: labels.len(),
        };
        Classifier {
            labels,
            params: vec![0.0; shape.param_count()],
            shape,
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases likewise.
    pub fn init(labels: LabelSet, input: usize, hidden: usize, seed: u64) -> Self {
        let mut model = Self::zeros(labels, input, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [_, _, w2, _] = model.shape.offsets();
        let first = 1.0 / (input.max(1) as f64).sqrt();
        let second = 1.0 / (hidden.max(1) as f64).sqrt();
        for (i, p) in model.params.iter_mut().enumerate() {
            let bound = if i < w2 { first } else { second };
            *p = rng.random_range(-bound..bound);
        }
        model
    }

    pub fn from_params(labels: LabelSet, shape: MlpShape, params: Vec<f64>) -> Self {
        assert_eq!(shape.output, labels.len());
        assert_eq!(params.len(), shape.param_count());
        Classifier { labels, shape, params }
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Tape names for the flat parameters, in order.
    pub fn param_names(&self) -> Vec<String> {
        let s = self.shape;
        let mut names = Vec::with_capacity(s.param_count());
        for j in 0..s.hidden {
            for i in 0..s.input {
                names.push(format!("w1[{j},{i}]"));
            }
        }
        names.extend((0..s.hidden).map(|j| format!("b1[{j}]")));
        for k in 0..s.output {
            for j in 0..s.hidden {
                names.push(format!("w2[{k},{j}]"));
            }
        }
        names.extend((0..s.output).map(|k| format!("b2[{k}]")));
        names
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        let s = self.shape;
        if x.len() != s.input {
            return Err(ClassifierError::Dimension {
                expected: s.input,
                found: x.len(),
            });
        }
        let [w1, b1, w2, b2] = s.offsets();
        let hidden: Vec<f64> = (0..s.hidden)
            .map(|j| {
                let row = &self.params[w1 + j * s.input..w1 + (j + 1) * s.input];
                // Accumulation order matches `build_probs`.
                let mut acc = self.params[b1 + j];
                for (w, xi) in row.iter().zip(x) {
                    acc += w * xi;
                }
                acc.tanh()
            })
            .collect();
        Ok((0..s.output)
            .map(|k| {
                let row = &self.params[w2 + k * s.hidden..w2 + (k + 1) * s.hidden];
                let mut acc = self.params[b2 + k];
                for (w, h) in row.iter().zip(&hidden) {
                    acc += w * h;
                }
                acc
            })
            .collect())
    }

    /// Emit the forward pass onto a tape. `params` are the parameter nodes in
    /// flat order; returns one probability node per label.
    pub fn build_probs(&self, b: &mut TapeBuilder, params: &[NodeId], x: &[NodeId]) -> Vec<NodeId> {
        let s = self.shape;
        assert_eq!(params.len(), s.param_count());
        assert_eq!(x.len(), s.input);
        let [w1, b1, w2, b2] = s.offsets();
        let hidden: Vec<NodeId> = (0..s.hidden)
            .map(|j| {
                let mut acc = params[b1 + j];
                for (i, &xi) in x.iter().enumerate() {
                    let t = b.mul(params[w1 + j * s.input + i], xi);
                    acc = b.add(acc, t);
                }
                b.tanh(acc)
            })
            .collect();
        let logits: Vec<NodeId> = (0..s.output)
            .map(|k| {
                let mut acc = params[b2 + k];
                for (j, &h) in hidden.iter().enumerate() {
                    let t = b.mul(params[w2 + k * s.hidden + j], h);
                    acc = b.add(acc, t);
                }
                acc
            })
            .collect();
        let top = logits[1..].iter().fold(logits[0], |m, &z| b.max(m, z));
        let exps: Vec<NodeId> = logits
            .iter()
            .map(|&z| {
                let shifted = b.sub(z, top);
                b.exp(shifted)
            })
            .collect();
        let total = b.sum(&exps);
        exps.iter().map(|&e| b.div(e, total)).collect()
    }

    /// Text checkpoint: header, labels, dimensions, then one parameter per
    /// line in flat order. Values use shortest round-trip formatting.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::from("logicloss-checkpoint v1\n");
        let _ = writeln!(out, "labels {}", self.labels.names().join(" "));
        let _ = writeln!(out, "dims {} {} {}", self.shape.input, self.shape.hidden, self.shape.output);
        for p in &self.params {
            let _ = writeln!(out, "{p:?}");
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, ClassifierError> {
        let err = |line: usize, reason: &str| ClassifierError::Checkpoint {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "logicloss-checkpoint v1")) => {}
            Some((n, _)) => return Err(err(n, "unsupported header")),
            None => return Err(err(1, "empty checkpoint")),
        }
        let (n, line) = lines.next().ok_or_else(|| err(2, "missing labels"))?;
        let labels = line
            .strip_prefix("labels ")
            .ok_or_else(|| err(n, "expected `labels`"))?
            .split_whitespace()
            .collect::<Vec<_>>();
        let labels = LabelSet::new(labels).map_err(|e| err(n, &e.to_string()))?;
        let (n, line) = lines.next().ok_or_else(|| err(3, "missing dims"))?;
        let dims: Vec<usize> = line
            .strip_prefix("dims ")
            .ok_or_else(|| err(n, "expected `dims`"))?
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| err(n, "bad dimension")))
            .collect::<Result<_, _>>()?;
        let [input, hidden, output] = dims[..] else {
            return Err(err(n, "expected three dimensions"));
        };
        if output != labels.len() {
            return Err(err(n, "output dimension differs from label count"));
        }
        let shape = MlpShape { input, hidden, output };
        let params: Vec<f64> = lines
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                let v: f64 = l.trim().parse().map_err(|_| err(n, "bad parameter value"))?;
                if v.is_finite() { Ok(v) } else { Err(err(n, "non-finite parameter")) }
            })
            .collect::<Result<_, _>>()?;
        if params.len() != shape.param_count() {
            return Err(err(
                3 + params.len(),
                &format!("expected {} parameters, found {}", shape.param_count(), params.len()),
            ));
        }
        Ok(Classifier { labels, shape, params })
    }
}

impl Predictor for Classifier {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn predict_proba(&self, x: &[f64]) -> Result<ProbVector, ClassifierError> {
        Ok(softmax(&self.logits(x)?))
    }
}
