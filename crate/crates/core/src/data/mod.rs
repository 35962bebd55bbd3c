//! Example collections, the interval-world corpus and its file format.
//!
//! A sentence denotes a closed interval on the real line. `p` entails `h`
//! when `p ⊆ h`, contradicts it when the two are disjoint, and is neutral
//! otherwise. Under this reading symmetry of contradiction and the
//! transitivity clauses hold for every triple, so generated gold labels are
//! always consistent.

mod forge;
mod io;

pub use forge::{generate, GenConfig};
pub use io::{
    format_dataset, parse_dataset, read_dataset, read_sentences, write_dataset, write_sentences, SCHEMA_VERSION,
};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::logic::{Label, LabelSet};

pub const ENTAILMENT: Label = Label::new(0);
pub const CONTRADICTION: Label = Label::new(1);
pub const NEUTRAL: Label = Label::new(2);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unsupported dataset schema `{found}` (expected {expected})")]
    Schema { expected: String, found: String },
    #[error("invalid generator settings: {0}")]
    InvalidConfig(String),
    #[error("could not balance {split} labels after {attempts} draws (counts {counts:?})")]
    Infeasible {
        split: &'static str,
        attempts: usize,
        counts: Vec<usize>,
    },
    #[error("oracle labels on {kind} {ids:?} violate rule `{rule}`")]
    OracleViolation {
        kind: Kind,
        ids: Vec<usize>,
        rule: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Single,
    Pair,
    Triple,
}

impl Kind {
    pub fn arity(self) -> usize {
        match self {
            Kind::Single => 1,
            Kind::Pair => 2,
            Kind::Triple => 3,
        }
    }

    pub fn from_arity(arity: usize) -> Option<Kind> {
        match arity {
            1 => Some(Kind::Single),
            2 => Some(Kind::Pair),
            3 => Some(Kind::Triple),
            _ => None,
        }
    }

    /// Positions of the examples carried by a collection of this kind, in
    /// storage order. Pairs carry both orders; triples carry the three
    /// forward pairs.
    pub fn slots(self) -> &'static [&'static [usize]] {
        match self {
            Kind::Single => &[&[0]],
            Kind::Pair => &[&[0, 1], &[1, 0]],
            Kind::Triple => &[&[0, 1], &[1, 2], &[0, 2]],
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Single => "single",
            Kind::Pair => "pair",
            Kind::Triple => "triple",
        })
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Kind::Single),
            "pair" => Ok(Kind::Pair),
            "triple" => Ok(Kind::Triple),
            other => Err(format!("unknown collection kind `{other}`")),
        }
    }
}

/// A tuple of sentences that a rule quantifies over, with one feature vector
/// per slot and optional gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    pub kind: Kind,
    pub ids: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    /// `(slot index, label)` entries.
    pub gold: Vec<(usize, Label)>,
}

impl Collection {
    pub fn slot(&self, args: &[usize]) -> Option<usize> {
        self.kind.slots().iter().position(|s| *s == args)
    }

    pub fn features_at(&self, args: &[usize]) -> Option<&[f64]> {
        self.slot(args).map(|i| &self.features[i][..])
    }

    pub fn gold_at(&self, args: &[usize]) -> Option<Label> {
        let slot = self.slot(args)?;
        self.gold.iter().find(|(s, _)| *s == slot).map(|&(_, l)| l)
    }

    pub fn is_labeled(&self) -> bool {
        !self.gold.is_empty()
    }
}

/// Collections sharing a label set and feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: LabelSet,
    pub dim: usize,
    pub items: Vec<Collection>,
}

impl Dataset {
    pub fn new(labels: LabelSet, dim: usize) -> Self {
        Dataset {
            labels,
            dim,
            items: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Gold label counts over all annotated slots.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for c in &self.items {
            for &(_, l) in &c.gold {
                counts[l.index()] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
    Unlabeled,
    Eval,
}

impl Split {
    pub const ALL: [Split; 5] = [Split::Train, Split::Dev, Split::Test, Split::Unlabeled, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
            Split::Eval => "eval",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| format!("unknown split `{s}`"))
    }
}

/// A sentence of the interval world: its latent interval and the noisy
/// features a model gets to see.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub id: usize,
    pub topic: usize,
    pub split: Split,
    pub lo: f64,
    pub hi: f64,
    pub features: Vec<f64>,
}

pub fn oracle_label(p: &Sentence, h: &Sentence) -> Label {
    interval_label((p.lo, p.hi), (h.lo, h.hi))
}

pub fn interval_label(p: (f64, f64), h: (f64, f64)) -> Label {
    if h.0 <= p.0 && p.1 <= h.1 {
        ENTAILMENT
    } else if p.1 < h.0 || h.1 < p.0 {
        CONTRADICTION
    } else {
        NEUTRAL
    }
}

/// Ordered concatenation, so swapping the two sentences changes the input.
pub fn pair_features(p: &Sentence, h: &Sentence) -> Vec<f64> {
    p.features.iter().chain(&h.features).copied().collect()
}

pub fn pair_collection(p: &Sentence, h: &Sentence, gold: Option<Label>) -> Collection {
    Collection {
        kind: Kind::Pair,
        ids: vec![p.id, h.id],
        features: vec![pair_features(p, h), pair_features(h, p)],
        gold: gold.map(|l| vec![(0, l)]).unwrap_or_default(),
    }
}

pub fn triple_collection(p: &Sentence, h: &Sentence, z: &Sentence) -> Collection {
    Collection {
        kind: Kind::Triple,
        ids: vec![p.id, h.id, z.id],
        features: vec![pair_features(p, h), pair_features(h, z), pair_features(p, z)],
        gold: Vec::new(),
    }
}

/// Swap premise and hypothesis of every pair, dropping gold labels.
pub fn mirror(pairs: &[Collection]) -> Vec<Collection> {
    pairs
        .iter()
        .map(|c| {
            assert_eq!(c.kind, Kind::Pair, "mirror expects pairs");
            Collection {
                kind: Kind::Pair,
                ids: vec![c.ids[1], c.ids[0]],
                features: vec![c.features[1].clone(), c.features[0].clone()],
                gold: Vec::new(),
            }
        })
        .collect()
}

/// The sentence pairs `(P,H)`, `(H,Z)`, `(P,Z)` of a triple, in that order.
pub fn triples_to_pairs(ids: [usize; 3]) -> [(usize, usize); 3] {
    let [p, h, z] = ids;
    [(p, h), (h, z), (p, z)]
}

/// A collection of the given kind over sentences looked up by id.
pub fn collection_for(kind: Kind, sentences: &[&Sentence]) -> Collection {
    match kind {
        Kind::Single => Collection {
            kind,
            ids: vec![sentences[0].id],
            features: vec![sentences[0].features.clone()],
            gold: Vec::new(),
        },
        Kind::Pair => pair_collection(sentences[0], sentences[1], None),
        Kind::Triple => triple_collection(sentences[0], sentences[1], sentences[2]),
    }
}

/// Everything a training and evaluation run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub sentences: Vec<Sentence>,
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    /// Mirrors of the labeled training pairs.
    pub m: Dataset,
    /// Mirrors of the first pair of each unlabeled triple.
    pub u: Dataset,
    /// Unlabeled triples.
    pub t: Dataset,
    /// Held-out triples and their first pairs, for violation metrics.
    pub eval_pairs: Dataset,
    pub eval_triples: Dataset,
}

impl DatasetBundle {
    pub const FILES: [&'static str; 8] = [
        "train.tsv",
        "dev.tsv",
        "test.tsv",
        "m.tsv",
        "u.tsv",
        "t.tsv",
        "eval_pairs.tsv",
        "eval_triples.tsv",
    ];

    pub fn datasets(&self) -> [&Dataset; 8] {
        [
            &self.train,
            &self.dev,
            &self.test,
            &self.m,
            &self.u,
            &self.t,
            &self.eval_pairs,
            &self.eval_triples,
        ]
    }

    pub fn save(&self, dir: &std::path::Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_sentences(&dir.join("sentences.tsv"), &self.sentences)?;
        for (name, ds) in Self::FILES.iter().zip(self.datasets()) {
            write_dataset(&dir.join(name), ds)?;
        }
        Ok(())
    }

    pub fn load(dir: &std::path::Path) -> Result<Self, DataError> {
        let mut sets = Self::FILES
            .iter()
            .map(|name| read_dataset(&dir.join(name)))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter();
        let mut next = || sets.next().expect("one dataset per file");
        Ok(DatasetBundle {
            sentences: read_sentences(&dir.join("sentences.tsv"))?,
            train: next(),
            dev: next(),
            test: next(),
            m: next(),
            u: next(),
            t: next(),
            eval_pairs: next(),
            eval_triples: next(),
        })
    }
}
