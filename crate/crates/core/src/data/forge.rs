use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    mirror, oracle_label, pair_collection, triple_collection, DataError, Dataset, DatasetBundle, Kind, Sentence,
    Split, CONTRADICTION,
};
use crate::logic::{LabelSet, PredictionAssignment};

/// Sizes and noise for one synthetic bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Number of unlabeled triples; the unlabeled pairs are one per triple.
    pub unlabeled: usize,
    /// Number of held-out evaluation triples (and pairs).
    pub eval: usize,
    /// Standard deviation of the feature noise.
    pub sigma: f64,
    /// Pair feature dimension; even and at least 4.
    pub dim: usize,
    pub topics: usize,
    /// Largest allowed deviation of a label's share from uniform, for the
    /// labeled splits.
    pub balance_tolerance: f64,
    /// Rejected draws allowed per labeled split.
    pub max_retries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 1,
            train: 5000,
            dev: 1000,
            test: 1000,
            unlabeled: 1000,
            eval: 1000,
            sigma: 0.25,
            dim: 8,
            topics: 40,
            balance_tolerance: 0.05,
            max_retries: 100_000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.dim < 4 || !self.dim.is_multiple_of(2) {
            return bad("dim must be even and at least 4");
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad("sigma must be finite and nonnegative");
        }
        if self.topics == 0 {
            return bad("topics must be positive");
        }
        if !(0.0..=1.0).contains(&self.balance_tolerance) {
            return bad("balance tolerance must lie in [0, 1]");
        }
        Ok(())
    }
}

const ANCHOR_RANGE: f64 = 3.0;
const CENTER_SPREAD: f64 = 0.8;
const LOG_HALF_WIDTH_SD: f64 = 0.9;
const MEDIAN_HALF_WIDTH: f64 = 0.5;

struct World {
    anchors: Vec<f64>,
    sigma: Normal<f64>,
    center: Normal<f64>,
    log_half_width: Normal<f64>,
    sentence_dim: usize,
    next_id: usize,
}

impl World {
    fn sentence(&mut self, rng: &mut ChaCha8Rng, topic: usize, split: Split) -> Sentence {
        let c = self.anchors[topic] + self.center.sample(rng);
        let w = self.log_half_width.sample(rng).exp();
        let (lo, hi) = (c - w, c + w);
        let mut features: Vec<f64> = [lo, hi, c, 2.0 * w]
            .into_iter()
            .map(|v| v + self.sigma.sample(rng))
            .collect();
        // Any extra dimensions are pure noise.
        features.extend((4..self.sentence_dim).map(|_| self.sigma.sample(rng)));
        let id = self.next_id;
        self.next_id += 1;
        Sentence {
            id,
            topic,
            split,
            lo,
            hi,
            features,
        }
    }

    /// Per-topic sentence pools for one split.
    fn pool(&mut self, rng: &mut ChaCha8Rng, n: usize, split: Split) -> Vec<Vec<Sentence>> {
        if n == 0 {
            return Vec::new();
        }
        let per_topic = n.div_ceil(self.anchors.len()).max(3);
        (0..self.anchors.len())
            .map(|t| (0..per_topic).map(|_| self.sentence(rng, t, split)).collect())
            .collect()
    }
}

fn distinct<const K: usize>(rng: &mut ChaCha8Rng, n: usize) -> [usize; K] {
    let mut out = [0; K];
    for i in 0..K {
        loop {
            let x = rng.random_range(0..n);
            if !out[..i].contains(&x) {
                out[i] = x;
                break;
            }
        }
    }
    out
}

fn labeled_split(
    rng: &mut ChaCha8Rng,
    pools: &[Vec<Sentence>],
    n: usize,
    labels: usize,
    cfg: &GenConfig,
    split: &'static str,
) -> Result<Vec<super::Collection>, DataError> {
    // With every other label at its cap, the rarest one still gets within
    // the tolerance of a uniform share.
    let share = 1.0 / labels as f64 + cfg.balance_tolerance / (labels.max(2) - 1) as f64;
    let cap = ((n as f64 * share).floor() as usize).max(n.div_ceil(labels));
    let mut counts = vec![0; labels];
    let mut out = Vec::with_capacity(n);
    let (mut attempts, mut rejected) = (0, 0);
    while out.len() < n {
        attempts += 1;
        let pool = &pools[rng.random_range(0..pools.len())];
        let [a, b] = distinct::<2>(rng, pool.len());
        let label = oracle_label(&pool[a], &pool[b]);
        if counts[label.index()] >= cap {
            rejected += 1;
            if rejected > cfg.max_retries {
                return Err(DataError::Infeasible { split, attempts, counts });
            }
            continue;
        }
        counts[label.index()] += 1;
        out.push(pair_collection(&pool[a], &pool[b], Some(label)));
    }
    for &c in &counts {
        let off = (c as f64 / n as f64 - 1.0 / labels as f64).abs();
        if off > cfg.balance_tolerance + 1.0 / n as f64 {
            return Err(DataError::Infeasible { split, attempts, counts });
        }
    }
    Ok(out)
}

fn triples(rng: &mut ChaCha8Rng, pools: &[Vec<Sentence>], n: usize) -> Vec<[(usize, usize); 3]> {
    (0..n)
        .map(|_| {
            let t = rng.random_range(0..pools.len());
            let [a, b, c] = distinct::<3>(rng, pools[t].len());
            [(t, a), (t, b), (t, c)]
        })
        .collect()
}

fn check_oracle_consistency(
    pools: &[Vec<Sentence>],
    picks: &[[(usize, usize); 3]],
) -> Result<(), DataError> {
    let rules = crate::rules::nli();
    let tran = rules.get("tran").expect("shipped rules define tran");
    let sym = rules.get("sym").expect("shipped rules define sym");
    let names = ["P", "H", "Z"];
    for pick in picks {
        let s = pick.map(|(t, i)| &pools[t][i]);
        let mut asg = PredictionAssignment::new();
        for (i, j) in [(0, 1), (1, 2), (0, 2), (1, 0)] {
            asg.predict(&[names[i], names[j]], oracle_label(s[i], s[j]));
        }
        let ids = s.iter().map(|x| x.id).collect::<Vec<_>>();
        if tran.violated(&asg).expect("all slots assigned") {
            return Err(DataError::OracleViolation {
                kind: Kind::Triple,
                ids,
                rule: "tran".into(),
            });
        }
        if sym.violated(&asg).expect("all slots assigned") {
            return Err(DataError::OracleViolation {
                kind: Kind::Pair,
                ids: ids[..2].to_vec(),
                rule: "sym".into(),
            });
        }
    }
    Ok(())
}

/// Generate a bundle. Every split draws its own sentences from its own
/// random stream.
pub fn generate(cfg: &GenConfig) -> Result<DatasetBundle, DataError> {
    cfg.validate()?;
    let labels = LabelSet::nli();
    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k);
        rng
    };
    let mut rng = stream(0);
    let anchors = (0..cfg.topics)
        .map(|_| rng.random_range(-ANCHOR_RANGE..ANCHOR_RANGE))
        .collect();
    let mut world = World {
        anchors,
        sigma: Normal::new(0.0, cfg.sigma).expect("validated sigma"),
        center: Normal::new(0.0, CENTER_SPREAD).expect("positive spread"),
        log_half_width: Normal::new(MEDIAN_HALF_WIDTH.ln(), LOG_HALF_WIDTH_SD).expect("positive spread"),
        sentence_dim: cfg.dim / 2,
        next_id: 0,
    };
    let dataset = |items| Dataset {
        labels: labels.clone(),
        dim: cfg.dim,
        items,
    };

    let mut labeled = Vec::new();
    let mut sentences = Vec::new();
    for (k, split, n) in [(1, Split::Train, cfg.train), (2, Split::Dev, cfg.dev), (3, Split::Test, cfg.test)] {
        let mut rng = stream(k);
        let pools = world.pool(&mut rng, n, split);
        labeled.push(labeled_split(&mut rng, &pools, n, labels.len(), cfg, split.name())?);
        sentences.extend(pools.into_iter().flatten());
    }
    let test = labeled.pop().expect("three splits");
    let dev = labeled.pop().expect("three splits");
    let train = labeled.pop().expect("three splits");

    let mut unlabeled = Vec::new();
    for (k, split, n) in [(4, Split::Unlabeled, cfg.unlabeled), (5, Split::Eval, cfg.eval)] {
        let mut rng = stream(k);
        let pools = world.pool(&mut rng, n, split);
        let picks = triples(&mut rng, &pools, n);
        check_oracle_consistency(&pools, &picks)?;
        let ts: Vec<_> = picks
            .iter()
            .map(|pick| {
                let [p, h, z] = pick.map(|(t, i)| &pools[t][i]);
                triple_collection(p, h, z)
            })
            .collect();
        let firsts: Vec<_> = picks
            .iter()
            .map(|pick| {
                let [p, h, _] = pick.map(|(t, i)| &pools[t][i]);
                pair_collection(p, h, None)
            })
            .collect();
        unlabeled.push((ts, firsts));
        sentences.extend(pools.into_iter().flatten());
    }
    let (eval_triples, eval_pairs) = unlabeled.pop().expect("two splits");
    let (t, first_pairs) = unlabeled.pop().expect("two splits");

    // Contradiction must be symmetric for every labeled pair as well.
    // Ids are handed out in generation order.
    debug_assert!(sentences.iter().enumerate().all(|(i, s)| s.id == i));
    for c in train.iter().chain(&dev).chain(&test) {
        let (p, h) = (&sentences[c.ids[0]], &sentences[c.ids[1]]);
        if (oracle_label(p, h) == CONTRADICTION) != (oracle_label(h, p) == CONTRADICTION) {
            return Err(DataError::OracleViolation {
                kind: Kind::Pair,
                ids: c.ids.clone(),
                rule: "sym".into(),
            });
        }
    }

    let m = mirror(&train);
    Ok(DatasetBundle {
        sentences,
        m: dataset(m),
        u: dataset(mirror(&first_pairs)),
        t: dataset(t),
        eval_pairs: dataset(eval_pairs),
        eval_triples: dataset(eval_triples),
        train: dataset(train),
        dev: dataset(dev),
        test: dataset(test),
    })
}
