//! Tab-separated dataset files.
//!
//! ```text
//! #logicloss-data<TAB>v1<TAB>dim=8<TAB>labels=E,C,N
//! pair<TAB>12,40<TAB>0.1,…;…<TAB>0-1=E
//! triple<TAB>3,9,14<TAB>…;…;…<TAB>-
//! ```
//!
//! Features hold one comma-separated vector per slot of the collection kind,
//! slots separated by `;`. Gold entries name a slot by its positions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Collection, DataError, Dataset, Kind, Sentence};
use crate::logic::LabelSet;

pub const SCHEMA_VERSION: &str = "v1";
const DATA_MAGIC: &str = "#logicloss-data";
const SENTENCE_MAGIC: &str = "#logicloss-sentences";

fn write_file(path: &Path, text: &str) -> Result<(), DataError> {
    fs::write(path, text).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn join(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        // Debug formatting is the shortest string that parses back exactly.
        let _ = write!(out, "{v:?}");
    }
    out
}

fn parse_err(line: usize, reason: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        reason: reason.into(),
    }
}

fn parse_values(line: usize, text: &str) -> Result<Vec<f64>, DataError> {
    text.split(',')
        .map(|v| {
            let x: f64 = v.trim().parse().map_err(|_| parse_err(line, format!("bad number `{v}`")))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(parse_err(line, format!("non-finite value `{v}`")))
            }
        })
        .collect()
}

pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = format!(
        "{DATA_MAGIC}\t{SCHEMA_VERSION}\tdim={}\tlabels={}\n",
        ds.dim,
        ds.labels.names().join(",")
    );
    for c in &ds.items {
        let ids: Vec<String> = c.ids.iter().map(|i| i.to_string()).collect();
        let features: Vec<String> = c.features.iter().map(|f| join(f)).collect();
        let gold = if c.gold.is_empty() {
            "-".to_string()
        } else {
            c.gold
                .iter()
                .map(|&(slot, l)| {
                    let args: Vec<String> = c.kind.slots()[slot].iter().map(|a| a.to_string()).collect();
                    format!("{}={}", args.join("-"), ds.labels.name(l))
                })
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(out, "{}\t{}\t{}\t{}", c.kind, ids.join(","), features.join(";"), gold);
    }
    out
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), DataError> {
    write_file(path, &format_dataset(ds))
}

pub fn parse_dataset(text: &str) -> Result<Dataset, DataError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let fields: Vec<&str> = header.split('\t').collect();
    let [magic, version, dim, labels] = fields[..] else {
        return Err(parse_err(1, "malformed header"));
    };
    if magic != DATA_MAGIC {
        return Err(parse_err(1, "not a logicloss dataset"));
    }
    if version != SCHEMA_VERSION {
        return Err(DataError::Schema {
            expected: SCHEMA_VERSION.into(),
            found: version.into(),
        });
    }
    let dim: usize = dim
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| parse_err(1, "expected `dim=N`"))?;
    let labels = labels
        .strip_prefix("labels=")
        .ok_or_else(|| parse_err(1, "expected `labels=...`"))?;
    let labels = LabelSet::new(labels.split(',')).map_err(|e| parse_err(1, e.to_string()))?;

    let mut ds = Dataset::new(labels, dim);
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [kind, ids, features, gold] = fields[..] else {
            return Err(parse_err(n, format!("expected 4 tab-separated fields, found {}", fields.len())));
        };
        let kind: Kind = kind.parse().map_err(|e: String| parse_err(n, e))?;
        let ids: Vec<usize> = ids
            .split(',')
            .map(|i| i.parse().map_err(|_| parse_err(n, format!("bad id `{i}`"))))
            .collect::<Result<_, _>>()?;
        if ids.len() != kind.arity() {
            return Err(parse_err(n, format!("{kind} needs {} ids, found {}", kind.arity(), ids.len())));
        }
        let features: Vec<Vec<f64>> = features
            .split(';')
            .map(|f| parse_values(n, f))
            .collect::<Result<_, _>>()?;
        if features.len() != kind.slots().len() {
            return Err(parse_err(
                n,
                format!("{kind} needs {} feature vectors, found {}", kind.slots().len(), features.len()),
            ));
        }
        if let Some(f) = features.iter().find(|f| f.len() != dim) {
            return Err(parse_err(n, format!("feature vector of length {} in a dim={dim} file", f.len())));
        }
        let mut c = Collection {
            kind,
            ids,
            features,
            gold: Vec::new(),
        };
        if gold != "-" {
            for entry in gold.split(',') {
                let (args, label) = entry
                    .split_once('=')
                    .ok_or_else(|| parse_err(n, format!("bad gold entry `{entry}`")))?;
                let args: Vec<usize> = args
                    .split('-')
                    .map(|a| a.parse().map_err(|_| parse_err(n, format!("bad gold entry `{entry}`"))))
                    .collect::<Result<_, _>>()?;
                let slot = c
                    .slot(&args)
                    .ok_or_else(|| parse_err(n, format!("{kind} has no slot `{entry}`")))?;
                let label = ds
                    .labels
                    .lookup(label)
                    .ok_or_else(|| parse_err(n, format!("unknown label `{label}`")))?;
                c.gold.push((slot, label));
            }
        }
        ds.items.push(c);
    }
    Ok(ds)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    parse_dataset(&read_file(path)?).map_err(|e| match e {
        DataError::Parse { line, reason } => DataError::Parse {
            line,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

pub fn write_sentences(path: &Path, sentences: &[Sentence]) -> Result<(), DataError> {
    let mut out = format!("{SENTENCE_MAGIC}\t{SCHEMA_VERSION}\n");
    for s in sentences {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:?}\t{:?}\t{}",
            s.id,
            s.topic,
            s.split.name(),
            s.lo,
            s.hi,
            join(&s.features)
        );
    }
    write_file(path, &out)
}

pub fn read_sentences(path: &Path) -> Result<Vec<Sentence>, DataError> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h == format!("{SENTENCE_MAGIC}\t{SCHEMA_VERSION}") => {}
        Some((_, h)) => {
            return Err(DataError::Schema {
                expected: format!("{SENTENCE_MAGIC} {SCHEMA_VERSION}"),
                found: h.replace('\t', " "),
            })
        }
        None => return Err(parse_err(1, "empty file")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let [id, topic, split, lo, hi, features] = f[..] else {
                return Err(parse_err(n, "expected 6 tab-separated fields"));
            };
            let int = |v: &str| v.parse::<usize>().map_err(|_| parse_err(n, format!("bad integer `{v}`")));
            let real = |v: &str| v.parse::<f64>().map_err(|_| parse_err(n, format!("bad number `{v}`")));
            Ok(Sentence {
                id: int(id)?,
                topic: int(topic)?,
                split: split.parse().map_err(|e: String| parse_err(n, e))?,
                lo: real(lo)?,
                hi: real(hi)?,
                features: parse_values(n, features)?,
            })
        })
        .collect()
}
