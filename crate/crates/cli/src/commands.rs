use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde_json::json;

use logicloss::classifier::{Classifier, Predictor};
use logicloss::data::{generate, DatasetBundle, GenConfig};
use logicloss::logic::{parse_rule_file, RuleSet};
use logicloss::metrics::{self, Family, ViolationReport};
use logicloss::rules;
use logicloss::tnorm::{check_labels, compile};
use logicloss::trainer::{self, TrainConfig};

use crate::manifest::{self, Manifest};
use crate::{create_dir, read, write, Cli, CliError, EvalArgs};
use crate::{CompileArgs, GenArgs, ReplayArgs, TrainArgs};

fn text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read(path)?).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

fn load_rules(path: Option<&Path>, m: Option<&mut Manifest>) -> Result<RuleSet, CliError> {
    let Some(path) = path else {
        return Ok(rules::nli());
    };
    if let Some(m) = m {
        m.input(path)?;
    }
    parse_rule_file(&text(path)?).map_err(|source| CliError::Rules {
        path: path.to_path_buf(),
        source,
    })
}

fn load_bundle(dir: &Path, m: &mut Manifest) -> Result<DatasetBundle, CliError> {
    let bundle = DatasetBundle::load(dir)?;
    for name in DatasetBundle::FILES {
        m.input(&dir.join(name))?;
    }
    Ok(bundle)
}

fn finish(m: &mut Manifest, out: &Path) -> Result<(), CliError> {
    m.outputs_from(out)?;
    m.write(out)
}

pub fn gen(a: &GenArgs, argv: &[String]) -> Result<(), CliError> {
    let cfg = GenConfig {
        seed: a.seed,
        train: a.train,
        dev: a.dev,
        test: a.test,
        unlabeled: a.unlabeled,
        eval: a.eval,
        sigma: a.sigma,
        dim: a.dim,
        topics: a.topics,
        ..GenConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let bundle = generate(&cfg)?;
    bundle.save(&a.out)?;
    let mut m = Manifest::new("gen", argv);
    m.seed = Some(cfg.seed);
    m.config = json!({
        "seed": cfg.seed,
        "train": cfg.train,
        "dev": cfg.dev,
        "test": cfg.test,
        "unlabeled": cfg.unlabeled,
        "eval": cfg.eval,
        "sigma": cfg.sigma,
        "dim": cfg.dim,
        "topics": cfg.topics,
        "balance_tolerance": cfg.balance_tolerance,
        "max_retries": cfg.max_retries,
        "sizes": DatasetBundle::FILES.iter().zip(bundle.datasets()).map(|(f, d)| (f.to_string(), json!(d.len()))).collect::<serde_json::Map<_, _>>(),
    });
    finish(&mut m, &a.out)?;
    info!("wrote bundle to {}", a.out.display());
    Ok(())
}

pub fn compile_text(rs: &RuleSet, a: &CompileArgs) -> Result<String, CliError> {
    let mut out = String::new();
    for loss in compile(rs, a.tnorm)? {
        let _ = writeln!(out, "{}", loss.render_truth());
        let _ = writeln!(out, "{}", loss.render());
        if a.dump {
            out.push_str(&loss.dump());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn compile_cmd(a: &CompileArgs, argv: &[String]) -> Result<(), CliError> {
    let mut m = Manifest::new("compile", argv);
    let rs = load_rules(a.rules.as_deref(), Some(&mut m))?;
    let out = compile_text(&rs, a)?;
    print!("{out}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write(&dir.join("compile.txt"), &out)?;
        m.config = json!({ "tnorm": a.tnorm.to_string(), "dump": a.dump });
        finish(&mut m, dir)?;
    }
    Ok(())
}

pub fn train(a: &TrainArgs, argv: &[String]) -> Result<(), CliError> {
    let mut m = Manifest::new("train", argv);
    let mut cfg = match &a.config {
        Some(path) => {
            m.input(path)?;
            TrainConfig::from_ini(&text(path)?).map_err(|source| CliError::Config {
                path: path.clone(),
                source,
            })?
        }
        None => TrainConfig::default(),
    };
    if let Some(active) = a.constraints {
        cfg.active = active;
    }
    let rs = load_rules(a.rules.as_deref(), Some(&mut m))?;
    let bundle = load_bundle(&a.data, &mut m)?;
    let (model, log) = trainer::train(&cfg, &bundle, &rs)?;
    create_dir(&a.out)?;
    write(&a.out.join("model.ckpt"), model.to_checkpoint())?;
    write(&a.out.join("train_log.tsv"), log.to_tsv())?;
    write(&a.out.join("config.ini"), cfg.to_ini())?;
    m.seed = Some(cfg.seed);
    m.config = json!({ "ini": cfg.to_ini(), "constraints": cfg.active.to_string() });
    finish(&mut m, &a.out)?;
    if let Some(last) = log.records.last() {
        info!("final objective {:.5}, dev accuracy {:?}", last.objective, last.dev_accuracy);
    }
    Ok(())
}

pub fn eval(a: &EvalArgs, argv: &[String]) -> Result<(), CliError> {
    let mut m = Manifest::new("eval", argv);
    m.input(&a.checkpoint)?;
    let model = Classifier::from_checkpoint(&text(&a.checkpoint)?).map_err(|source| CliError::Checkpoint {
        path: a.checkpoint.clone(),
        source,
    })?;
    let rs = load_rules(a.rules.as_deref(), Some(&mut m))?;
    check_labels(rs.labels(), model.labels())?;
    let bundle = load_bundle(&a.data, &mut m)?;

    let mut reports: Vec<(String, String, ViolationReport)> = Vec::new();
    for (name, family, d) in [
        ("test", Family::Annotation, &bundle.test),
        ("eval_pairs", Family::Pairwise, &bundle.eval_pairs),
        ("eval_triples", Family::Triple, &bundle.eval_triples),
    ] {
        let subset = rs.filter(|r| Family::of(r) == family);
        if subset.is_empty() || d.is_empty() {
            continue;
        }
        let r = metrics::violation_report(d, &subset, &model)?;
        reports.push((format!("{name} ({})", family.suffix()), family.suffix().to_string(), r));
    }
    let mut kv = String::new();
    for (_, suffix, r) in &reports {
        kv.push_str(&metrics::render_key_values(suffix, r));
    }
    let mut txt = metrics::render_text(&reports.iter().map(|(n, _, r)| (n.clone(), r)).collect::<Vec<_>>());
    txt.push('\n');
    for loss in compile(&rs, a.tnorm)? {
        let (d, name) = match Family::of(rs.get(loss.rule()).expect("compiled from this set")) {
            Family::Annotation => continue,
            Family::Pairwise => (&bundle.u, "U"),
            Family::Triple => (&bundle.t, "T"),
        };
        let c = metrics::coverage(d, &loss, &model)?;
        let _ = writeln!(
            txt,
            "coverage of {} on {name}: {}/{} = {}",
            c.rule, c.positive, c.total, c.fraction
        );
        let _ = writeln!(kv, "coverage_{name}.{}={}", c.rule, c.fraction);
    }
    if !bundle.eval_pairs.is_empty() {
        let _ = writeln!(txt, "\nprediction cross table on eval_pairs (rows P->H, columns H->P)");
        txt.push_str(&metrics::cross_table(&bundle.eval_pairs, &model)?.render());
    }
    print!("{kv}");
    create_dir(&a.out)?;
    write(&a.out.join("report.txt"), &txt)?;
    write(&a.out.join("metrics.kv"), &kv)?;
    m.config = json!({ "tnorm": a.tnorm.to_string() });
    finish(&mut m, &a.out)?;
    Ok(())
}

/// Re-run the manifest's command into `--out` and compare output hashes.
pub fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    let recorded = Manifest::load(&a.manifest)?;
    let mut argv = recorded.argv.clone();
    if argv.first().map(String::as_str) == Some("replay") {
        return Err(CliError::Usage("cannot replay a replay".into()));
    }
    let out: PathBuf = a.out.clone();
    match argv.iter().position(|x| x == "--out") {
        Some(i) if i + 1 < argv.len() => argv[i + 1] = out.display().to_string(),
        _ => {
            if let Some(i) = argv.iter().position(|x| x.starts_with("--out=")) {
                argv[i] = format!("--out={}", out.display());
            } else {
                return Err(CliError::Usage("recorded command wrote no output directory".into()));
            }
        }
    }
    for (path, hash) in &recorded.inputs {
        if manifest::hash_file(Path::new(path))? != *hash {
            return Err(CliError::NotReproduced(vec![format!("input {path}")]));
        }
    }
    let cli = <Cli as clap::Parser>::try_parse_from(std::iter::once("logicloss".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    crate::run(cli, &argv)?;
    let now = manifest::hash_outputs(&out)?;
    let mut differ: Vec<String> = recorded
        .outputs
        .iter()
        .filter(|(name, hash)| now.get(*name) != Some(hash))
        .map(|(name, _)| name.clone())
        .collect();
    differ.extend(now.keys().filter(|k| !recorded.outputs.contains_key(*k)).cloned());
    if !differ.is_empty() {
        return Err(CliError::NotReproduced(differ));
    }
    println!("reproduced {} outputs of `{}` in {}", now.len(), recorded.command, out.display());
    Ok(())
}
