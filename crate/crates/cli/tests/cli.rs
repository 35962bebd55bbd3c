use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_logicloss"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_gen(out: &Path, seed: &str) -> Output {
    run(&[
        "gen", "--seed", seed, "--train", "200", "--dev", "50", "--test", "50", "--unlabeled", "80", "--eval", "80",
        "--topics", "10", "--out", p(out),
    ])
}

fn quick_config(dir: &Path) -> PathBuf {
    let path = dir.join("quick.ini");
    fs::write(
        &path,
        "[model]\nhidden = 6\n\n[train]\nstage1_epochs = 3\nstage2_epochs = 2\nbatch_size = 16\n",
    )
    .unwrap();
    path
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn gen_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&small_gen(&a, "4")), 0);
    assert_eq!(code(&small_gen(&b, "4")), 0);
    let fa = files(&a);
    assert_eq!(fa.len(), 9);
    assert_eq!(fa, files(&b));
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 4"));
    assert!(manifest.contains("\"train.tsv\": 200"));
    let c = tmp.path().join("c");
    small_gen(&c, "5");
    assert_ne!(files(&c), fa);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&run(&["gen", "--train", "-1", "--out", p(&out)])), 2);
    assert_eq!(code(&run(&["gen", "--bogus", "--out", p(&out)])), 2);
    assert_eq!(code(&run(&["gen", "--dim", "5", "--out", p(&out)])), 2);
    assert_eq!(code(&run(&["compile", "--tnorm", "hamacher"])), 2);
    assert_eq!(code(&run(&["train", "--data", p(&out), "--constraints", "M,X", "--out", p(&out)])), 2);
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
    assert!(!out.exists());
}

#[test]
fn compile_renders_losses() {
    let o = run(&["compile", "--tnorm", "product"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("L_sym = |log c(P,H) - log c(H,P)|"), "{text}");
    assert!(text.contains("L_ann = -log y*(P,H)"));
    let o = run(&["compile", "--tnorm", "lukasiewicz"]);
    assert!(stdout(&o).contains("L_sym = -log(max(0.0000001, "), "{}", stdout(&o));
}

#[test]
fn compile_dump_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let rules = tmp.path().join("sym.rules");
    fs::write(&rules, "labels: E, C, N\nrule sym over (P,H): C(P,H) <-> C(H,P)\n").unwrap();
    let out = tmp.path().join("out");
    let o = run(&["compile", "--rules", p(&rules), "--dump", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("compile.txt")).unwrap();
    assert_eq!(text, stdout(&o));
    assert!(text.contains("; rule sym"));
    assert!(text.lines().any(|l| l.contains("log")));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains(p(&rules)));
}

#[test]
fn compile_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.rules");
    assert_eq!(code(&run(&["compile", "--rules", p(&missing)])), 2);
    let bad = tmp.path().join("bad.rules");
    fs::write(&bad, "labels: E, C, N\nrule bad over (P,H): C(P,H) &\n").unwrap();
    let o = run(&["compile", "--rules", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.rules: 3:1: syntax error"), "{}", stderr(&o));
}

#[test]
fn train_eval_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_gen(&data, "2");
    let cfg = quick_config(tmp.path());
    let run_dir = tmp.path().join("run");
    let o = run(&[
        "train", "--config", p(&cfg), "--data", p(&data), "--constraints", "M,U,T", "--out", p(&run_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = fs::read_to_string(run_dir.join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3 + 2);
    assert!(fs::read_to_string(run_dir.join("config.ini")).unwrap().contains("active = M,U,T"));

    let eval_dir = tmp.path().join("eval");
    let ckpt = run_dir.join("model.ckpt");
    let o = run(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&eval_dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let kv = stdout(&o);
    for key in ["rho_S=", "tau_S=", "rho_T=", "tau_T=", "accuracy_A=", "coverage_U.sym=", "coverage_T.tran="] {
        assert!(kv.lines().any(|l| l.starts_with(key)), "missing {key} in {kv}");
    }
    assert_eq!(fs::read_to_string(eval_dir.join("metrics.kv")).unwrap(), kv);
    assert!(fs::read_to_string(eval_dir.join("report.txt")).unwrap().contains("fwd\\bwd"));

    for (manifest, again) in [(run_dir.join("manifest.json"), "run2"), (eval_dir.join("manifest.json"), "eval2")] {
        let o = run(&["replay", p(&manifest), "--out", p(&tmp.path().join(again))]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(files(&run_dir), files(&tmp.path().join("run2")));
}

#[test]
fn replay_detects_changes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_gen(&data, "3");
    let manifest = data.join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    let forged = tmp.path().join("forged.json");
    let needle = "\"dev.tsv\": \"";
    let at = text.rfind(needle).unwrap() + needle.len();
    let mut bytes = text.into_bytes();
    bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
    fs::write(&forged, bytes).unwrap();
    let o = run(&["replay", p(&forged), "--out", p(&tmp.path().join("again"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dev.tsv"), "{}", stderr(&o));
}

#[test]
fn eval_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_gen(&data, "1");
    let out = tmp.path().join("out");
    let missing = tmp.path().join("missing.ckpt");
    let o = run(&["eval", "--checkpoint", p(&missing), "--data", p(&data), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.ckpt"));

    let ckpt = tmp.path().join("model.ckpt");
    fs::write(&ckpt, "logicloss-checkpoint v1\nlabels E C N\ndims 8 1 3\n").unwrap();
    assert_eq!(code(&run(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&out)])), 2);

    // A bundle written under another schema version is refused.
    let train = data.join("train.tsv");
    let text = fs::read_to_string(&train).unwrap().replacen("\tv1\t", "\tv9\t", 1);
    fs::write(&train, text).unwrap();
    let cfg = quick_config(tmp.path());
    let o = run(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("schema"), "{}", stderr(&o));
}

#[test]
fn non_finite_training_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_gen(&data, "1");
    let cfg = tmp.path().join("blowup.ini");
    fs::write(&cfg, "[train]\nstage1_lr = 1e307\nstage1_epochs = 2\nstage2_epochs = 0\n").unwrap();
    let o = run(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("stage 1, epoch 1"), "{}", stderr(&o));
}

#[test]
fn shipped_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/base.ini");
    let text = fs::read_to_string(path).unwrap();
    let cfg = logicloss::trainer::TrainConfig::from_ini(&text).unwrap();
    assert_eq!(cfg, logicloss::trainer::TrainConfig::default());
}
