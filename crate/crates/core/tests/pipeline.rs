use logicloss::classifier::{Classifier, MlpShape, Predictor};
use logicloss::data::{generate, DatasetBundle, GenConfig};
use logicloss::logic::LabelSet;
use logicloss::metrics::{self, Family};
use logicloss::rules;
use logicloss::trainer::{train, ActiveSets, TrainConfig};

#[test]
fn classifier_matches_numpy_forward_pass() {
    let text = include_str!("golden/mlp_forward.txt");
    let shape = MlpShape {
        input: 8,
        hidden: 5,
        output: 3,
    };
    let params: Vec<f64> = (0..shape.param_count())
        .map(|i| 0.8 * (0.37 * i as f64 + 0.1).sin())
        .collect();
    let model = Classifier::from_params(LabelSet::nli(), shape, params);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 6);
    for (r, row) in rows.iter().enumerate() {
        let want: Vec<f64> = row.split(' ').map(|v| v.parse().unwrap()).collect();
        let x: Vec<f64> = (0..8).map(|j| 2.0 * (1.3 * j as f64 + r as f64).cos()).collect();
        let got = model.predict_proba(&x).unwrap();
        for (g, w) in got.as_slice().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "row {r}: {g} vs {w}");
        }
    }
}

#[test]
fn files_to_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig {
        train: 400,
        dev: 100,
        test: 100,
        unlabeled: 200,
        eval: 200,
        ..GenConfig::default()
    };
    generate(&cfg).unwrap().save(dir.path()).unwrap();
    let bundle = DatasetBundle::load(dir.path()).unwrap();
    assert_eq!(bundle.train.len(), 400);
    assert_eq!(bundle.m.len(), 400);

    let rs = rules::nli();
    let tc = TrainConfig {
        stage1_epochs: 10,
        stage2_epochs: 5,
        active: ActiveSets::ALL,
        ..TrainConfig::default()
    };
    let (model, log) = train(&tc, &bundle, &rs).unwrap();
    assert_eq!(log.records.len(), 15);
    let acc = metrics::accuracy(&bundle.test, &model).unwrap().unwrap();
    assert!(acc > 0.6, "test accuracy {acc}");

    // The checkpoint reloads to the same predictions.
    let back = Classifier::from_checkpoint(&model.to_checkpoint()).unwrap();
    for c in &bundle.eval_pairs.items {
        assert_eq!(back.predict_proba(&c.features[0]).unwrap(), model.predict_proba(&c.features[0]).unwrap());
    }
    let report = metrics::family_report(&bundle.eval_pairs, &rs, Family::Pairwise, &back).unwrap();
    assert_eq!(Some(report.rho), log.records.last().unwrap().rho_s);
}

#[test]
fn default_run_descends_in_stage_two() {
    let bundle = generate(&GenConfig::default()).unwrap();
    let cfg = TrainConfig::default();
    let (_, log) = train(&cfg, &bundle, &rules::nli()).unwrap();
    let rise = log.max_increase(2);
    assert!(rise <= cfg.descent_tolerance, "objective rose by {rise}\n{}", log.to_tsv());
    let stage2: Vec<f64> = log.records.iter().filter(|r| r.stage == 2).map(|r| r.objective).collect();
    assert_eq!(stage2.len(), cfg.stage2_epochs);
    assert!(stage2.last() < stage2.first());
}
