use drivesynth_core::privacy::PrivacyConfig;
use drivesynth_core::{
    evaluate_fidelity, evaluate_privacy, generate_surrogate, split, train, trtr, tstr, ClassifierSpec, TrainConfig,
    TvaeModel,
};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 8,
        batch_size: 100,
        encoder_dims: vec![32, 32],
        decoder_dims: vec![32, 32],
        embedding_dim: 16,
        mixture_components: 5,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn surrogate_end_to_end() {
    let real = generate_surrogate(1500, 21).unwrap();
    let (model, trace) = train(&real, &small_config()).unwrap();
    assert_eq!(trace.total.len(), 8);
    assert!(trace.total.iter().all(|v| v.is_finite()));

    let synth = model.sample(real.n_rows(), 9).unwrap();
    assert_eq!(synth.schema(), real.schema());

    let fidelity = evaluate_fidelity(&real, &synth).unwrap();
    assert!((0.0..=1.0).contains(&fidelity.overall));
    assert_eq!(fidelity.kde.len(), 6);

    let privacy = evaluate_privacy(&real, &synth, &PrivacyConfig::default()).unwrap();
    assert_eq!(privacy.dcr.exact_matches, 0);
    assert!(privacy.dcr.p5 > 0.0);

    let (train_rows, test_rows) = split(&real, 0.2, 3).unwrap();
    let specs = [ClassifierSpec::knn(5), ClassifierSpec::decision_tree(6, 5)];
    let real_run = trtr(&train_rows, &test_rows, &specs).unwrap();
    let synth_run = tstr(&synth, &real, &specs).unwrap();
    for run in [&real_run, &synth_run] {
        for r in &run.results {
            r.report.check_invariants().unwrap();
        }
    }
    assert!(real_run.best_report().accuracy > 0.5);
}

#[test]
fn saved_model_samples_identically() {
    let real = generate_surrogate(400, 2).unwrap();
    let mut config = small_config();
    config.epochs = 2;
    let (model, _) = train(&real, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tvae");
    model.save(&path).unwrap();
    let loaded = TvaeModel::load(&path).unwrap();
    assert_eq!(model.sample(64, 5).unwrap(), loaded.sample(64, 5).unwrap());
}
