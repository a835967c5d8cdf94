//! End-to-end experiment pipelines over the scripted provider: record a
//! corpus, replay it, and check the reports behave.

use std::collections::BTreeMap;
use std::path::Path;

use matchsim::dataio::ArtifactStore;
use matchsim::eval::{
    run_divorce_experiment, run_speed_dating_experiment, DivorceExperimentConfig, EvalError,
    SpeedDatingExperimentConfig,
};
use matchsim::fixtures;
use matchsim::gateway::Gateway;
use matchsim::templates::TemplateLibrary;

fn store_at(path: &Path) -> ArtifactStore {
    ArtifactStore::with_fixed_timestamp(path, 0).unwrap()
}

/// Every file under `root`, as (relative path, contents).
fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn sd_config() -> SpeedDatingExperimentConfig {
    let mut config = SpeedDatingExperimentConfig::default();
    config.rounds = 2;
    config.workers = 2;
    config
}

#[test]
fn speed_dating_experiment_reports_all_four_methods() {
    let dirs = tempfile::tempdir().unwrap();
    let (profiles, matches) = fixtures::synthetic_speed_dating(24, 5);
    let provider = fixtures::scripted_provider(fixtures::label_table(&matches), 1.0, 9);
    let gateway = Gateway::record_with_mock(provider, store_at(&dirs.path().join("cache")));
    let store = store_at(&dirs.path().join("artifacts"));
    let templates = TemplateLibrary::builtin();

    let output = run_speed_dating_experiment(
        &profiles,
        &matches,
        &BTreeMap::new(),
        &gateway,
        &templates,
        &store,
        &sd_config(),
    )
    .unwrap();

    let methods: Vec<&str> =
        output.reports.iter().map(|r| r.method_name.as_str()).collect();
    assert_eq!(
        methods,
        vec!["logistic_regression", "cosine_similarity", "observer", "mixed"]
    );
    for report in &output.reports {
        assert!((0.0..=1.0).contains(&report.f1));
        assert!((0.0..=1.0).contains(&report.auc));
        assert_eq!(report.n_train + report.n_test, 24);
    }
    // Oracle-quality mock ratings separate the classes almost perfectly.
    let observer = &output.reports[2];
    assert!(observer.f1 >= 0.9, "observer F1 {}", observer.f1);
}

#[test]
fn oracle_ratings_make_the_observer_perfect() {
    // Zero noise: ratings equal labels * 10 exactly.
    let dirs = tempfile::tempdir().unwrap();
    let (profiles, matches) = fixtures::synthetic_speed_dating(16, 8);
    let provider = fixtures::scripted_provider(fixtures::label_table(&matches), 0.0, 1);
    let gateway = Gateway::record_with_mock(provider, store_at(&dirs.path().join("cache")));
    let store = store_at(&dirs.path().join("artifacts"));
    let templates = TemplateLibrary::builtin();

    let output = run_speed_dating_experiment(
        &profiles,
        &matches,
        &BTreeMap::new(),
        &gateway,
        &templates,
        &store,
        &sd_config(),
    )
    .unwrap();
    let observer = output.reports.iter().find(|r| r.method_name == "observer").unwrap();
    assert_eq!(observer.f1, 1.0);
    assert_eq!(observer.auc, 1.0);
}

#[test]
fn replaying_a_recorded_corpus_is_byte_identical() {
    let dirs = tempfile::tempdir().unwrap();
    let cache_dir = dirs.path().join("cache");
    let (profiles, matches) = fixtures::synthetic_speed_dating(12, 3);
    let templates = TemplateLibrary::builtin();

    // Record once.
    let provider = fixtures::scripted_provider(fixtures::label_table(&matches), 1.0, 4);
    let gateway = Gateway::record_with_mock(provider, store_at(&cache_dir));
    let recorded = run_speed_dating_experiment(
        &profiles,
        &matches,
        &BTreeMap::new(),
        &gateway,
        &templates,
        &store_at(&dirs.path().join("record")),
        &sd_config(),
    )
    .unwrap();

    // Replay twice into fresh stores.
    let mut outputs = Vec::new();
    for run in ["replay1", "replay2"] {
        let gateway = Gateway::replay(store_at(&cache_dir));
        let store_dir = dirs.path().join(run);
        let output = run_speed_dating_experiment(
            &profiles,
            &matches,
            &BTreeMap::new(),
            &gateway,
            &templates,
            &store_at(&store_dir),
            &sd_config(),
        )
        .unwrap();
        outputs.push((store_dir, output));
    }

    assert_eq!(outputs[0].1.reports, outputs[1].1.reports);
    assert_eq!(outputs[0].1.reports, recorded.reports);
    let tree_a = tree_bytes(&outputs[0].0);
    let tree_b = tree_bytes(&outputs[1].0);
    assert!(!tree_a.is_empty());
    assert_eq!(tree_a, tree_b, "replay artifact trees differ");
}

#[test]
fn replay_without_recordings_lists_missing_pairs() {
    let dirs = tempfile::tempdir().unwrap();
    let (profiles, matches) = fixtures::synthetic_speed_dating(8, 5);
    let gateway = Gateway::replay(store_at(&dirs.path().join("empty-cache")));
    let store = store_at(&dirs.path().join("artifacts"));
    let templates = TemplateLibrary::builtin();
    match run_speed_dating_experiment(
        &profiles,
        &matches,
        &BTreeMap::new(),
        &gateway,
        &templates,
        &store,
        &sd_config(),
    ) {
        Err(EvalError::MissingRecordings(pairs)) => {
            assert_eq!(pairs.len(), 8);
        }
        other => panic!("expected MissingRecordings, got {other:?}"),
    }
}

#[test]
fn divorce_experiment_reports_baseline_and_observer() {
    let dirs = tempfile::tempdir().unwrap();
    let surveys = fixtures::synthetic_divorce(30, 6);
    let provider = fixtures::scripted_provider(fixtures::divorce_label_table(&surveys), 1.0, 2);
    let gateway = Gateway::record_with_mock(provider, store_at(&dirs.path().join("cache")));
    let store = store_at(&dirs.path().join("artifacts"));
    let templates = TemplateLibrary::builtin();
    let mut config = DivorceExperimentConfig::default();
    config.workers = 2;

    let output =
        run_divorce_experiment(&surveys, &gateway, &templates, &store, &config).unwrap();
    let methods: Vec<&str> = output.reports.iter().map(|r| r.method_name.as_str()).collect();
    assert_eq!(methods, vec!["logistic_regression", "observer"]);

    // 30 couples - 10 ICL references = 20 in the split.
    let baseline = &output.reports[0];
    assert_eq!(baseline.n_train + baseline.n_test, 20);

    // The synthetic surveys separate classes, so the baseline should be
    // strong; the observer runs on oracle-quality mock ratings.
    assert!(baseline.f1 >= 0.9, "baseline F1 {}", baseline.f1);
    let observer = &output.reports[1];
    assert!(observer.f1 >= 0.9, "observer F1 {}", observer.f1);

    let correlations = output.feature_label_correlations.as_ref().unwrap();
    assert_eq!(correlations.len(), 54);
    assert!(correlations.iter().any(|c| c.abs() > 0.5));
}

#[test]
fn identical_surveys_degenerate_with_a_variance_warning() {
    let dirs = tempfile::tempdir().unwrap();
    let mut surveys = fixtures::synthetic_divorce(30, 6);
    for (i, s) in surveys.iter_mut().enumerate() {
        s.answers = vec![2; 54];
        s.outcome_label = i % 2 == 0;
    }
    let provider = fixtures::scripted_provider(fixtures::divorce_label_table(&surveys), 1.0, 2);
    let gateway = Gateway::record_with_mock(provider, store_at(&dirs.path().join("cache")));
    let store = store_at(&dirs.path().join("artifacts"));
    let templates = TemplateLibrary::builtin();
    let config = DivorceExperimentConfig::default();

    let output =
        run_divorce_experiment(&surveys, &gateway, &templates, &store, &config).unwrap();
    assert!(output.warnings.iter().any(|w| w.contains("single value")));
    let baseline = &output.reports[0];
    // Constant features leave only the bias: a base-rate predictor.
    assert!(baseline.auc == 0.5, "AUC {}", baseline.auc);
}
