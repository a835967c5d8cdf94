//! Divorce experiment: logistic regression on the 54 survey features vs
//! the observer pipeline (personas, personalized critical events,
//! simulation, ICL-calibrated external rating).
//!
//! Ten couples (5 divorced, 5 married) are held out as in-context
//! references before splitting; they never reach the test set, and the run
//! aborts if they would. The survey features correlate heavily with the
//! label, so per-feature correlations are reported alongside the baseline.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::dataio::{ArtifactStore, DivorceSurvey};
use crate::gateway::{Gateway, GatewayMode};
use crate::observer::{CalibrationSet, ExternalContext, Observer, ObserverConfig};
use crate::persona::{PersonaConfig, PersonaGenerator, PersonaSource, SpouseRole};
use crate::reward::{divorce_score_transform, logreg_with_sweep};
use crate::templates::TemplateLibrary;
use crate::world::{WorldConfig, WorldEngine};

use super::speed_dating::ExperimentOutput;
use super::{
    auc_score, choose_threshold_max_f1, f1_score, stratified_split, EvalError, MetricReport,
    SplitSpec, REPORT_KIND,
};

#[derive(Debug, Clone)]
pub struct DivorceExperimentConfig {
    pub split: SplitSpec,
    pub lambda_grid: Vec<f64>,
    pub max_iters: u32,
    pub tolerance: f64,
    /// Held-out reference couples per class.
    pub icl_per_class: usize,
    pub events: usize,
    pub rounds_per_event: usize,
    pub workers: usize,
    pub persona: PersonaConfig,
    pub world: WorldConfig,
    pub observer: ObserverConfig,
}

impl Default for DivorceExperimentConfig {
    fn default() -> Self {
        DivorceExperimentConfig {
            split: SplitSpec::default(),
            lambda_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            max_iters: 500,
            tolerance: 1e-8,
            icl_per_class: 5,
            events: 3,
            rounds_per_event: 2,
            workers: 1,
            persona: PersonaConfig::default(),
            world: WorldConfig::default(),
            observer: ObserverConfig::default(),
        }
    }
}

fn survey_summary(survey: &DivorceSurvey) -> String {
    let mean: f64 =
        survey.answers.iter().map(|&a| a as f64).sum::<f64>() / survey.answers.len() as f64;
    let head: Vec<String> = survey.answers.iter().take(10).map(|a| a.to_string()).collect();
    format!("answer mean {mean:.2}, first answers: {}", head.join(" "))
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx).powi(2);
        vy += (y - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx.sqrt() * vy.sqrt()))
    }
}

/// Runs the survey-feature baseline and the critical-events observer
/// pipeline on the same split, ICL couples excluded from both.
pub fn run_divorce_experiment(
    surveys: &[DivorceSurvey],
    gateway: &Gateway,
    templates: &TemplateLibrary,
    store: &ArtifactStore,
    config: &DivorceExperimentConfig,
) -> Result<ExperimentOutput, EvalError> {
    let mut warnings = Vec::new();
    let mut excluded = Vec::new();

    let mut sorted: Vec<&DivorceSurvey> = surveys.iter().collect();
    sorted.sort_by(|a, b| a.couple_id.cmp(&b.couple_id));

    // Hold out the calibration references first: a seeded shuffle per
    // class, taking icl_per_class of each.
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut icl_ids: BTreeSet<String> = BTreeSet::new();
    for class in [true, false] {
        let mut candidates: Vec<&&DivorceSurvey> =
            sorted.iter().filter(|s| s.outcome_label == class).collect();
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(config.split.seed.wrapping_add(100 + class as u64));
        candidates.shuffle(&mut rng);
        for survey in candidates.into_iter().take(config.icl_per_class) {
            icl_ids.insert(survey.couple_id.clone());
        }
    }
    let icl_surveys: Vec<&DivorceSurvey> =
        sorted.iter().filter(|s| icl_ids.contains(&s.couple_id)).copied().collect();
    let working: Vec<&DivorceSurvey> =
        sorted.iter().filter(|s| !icl_ids.contains(&s.couple_id)).copied().collect();
    if working.len() < 4 {
        return Err(EvalError::TooSmall(format!(
            "{} couples left after holding out references",
            working.len()
        )));
    }

    let labels: Vec<bool> = working.iter().map(|s| s.outcome_label).collect();
    let (train_idx, test_idx) = stratified_split(&labels, config.split);

    // Leakage gate: no reference couple may appear in the test split.
    let leaked: Vec<String> = test_idx
        .iter()
        .map(|&i| working[i].couple_id.clone())
        .filter(|id| icl_ids.contains(id))
        .collect();
    if !leaked.is_empty() {
        return Err(EvalError::Leakage(leaked));
    }

    let n_train = train_idx.len();
    let n_test = test_idx.len();
    let train_labels: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
    let test_labels: Vec<bool> = test_idx.iter().map(|&i| labels[i]).collect();
    let mut reports = Vec::new();

    // Survey-feature logistic baseline with per-feature correlations.
    let features_of =
        |s: &DivorceSurvey| -> Vec<f64> { s.answers.iter().map(|&a| a as f64).collect() };
    let train_features: Vec<Vec<f64>> = train_idx.iter().map(|&i| features_of(working[i])).collect();
    let train_label_nums: Vec<f64> =
        train_labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();
    let correlations: Vec<f64> = (0..54)
        .map(|feature| {
            let column: Vec<f64> = train_features.iter().map(|x| x[feature]).collect();
            match pearson(&column, &train_label_nums) {
                Some(c) => c,
                None => {
                    warnings.push(format!(
                        "feature {} has a single value on the training split",
                        feature + 1
                    ));
                    0.0
                }
            }
        })
        .collect();

    let swept = logreg_with_sweep(
        &train_features,
        &train_labels,
        &config.lambda_grid,
        config.split.seed.wrapping_add(2),
        config.max_iters,
        config.tolerance,
    )?;
    let selected_lambda = swept.selected_lambda;
    {
        let train_scores: Vec<f64> =
            train_features.iter().map(|x| swept.model.predict_proba(x)).collect();
        let threshold = choose_threshold_max_f1(&train_scores, &train_labels)?;
        let test_scores: Vec<f64> = test_idx
            .iter()
            .map(|&i| swept.model.predict_proba(&features_of(working[i])))
            .collect();
        let predictions: Vec<bool> = test_scores.iter().map(|&s| s >= threshold).collect();
        reports.push(MetricReport {
            method_name: "logistic_regression".into(),
            f1: f1_score(&predictions, &test_labels)?,
            auc: auc_score(&test_scores, &test_labels)?,
            threshold,
            split_spec: config.split,
            n_train,
            n_test,
        });
    }

    // Observer pipeline: persona -> critical events -> simulation ->
    // ICL-calibrated external rating -> compatibility.
    let icl = CalibrationSet::divorce_references(
        icl_surveys
            .iter()
            .map(|s| (survey_summary(s), s.outcome_label))
            .collect(),
    );
    let generator = PersonaGenerator::new(gateway, templates, Some(store), config.persona.clone());
    let world_engine = WorldEngine::new(gateway, templates, Some(store), config.world.clone());
    let observer = Observer::new(gateway, templates, Some(store), config.observer.clone());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .expect("worker pool");
    let results: Vec<(usize, Result<f64, EvalError>)> = pool.install(|| {
        working
            .par_iter()
            .enumerate()
            .map(|(i, survey)| {
                let outcome = (|| -> Result<f64, EvalError> {
                    let p_h = generator.generate(&PersonaSource::DivorceRole {
                        survey,
                        role: SpouseRole::Husband,
                    })?;
                    let p_w = generator.generate(&PersonaSource::DivorceRole {
                        survey,
                        role: SpouseRole::Wife,
                    })?;
                    let events =
                        world_engine.generate_critical_events(&p_h, &p_w, &icl, config.events)?;
                    let trajectory = world_engine.simulate_critical_events(
                        &p_h,
                        &p_w,
                        &events,
                        config.rounds_per_event,
                        &icl,
                    )?;
                    let (likelihood, _analysis) = observer
                        .rate_external(&trajectory, &ExternalContext::Divorce { survey, icl: &icl })?;
                    Ok(divorce_score_transform(likelihood)?)
                })();
                (i, outcome)
            })
            .collect()
    });

    let mut compatibility: std::collections::BTreeMap<usize, f64> = Default::default();
    let mut missing = Vec::new();
    for (i, outcome) in results {
        match outcome {
            Ok(score) => {
                compatibility.insert(i, score);
            }
            Err(e) => {
                if gateway.mode() == GatewayMode::Replay && super::speed_dating::is_replay_miss(&e)
                {
                    missing.push(working[i].couple_id.clone());
                } else {
                    tracing::warn!("couple {} excluded: {e}", working[i].couple_id);
                    excluded.push((working[i].couple_id.clone(), e.to_string()));
                }
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(EvalError::MissingRecordings(missing));
    }

    {
        let train: Vec<usize> =
            train_idx.iter().copied().filter(|i| compatibility.contains_key(i)).collect();
        let test: Vec<usize> =
            test_idx.iter().copied().filter(|i| compatibility.contains_key(i)).collect();
        if train.len() < 2 || test.len() < 2 {
            return Err(EvalError::TooSmall(format!(
                "{} train / {} test couples after exclusions",
                train.len(),
                test.len()
            )));
        }
        let train_scores: Vec<f64> = train.iter().map(|&i| compatibility[&i]).collect();
        let train_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let threshold = choose_threshold_max_f1(&train_scores, &train_labels)?;
        let test_scores: Vec<f64> = test.iter().map(|&i| compatibility[&i]).collect();
        let test_labels: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        let predictions: Vec<bool> = test_scores.iter().map(|&s| s >= threshold).collect();
        reports.push(MetricReport {
            method_name: "observer".into(),
            f1: f1_score(&predictions, &test_labels)?,
            auc: auc_score(&test_scores, &test_labels)?,
            threshold,
            split_spec: config.split,
            n_train: train.len(),
            n_test: test.len(),
        });
    }

    let output = ExperimentOutput {
        reports,
        warnings,
        excluded,
        selected_lambda,
        feature_label_correlations: Some(correlations),
    };
    store.persist_json(REPORT_KIND, "divorce", &output)?;
    Ok(output)
}
