//! Speed-dating experiment: four methods on one stratified split.
//!
//! Stage 1 uses pre-dating information only; stage 2 additionally feeds the
//! dataset's during-date columns to the logistic baseline. The two LLM
//! methods go through the full simulate-then-rate pipeline: observer-only
//! classifies on r3 alone, mixed on the trained linear combiner.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{ArtifactStore, MatchRecord, PairKey, SpeedDatingProfile};
use crate::gateway::{Gateway, GatewayError, GatewayMode};
use crate::observer::{
    CalibrationExample, CalibrationSet, ExternalContext, Observer, ObserverConfig, ObserverError,
    RatingVector,
};
use crate::persona::{PersonaConfig, PersonaGenerator, PersonaNarrative, PersonaSource};
use crate::reward::{self, logreg_with_sweep};
use crate::templates::TemplateLibrary;
use crate::world::{WorldConfig, WorldEngine};

use super::{
    auc_score, choose_threshold_max_f1, f1_score, stratified_split, EvalError, MetricReport,
    SplitSpec, REPORT_KIND,
};

#[derive(Debug, Clone)]
pub struct SpeedDatingExperimentConfig {
    pub stage: u8,
    pub split: SplitSpec,
    pub combiner_lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub max_iters: u32,
    pub tolerance: f64,
    pub rounds: usize,
    /// Balanced in-context examples for the external observer; 0 disables.
    pub icl_per_class: usize,
    pub workers: usize,
    pub persona: PersonaConfig,
    pub world: WorldConfig,
    pub observer: ObserverConfig,
}

impl Default for SpeedDatingExperimentConfig {
    fn default() -> Self {
        SpeedDatingExperimentConfig {
            stage: 1,
            split: SplitSpec::default(),
            combiner_lambda: 1e-3,
            lambda_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            max_iters: 500,
            tolerance: 1e-8,
            rounds: 5,
            icl_per_class: 5,
            workers: 1,
            persona: PersonaConfig::default(),
            world: WorldConfig::default(),
            observer: ObserverConfig::default(),
        }
    }
}

/// Everything one experiment run produced; persisted whole for replay
/// comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub reports: Vec<MetricReport>,
    pub warnings: Vec<String>,
    /// Pairs dropped before evaluation, with reasons.
    pub excluded: Vec<(String, String)>,
    pub selected_lambda: f64,
    /// Divorce runs also report per-feature label correlations.
    pub feature_label_correlations: Option<Vec<f64>>,
}

fn persona_summary(narrative: &PersonaNarrative) -> String {
    let words: Vec<&str> = narrative.text.split_whitespace().take(30).collect();
    words.join(" ")
}

fn pair_feature_vector(
    a: &SpeedDatingProfile,
    b: &SpeedDatingProfile,
    during: Option<&Vec<f64>>,
    during_dim: usize,
    stage: u8,
) -> Vec<f64> {
    let mut v = a.feature_vector();
    v.extend(b.feature_vector());
    if stage >= 2 {
        match during {
            Some(d) => v.extend(d.iter().copied()),
            None => v.extend(std::iter::repeat(0.0).take(during_dim)),
        }
    }
    v
}

/// Runs logistic-regression and cosine baselines plus the observer-only and
/// mixed-combiner methods on a stratified split of the match records.
pub fn run_speed_dating_experiment(
    profiles: &[SpeedDatingProfile],
    matches: &[MatchRecord],
    during_date: &BTreeMap<PairKey, Vec<f64>>,
    gateway: &Gateway,
    templates: &TemplateLibrary,
    store: &ArtifactStore,
    config: &SpeedDatingExperimentConfig,
) -> Result<ExperimentOutput, EvalError> {
    let mut warnings = Vec::new();
    let mut excluded = Vec::new();

    let by_id: BTreeMap<&str, &SpeedDatingProfile> =
        profiles.iter().map(|p| (p.participant_id.as_str(), p)).collect();
    let mut kept: Vec<&MatchRecord> = Vec::new();
    for record in matches {
        if by_id.contains_key(record.pair.first()) && by_id.contains_key(record.pair.second()) {
            kept.push(record);
        } else {
            excluded.push((record.pair.to_string(), "missing profile".into()));
        }
    }
    if kept.len() < 4 {
        return Err(EvalError::TooSmall(format!("{} usable pairs", kept.len())));
    }

    // Personas for every participant that appears in a kept pair. A
    // replay cache miss here surfaces as missing recordings for every pair
    // the participant is in; other persona failures exclude those pairs.
    let mut subject_ids: Vec<&str> = kept
        .iter()
        .flat_map(|r| [r.pair.first(), r.pair.second()])
        .collect();
    subject_ids.sort();
    subject_ids.dedup();
    let generator = PersonaGenerator::new(gateway, templates, Some(store), config.persona.clone());
    let mut narratives: BTreeMap<String, PersonaNarrative> = BTreeMap::new();
    let mut persona_miss: BTreeSet<String> = BTreeSet::new();
    let mut persona_failed: BTreeMap<String, String> = BTreeMap::new();
    for id in &subject_ids {
        match generator.generate(&PersonaSource::SpeedDating(by_id[id])) {
            Ok(narrative) => {
                narratives.insert(id.to_string(), narrative);
            }
            Err(e) => {
                let wrapped = EvalError::from(e);
                if gateway.mode() == GatewayMode::Replay && is_replay_miss(&wrapped) {
                    persona_miss.insert(id.to_string());
                } else {
                    persona_failed.insert(id.to_string(), wrapped.to_string());
                }
            }
        }
    }
    if !persona_miss.is_empty() {
        let mut missing: Vec<String> = kept
            .iter()
            .filter(|r| {
                persona_miss.contains(r.pair.first()) || persona_miss.contains(r.pair.second())
            })
            .map(|r| r.pair.to_string())
            .collect();
        missing.sort();
        return Err(EvalError::MissingRecordings(missing));
    }
    let kept: Vec<&MatchRecord> = kept
        .into_iter()
        .filter(|r| {
            let lost = [r.pair.first(), r.pair.second()]
                .iter()
                .find(|id| persona_failed.contains_key(**id))
                .map(|id| persona_failed[*id].clone());
            match lost {
                Some(reason) => {
                    excluded.push((r.pair.to_string(), reason));
                    false
                }
                None => true,
            }
        })
        .collect();
    let labels: Vec<bool> = kept.iter().map(|r| r.label).collect();
    let (train_idx, test_idx) = stratified_split(&labels, config.split);

    // Balanced calibration examples drawn from the training split.
    let icl = if config.icl_per_class > 0 {
        let mut examples = Vec::new();
        for class in [true, false] {
            let picked = train_idx
                .iter()
                .filter(|&&i| kept[i].label == class)
                .take(config.icl_per_class);
            for &i in picked {
                let record = kept[i];
                let summary = format!(
                    "{} | {}",
                    persona_summary(&narratives[record.pair.first()]),
                    persona_summary(&narratives[record.pair.second()])
                );
                examples.push(CalibrationExample {
                    summary,
                    label: record.label,
                    reference_score: None,
                });
            }
        }
        Some(CalibrationSet::new(examples))
    } else {
        None
    };

    // Simulate and rate every kept pair.
    let world_engine = WorldEngine::new(gateway, templates, Some(store), config.world.clone());
    let observer = Observer::new(gateway, templates, Some(store), config.observer.clone());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .expect("worker pool");
    let results: Vec<(usize, Result<RatingVector, EvalError>)> = pool.install(|| {
        kept.par_iter()
            .enumerate()
            .map(|(i, record)| {
                let p1 = &narratives[record.pair.first()];
                let p2 = &narratives[record.pair.second()];
                let outcome = (|| -> Result<RatingVector, EvalError> {
                    let trajectory = world_engine.simulate_speed_date(p1, p2, config.rounds)?;
                    observer
                        .rate_pair(
                            &trajectory,
                            p1,
                            p2,
                            &ExternalContext::SpeedDating { p1, p2, icl: icl.as_ref() },
                        )
                        .map_err(EvalError::from)
                })();
                (i, outcome)
            })
            .collect()
    });

    let mut rated: BTreeMap<usize, RatingVector> = BTreeMap::new();
    let mut missing_recordings = Vec::new();
    for (i, outcome) in results {
        match outcome {
            Ok(r) => {
                rated.insert(i, r);
            }
            Err(e) => {
                if gateway.mode() == GatewayMode::Replay && is_replay_miss(&e) {
                    missing_recordings.push(kept[i].pair.to_string());
                } else {
                    tracing::warn!("pair {} excluded: {e}", kept[i].pair);
                    excluded.push((kept[i].pair.to_string(), e.to_string()));
                }
            }
        }
    }
    if !missing_recordings.is_empty() {
        missing_recordings.sort();
        return Err(EvalError::MissingRecordings(missing_recordings));
    }

    // Index sets restricted to successfully rated pairs.
    let train: Vec<usize> = train_idx.iter().copied().filter(|i| rated.contains_key(i)).collect();
    let test: Vec<usize> = test_idx.iter().copied().filter(|i| rated.contains_key(i)).collect();
    let n_train = train.len();
    let n_test = test.len();
    if n_train < 2 || n_test < 2 {
        return Err(EvalError::TooSmall(format!(
            "{n_train} train / {n_test} test pairs after exclusions"
        )));
    }
    let label_of = |i: usize| kept[i].label;
    let train_labels: Vec<bool> = train.iter().map(|&i| label_of(i)).collect();
    let test_labels: Vec<bool> = test.iter().map(|&i| label_of(i)).collect();

    let during_dim = during_date.values().map(Vec::len).max().unwrap_or(0);
    if config.stage >= 2 && during_dim == 0 {
        warnings.push("stage 2 requested but no during-date columns are mapped".into());
    }
    let features_of = |i: usize| {
        let record = kept[i];
        pair_feature_vector(
            by_id[record.pair.first()],
            by_id[record.pair.second()],
            during_date.get(&record.pair),
            during_dim,
            config.stage,
        )
    };

    let mut reports = Vec::new();
    let make_report = |method: &str, threshold: f64, f1: f64, auc: f64| MetricReport {
        method_name: method.into(),
        f1,
        auc,
        threshold,
        split_spec: config.split,
        n_train,
        n_test,
    };

    // Logistic-regression baseline with the lambda sweep.
    let train_features: Vec<Vec<f64>> = train.iter().map(|&i| features_of(i)).collect();
    let swept = logreg_with_sweep(
        &train_features,
        &train_labels,
        &config.lambda_grid,
        config.split.seed.wrapping_add(1),
        config.max_iters,
        config.tolerance,
    )?;
    let selected_lambda = swept.selected_lambda;
    {
        let train_scores: Vec<f64> =
            train_features.iter().map(|x| swept.model.predict_proba(x)).collect();
        let threshold = choose_threshold_max_f1(&train_scores, &train_labels)?;
        let test_scores: Vec<f64> =
            test.iter().map(|&i| swept.model.predict_proba(&features_of(i))).collect();
        let predictions: Vec<bool> = test_scores.iter().map(|&s| s >= threshold).collect();
        reports.push(make_report(
            "logistic_regression",
            threshold,
            f1_score(&predictions, &test_labels)?,
            auc_score(&test_scores, &test_labels)?,
        ));
    }

    // Cosine-similarity baseline over raw profile vectors.
    {
        let cosine_of = |i: usize| {
            let record = kept[i];
            reward::baseline_cosine(
                &by_id[record.pair.first()].feature_vector(),
                &by_id[record.pair.second()].feature_vector(),
            )
            .map_err(EvalError::from)
        };
        let train_scores: Vec<f64> =
            train.iter().map(|&i| cosine_of(i)).collect::<Result<_, _>>()?;
        let threshold = choose_threshold_max_f1(&train_scores, &train_labels)?;
        let test_scores: Vec<f64> = test.iter().map(|&i| cosine_of(i)).collect::<Result<_, _>>()?;
        let predictions: Vec<bool> = test_scores.iter().map(|&s| s >= threshold).collect();
        reports.push(make_report(
            "cosine_similarity",
            threshold,
            f1_score(&predictions, &test_labels)?,
            auc_score(&test_scores, &test_labels)?,
        ));
    }

    // Observer-only: classify on r3 alone.
    {
        let train_scores: Vec<f64> = train.iter().map(|&i| rated[&i].r3).collect();
        let threshold = choose_threshold_max_f1(&train_scores, &train_labels)?;
        let test_scores: Vec<f64> = test.iter().map(|&i| rated[&i].r3).collect();
        let predictions: Vec<bool> = test_scores.iter().map(|&s| s >= threshold).collect();
        reports.push(make_report(
            "observer",
            threshold,
            f1_score(&predictions, &test_labels)?,
            auc_score(&test_scores, &test_labels)?,
        ));
    }

    // Mixed: learned linear combination of (r1, r2, r3).
    {
        let train_data: Vec<(RatingVector, bool)> = train
            .iter()
            .map(|&i| (rated[&i].clone(), label_of(i)))
            .collect();
        let trained = reward::train_combiner(
            &train_data,
            config.combiner_lambda,
            config.max_iters,
            config.tolerance,
        )?;
        let train_scores: Vec<f64> = train
            .iter()
            .map(|&i| reward::score(&trained.weights, &rated[&i]).value)
            .collect();
        let threshold = choose_threshold_max_f1(&train_scores, &train_labels)?;
        let test_scores: Vec<f64> = test
            .iter()
            .map(|&i| reward::score(&trained.weights, &rated[&i]).value)
            .collect();
        let predictions: Vec<bool> = test_scores.iter().map(|&s| s >= threshold).collect();
        reports.push(make_report(
            "mixed",
            threshold,
            f1_score(&predictions, &test_labels)?,
            auc_score(&test_scores, &test_labels)?,
        ));
        store.persist_json("weights", "combiner_speed_dating", &trained)?;
    }

    let output = ExperimentOutput {
        reports,
        warnings,
        excluded,
        selected_lambda,
        feature_label_correlations: None,
    };
    store.persist_json(REPORT_KIND, &format!("speed_dating_stage{}", config.stage), &output)?;
    Ok(output)
}

pub(super) fn is_replay_miss(e: &EvalError) -> bool {
    fn gateway_miss(g: &GatewayError) -> bool {
        matches!(g, GatewayError::ReplayMiss { .. })
    }
    match e {
        EvalError::Gateway(g) => gateway_miss(g),
        EvalError::Persona(crate::persona::PersonaError::Gateway(g)) => gateway_miss(g),
        EvalError::World(crate::world::WorldError::Gateway(g)) => gateway_miss(g),
        EvalError::Observer(ObserverError::Gateway(g)) => gateway_miss(g),
        _ => false,
    }
}
