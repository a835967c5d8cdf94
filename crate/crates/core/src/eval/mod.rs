//! Classification metrics, deterministic splits, and the two experiment
//! pipelines (speed-dating stages 1-2, divorce critical events).
//!
//! Published reference points for these pipelines on the full datasets with
//! live providers: speed-dating stage 1 observer F1 0.67 / AUC 0.60 vs
//! logistic regression 0.66 / 0.61; divorce logistic regression F1 0.95 /
//! AUC 1.00 vs observer 0.90 / 0.92. Those depend on specific proprietary
//! models, so they are context for reading reports, not assertions.

mod divorce;
mod metrics;
mod speed_dating;

pub use divorce::{run_divorce_experiment, DivorceExperimentConfig};
pub use metrics::{auc_score, choose_threshold_max_f1, f1_score};
pub use speed_dating::{run_speed_dating_experiment, ExperimentOutput, SpeedDatingExperimentConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::DataIoError;
use crate::gateway::GatewayError;
use crate::matching::MatchingError;
use crate::observer::ObserverError;
use crate::persona::PersonaError;
use crate::reward::RewardError;
use crate::world::WorldError;

/// Artifact kind experiment outputs are stored under.
pub const REPORT_KIND: &str = "reports";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("metric undefined: labels contain a single class")]
    SingleClassLabels,
    #[error("ICL calibration couples overlap the test split: {0:?}")]
    Leakage(Vec<String>),
    #[error("replay cache is missing recordings for pairs: {0:?}")]
    MissingRecordings(Vec<String>),
    #[error("dataset too small: {0}")]
    TooSmall(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] DataIoError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
}

/// How a dataset was divided; recorded on every report so the split is
/// reconstructible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { seed: 17, train_fraction: 0.8 }
    }
}

/// One method's scores on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method_name: String,
    pub f1: f64,
    pub auc: f64,
    pub threshold: f64,
    pub split_spec: SplitSpec,
    pub n_train: usize,
    pub n_test: usize,
}

/// Stratified index split: labels keep their base rate on both sides.
/// Identical inputs and seed give identical membership.
pub fn stratified_split(labels: &[bool], spec: SplitSpec) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut indices: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(class as u64));
        indices.shuffle(&mut rng);
        let n_train = (indices.len() as f64 * spec.train_fraction).round() as usize;
        let n_train = n_train.min(indices.len());
        train.extend_from_slice(&indices[..n_train]);
        test.extend_from_slice(&indices[n_train..]);
    }
    train.sort();
    test.sort();
    (train, test)
}

/// Aligned text table mirroring the published comparison layout.
pub fn render_report_table(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<24} {:>6} {:>6} {:>10}\n", "Method", "F1", "AUC", "threshold"));
    out.push_str(&format!("{}\n", "-".repeat(50)));
    for r in reports {
        out.push_str(&format!(
            "{:<24} {:>6.3} {:>6.3} {:>10.4}\n",
            r.method_name, r.f1, r.auc, r.threshold
        ));
    }
    out
}
