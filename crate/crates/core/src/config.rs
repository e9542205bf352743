//! Experiment configuration: the full reproducibility contract of a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::features::FeatureSource;
use crate::search_space::SearchSpace;
use crate::supernet::{ProbabilityScore, SupernetSettings};
use crate::trainer::TrainSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Every sampled architecture is trained on its own; champions are
    /// picked by early-stop score.
    #[default]
    SeparateTraining,
    /// Architectures are sampled from a trained super-network and
    /// champions are picked by operation-probability sum.
    Supernet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupernetConfig {
    pub epochs: usize,
    pub warmup: usize,
    pub settings: SupernetSettings,
    pub score: ProbabilityScore,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        SupernetConfig {
            epochs: 6,
            warmup: 2,
            settings: SupernetSettings::default(),
            score: ProbabilityScore::RawLogit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSearchConfig {
    pub enabled: bool,
    pub repeats: usize,
}

impl Default for RandomSearchConfig {
    fn default() -> Self {
        RandomSearchConfig {
            enabled: false,
            repeats: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub space: SearchSpace,
    pub dataset: SyntheticSpec,
    pub sigma: f64,
    pub stratified: bool,
    pub eta: usize,
    pub full_epochs: usize,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    /// Number of sampled architectures.
    pub s: usize,
    pub probe_size: usize,
    pub seeds: Vec<u64>,
    pub worker_count: usize,
    pub feature_source: FeatureSource,
    pub mode: SearchMode,
    pub train: TrainSettings,
    pub cluster: ClusterConfig,
    pub supernet: SupernetConfig,
    pub random_search: RandomSearchConfig,
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults: a 27-architecture channel-ratio space on a
    /// 4-class synthetic dataset.
    fn default() -> Self {
        ExperimentConfig {
            space: SearchSpace::toy(3, &[0.5, 1.0, 2.0], 8, [3, 8, 8], 4)
                .expect("valid default space"),
            dataset: SyntheticSpec::default(),
            sigma: 0.25,
            stratified: true,
            eta: 4,
            full_epochs: 40,
            k: 3,
            s: 27,
            probe_size: 64,
            seeds: vec![0],
            worker_count: 1,
            feature_source: FeatureSource::OutputBased,
            mode: SearchMode::SeparateTraining,
            train: TrainSettings::default(),
            cluster: ClusterConfig::default(),
            supernet: SupernetConfig::default(),
            random_search: RandomSearchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.space.input_shape != self.dataset.shape {
            return Err(Error::config(format!(
                "space input {:?} differs from dataset shape {:?}",
                self.space.input_shape, self.dataset.shape
            )));
        }
        if self.space.num_classes != self.dataset.classes {
            return Err(Error::config(
                "space and dataset disagree on the class count",
            ));
        }
        if self.eta == 0 || self.full_epochs == 0 {
            return Err(Error::config("eta and full_epochs must be positive"));
        }
        if self.eta > self.full_epochs {
            return Err(Error::config(format!(
                "eta {} exceeds full_epochs {}",
                self.eta, self.full_epochs
            )));
        }
        if let Some(p) = self.space.size() {
            if self.s as u128 > p {
                return Err(Error::config(format!(
                    "s = {} exceeds space size {p}",
                    self.s
                )));
            }
        }
        if self.k == 0 || self.k > self.s {
            return Err(Error::config(format!(
                "K = {} must lie in 1..=s ({})",
                self.k, self.s
            )));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::config(format!(
                "sigma {} outside (0, 1]",
                self.sigma
            )));
        }
        if self.probe_size == 0 {
            return Err(Error::config("probe_size must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.train.batch_size == 0 || !(self.train.lr >= 0.0) {
            return Err(Error::config("invalid training settings"));
        }
        if self.mode == SearchMode::Supernet && self.supernet.warmup >= self.supernet.epochs {
            return Err(Error::config(
                "supernet warmup must be below supernet epochs",
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Full-training budget of the random-search baseline matched to the
    /// cost of the divide-and-conquer run: `round(s * eta / full_epochs *
    /// sigma) + K`, at least 1 and at most `p`.
    pub fn random_search_budget(&self, eta: usize, k: usize) -> usize {
        let partial =
            (self.s as f64 * eta as f64 / self.full_epochs as f64 * self.sigma).round() as usize;
        let budget = (partial + k).max(1);
        match self.space.size() {
            Some(p) if (budget as u128) > p => p as usize,
            _ => budget,
        }
    }
}
