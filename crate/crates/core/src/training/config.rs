//! Run configuration and the named presets.
//!
//! Configs are TOML with one section per concern (`[run]`, `[dataset]`,
//! `[batch]`, `[model]`, `[loss]`, `[optimizer]`, `[eval]`). Every artifact
//! the pipeline writes carries the fully resolved config as comment lines.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::OptimizerSettings;
use crate::data::{BatchMode, BatchPlan, SyntheticDatasetSpec};
use crate::error::{Error, Result};
use crate::losses::{AmSoftmaxParams, CenterStore, Ge2eParams, LossComposite, LossKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub steps: usize,
    /// Record a heldout evaluation every this many steps; 0 disables.
    pub eval_interval: usize,
    /// Include wall-clock time in the metric log, which makes logs differ
    /// between otherwise identical runs.
    pub log_wall_time: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            steps: 2000,
            eval_interval: 0,
            log_wall_time: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Input, hidden and embedding widths.
    pub layer_dims: Vec<usize>,
    pub leaky_slope: f64,
    /// Apply the activation to the embedding layer as well.
    pub activate_output: bool,
    /// Classifier bias; defaults to on exactly when the softmax loss is used.
    pub use_bias: Option<bool>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layer_dims: vec![32, 64, 64],
            leaky_slope: 0.01,
            activate_output: false,
            use_bias: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossTerm {
    pub kind: LossKind,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub terms: Vec<LossTerm>,
    /// Center-loss weight λ.
    pub lambda: f64,
    /// Center update rate α.
    pub alpha: f64,
    pub scale: f64,
    pub margin: f64,
    /// Hard-negative set size H (clamped to N − 1).
    pub hard_negatives: usize,
    pub ge2e_w_score: f64,
    pub ge2e_b_score: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let am = AmSoftmaxParams::default();
        let ge2e = Ge2eParams::default();
        Self {
            terms: vec![LossTerm {
                kind: LossKind::Softmax,
                weight: 1.0,
            }],
            lambda: 0.001,
            alpha: 0.5,
            scale: am.scale,
            margin: am.margin,
            hard_negatives: 100,
            ge2e_w_score: ge2e.w_score,
            ge2e_b_score: ge2e.b_score,
        }
    }
}

impl LossSection {
    pub fn composite(&self) -> Result<LossComposite> {
        LossComposite::new(self.terms.iter().map(|t| (t.kind, t.weight)).collect())
    }

    pub fn am_softmax(&self) -> Result<AmSoftmaxParams> {
        AmSoftmaxParams::new(self.scale, self.margin)
    }

    pub fn ge2e(&self) -> Ge2eParams {
        Ge2eParams {
            w_score: self.ge2e_w_score,
            b_score: self.ge2e_b_score,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringBackend {
    Cosine,
    Bvector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub seed: u64,
    pub per_speaker_targets: usize,
    /// Impostor trials per target trial.
    pub impostor_ratio: f64,
    pub backend: ScoringBackend,
    /// L2-normalize embeddings before scoring.
    pub normalize: bool,
    pub histogram_bins: usize,
    /// b-vector hidden width as a multiple of the embedding dim.
    pub bvector_width_factor: usize,
    pub bvector_steps: usize,
    pub bvector_batch: usize,
    pub bvector_learning_rate: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            seed: 1,
            per_speaker_targets: 20,
            impostor_ratio: 1.0,
            backend: ScoringBackend::Cosine,
            normalize: false,
            histogram_bins: 20,
            bvector_width_factor: 4,
            bvector_steps: 400,
            bvector_batch: 64,
            bvector_learning_rate: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: SyntheticDatasetSpec,
    pub batch: BatchPlan,
    pub model: ModelSection,
    pub loss: LossSection,
    pub optimizer: OptimizerSettings,
    pub eval: EvalSection,
}

pub const PRESET_NAMES: [&str; 7] = [
    "softmax",
    "center",
    "amsoftmax",
    "ge2e",
    "proposed1",
    "proposed2",
    "proposed2_h50",
];

impl RunConfig {
    /// Named loss setups at toy scale: 50 speakers × 40 utterances, 32-dim
    /// features, batch 100, 2000 Adam steps at learning rate 0.001.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        use LossKind::*;
        let mut cfg = RunConfig::default();
        let (kinds, weight_decay): (&[LossKind], f64) = match name {
            "softmax" => (&[Softmax], 0.0),
            "center" => (&[Softmax, Center], 0.0),
            "amsoftmax" => (&[AmSoftmax], 1e-4),
            "ge2e" => (&[Ge2e], 1e-4),
            "proposed1" => (&[Softmax, Center, BetweenClass], 0.0),
            "proposed2" => (&[HardNegative, BetweenClass], 1e-4),
            "proposed2_h50" => {
                cfg.loss.hard_negatives = 50;
                (&[HardNegative, BetweenClass], 1e-4)
            }
            other => {
                return Err(Error::config(
                    "preset",
                    format!("unknown preset `{other}`; expected one of {}", PRESET_NAMES.join(", ")),
                ))
            }
        };
        cfg.loss.terms = kinds.iter().map(|&kind| LossTerm { kind, weight: 1.0 }).collect();
        cfg.optimizer.weight_decay = weight_decay;
        if kinds.contains(&Ge2e) {
            cfg.batch.mode = BatchMode::SpeakerGrouped;
            cfg.batch.utterances_per_speaker = 5;
        }
        cfg.with_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets every seed in the config.
    pub fn with_seed(&mut self, seed: u64) {
        self.run.seed = seed;
        self.dataset.seed = seed;
        self.batch.seed = seed;
        self.eval.seed = seed;
    }

    pub fn use_bias(&self) -> bool {
        self.model
            .use_bias
            .unwrap_or_else(|| self.loss.terms.iter().any(|t| t.kind == LossKind::Softmax && t.weight > 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset
            .validate()
            .map_err(|e| Error::config("dataset", e.to_string()))?;
        self.batch
            .validate()
            .map_err(|e| Error::config("batch", e.to_string()))?;
        let composite = self.loss.composite()?;
        if composite.contains(LossKind::Ge2e) && self.batch.mode != BatchMode::SpeakerGrouped {
            return Err(Error::config(
                "batch.mode",
                "the ge2e loss computes per-speaker centroids and needs speaker_grouped batches \
                 with several utterances per speaker",
            ));
        }
        if composite.contains(LossKind::Ge2e) && self.batch.speakers_per_batch() < 2 {
            return Err(Error::config("batch.batch_size", "ge2e needs at least 2 speakers per batch"));
        }
        if composite.contains(LossKind::HardNegative) && self.loss.hard_negatives == 0 {
            return Err(Error::config("loss.hard_negatives", "must be >= 1"));
        }
        if composite.contains(LossKind::AmSoftmax) {
            self.loss.am_softmax()?;
        }
        if composite.contains(LossKind::Center) {
            CenterStore::zeros(1, 1, self.loss.alpha, self.loss.lambda)?;
        }
        if composite.contains(LossKind::Ge2e) && !(self.loss.ge2e_w_score > 0.0) {
            return Err(Error::config("loss.ge2e_w_score", "must be > 0"));
        }
        let dims = &self.model.layer_dims;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config("model.layer_dims", "need at least two non-zero widths"));
        }
        if dims[0] != self.dataset.feature_dim {
            return Err(Error::config(
                "model.layer_dims",
                format!(
                    "input width {} does not match dataset.feature_dim {}",
                    dims[0], self.dataset.feature_dim
                ),
            ));
        }
        self.optimizer.validate()?;
        if self.eval.histogram_bins < 2 {
            return Err(Error::config("eval.histogram_bins", "need at least 2 bins"));
        }
        if !(self.eval.impostor_ratio > 0.0 && self.eval.impostor_ratio.is_finite()) {
            return Err(Error::config("eval.impostor_ratio", "must be finite and > 0"));
        }
        if self.eval.per_speaker_targets == 0 {
            return Err(Error::config("eval.per_speaker_targets", "must be >= 1"));
        }
        if self.eval.bvector_width_factor == 0 || self.eval.bvector_batch == 0 {
            return Err(Error::config("eval.bvector_width_factor", "b-vector width and batch must be >= 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::parse("run config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}
