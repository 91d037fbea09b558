//! The optimization loop.

mod config;
pub mod gradcheck;
mod optim;

use std::path::Path;
use std::time::Instant;

use serde_json::json;

pub use config::{
    EvalSection, LossSection, LossTerm, ModelSection, RunConfig, RunSection, ScoringBackend, PRESET_NAMES,
};
pub use gradcheck::{check_gradient, gradcheck_suite, GradCheckEntry, GradCheckReport, GRADCHECK_TOLERANCE};
pub use optim::{DecayMode, OptimizerKind, OptimizerSettings, OptimizerState, ParamRole, ParamSlot};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{center_update, compose, CenterStore, EmbeddingBatch, LossInputs, LossKind};
use crate::model::{Checkpoint, ClassifierHead, MlpEncoder};
use crate::numeric::{Matrix, SeededRng};

/// RNG streams for initialization sit far above the per-step batch streams.
const ENCODER_INIT_STREAM: u64 = 1 << 63;
const HEAD_INIT_STREAM: u64 = (1 << 63) + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Unweighted value of each active loss.
    pub losses: Vec<(LossKind, f64)>,
    pub total: f64,
    pub grad_norm_embeddings: f64,
    pub grad_norm_encoder: f64,
    pub grad_norm_basis: f64,
    pub wall_time_s: f64,
}

/// Heldout diagnostics taken every `run.eval_interval` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    /// Completed optimizer steps.
    pub step: usize,
    pub heldout_eer: f64,
    pub mean_basis_cosine: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainLog {
    /// One JSON object per line: a header with the config, then step and
    /// eval records in the order they were produced.
    pub fn to_jsonl(&self, cfg: &RunConfig) -> String {
        let mut out = String::new();
        let header = json!({
            "record": "config",
            "seed": cfg.run.seed,
            "config": cfg.to_toml(),
        });
        out.push_str(&header.to_string());
        out.push('\n');
        let mut evals = self.evals.iter().peekable();
        for s in &self.steps {
            while let Some(e) = evals.next_if(|e| e.step <= s.step) {
                out.push_str(&eval_json(e));
            }
            let losses: serde_json::Map<String, serde_json::Value> =
                s.losses.iter().map(|(k, v)| (k.name().to_string(), json!(v))).collect();
            let mut line = json!({
                "record": "step",
                "step": s.step,
                "total": s.total,
                "losses": losses,
                "grad_norms": {
                    "embeddings": s.grad_norm_embeddings,
                    "encoder": s.grad_norm_encoder,
                    "basis": s.grad_norm_basis,
                },
            });
            if cfg.run.log_wall_time {
                line["wall_time_s"] = json!(s.wall_time_s);
            }
            out.push_str(&line.to_string());
            out.push('\n');
        }
        for e in evals {
            out.push_str(&eval_json(e));
        }
        out
    }

    pub fn write(&self, path: &Path, cfg: &RunConfig) -> Result<()> {
        std::fs::write(path, self.to_jsonl(cfg)).map_err(|e| Error::io(path, e))
    }
}

fn eval_json(e: &EvalRecord) -> String {
    let mut s = json!({
        "record": "eval",
        "step": e.step,
        "heldout_eer": e.heldout_eer,
        "mean_basis_cosine": e.mean_basis_cosine,
    })
    .to_string();
    s.push('\n');
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// The model a run starts from: seeded encoder and head, centers at zero
/// when the center loss is active.
pub fn initial_checkpoint(cfg: &RunConfig, n_speakers: usize) -> Result<Checkpoint> {
    let m = &cfg.model;
    let encoder = MlpEncoder::new(
        &m.layer_dims,
        m.leaky_slope,
        m.activate_output,
        &mut SeededRng::with_stream(cfg.run.seed, ENCODER_INIT_STREAM),
    )?;
    let head = ClassifierHead::new(
        encoder.output_dim(),
        n_speakers,
        cfg.use_bias(),
        &mut SeededRng::with_stream(cfg.run.seed, HEAD_INIT_STREAM),
    )?;
    let centers = if cfg.loss.composite()?.contains(LossKind::Center) {
        Some(CenterStore::zeros(n_speakers, encoder.output_dim(), cfg.loss.alpha, cfg.loss.lambda)?)
    } else {
        None
    };
    Ok(Checkpoint {
        seed: cfg.run.seed,
        step: 0,
        encoder,
        head,
        ge2e: cfg.loss.ge2e(),
        centers,
        config: Some(cfg.to_toml()),
    })
}

pub fn train(cfg: &RunConfig, ds: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.spec.feature_dim != cfg.model.layer_dims[0] {
        return Err(Error::config(
            "model.layer_dims",
            format!("input width {} does not match the dataset's {} features", cfg.model.layer_dims[0], ds.spec.feature_dim),
        ));
    }
    let n_speakers = ds.n_train_speakers();
    if n_speakers < 2 {
        return Err(Error::InsufficientSpeakers(n_speakers));
    }
    let composite = cfg.loss.composite()?;
    let am_softmax = cfg.loss.am_softmax()?;
    let updates_centers = composite.contains(LossKind::Center);
    let mut state = initial_checkpoint(cfg, n_speakers)?;
    let mut optimizer = OptimizerState::new(cfg.optimizer.clone());
    let mut log = TrainLog::default();
    let started = Instant::now();

    for step in 0..cfg.run.steps {
        let batch = cfg.batch.next_batch(ds, step)?;
        let (emb, trace) = state.encoder.forward(&batch.features)?;
        let emb = EmbeddingBatch::new(emb, batch.labels)?;
        let inputs = LossInputs {
            batch: &emb,
            head: &state.head,
            centers: state.centers.as_ref(),
            am_softmax,
            ge2e: state.ge2e,
            hard_negatives: cfg.loss.hard_negatives,
        };
        let composed = compose(&composite, &inputs)?;
        if !composed.total.is_finite() {
            state.step = step;
            return Err(Error::NonFiniteLoss {
                step,
                last_good: Box::new(state),
            });
        }
        let total = composed.total;
        let grad_emb = total
            .grad_embeddings
            .unwrap_or_else(|| Matrix::zeros(emb.len(), emb.dim()));
        let enc_grads = state.encoder.backward(&trace, &grad_emb)?;

        let encoder_sq: f64 = enc_grads
            .weights
            .iter()
            .map(|w| w.frobenius_norm().powi(2))
            .chain(enc_grads.biases.iter().map(|b| b.iter().map(|v| v * v).sum()))
            .sum();
        let record = StepRecord {
            step,
            losses: composed.components,
            total: total.value,
            grad_norm_embeddings: grad_emb.frobenius_norm(),
            grad_norm_encoder: encoder_sq.sqrt(),
            grad_norm_basis: total.grad_basis.as_ref().map_or(0.0, Matrix::frobenius_norm),
            wall_time_s: started.elapsed().as_secs_f64(),
        };

        let mut scalars = [state.ge2e.w_score, state.ge2e.b_score];
        let scalar_grads = total.grad_scalars.map(|s| [s.w_score, s.b_score]);
        {
            let (weights, biases) = state.encoder.params_mut();
            let mut slots: Vec<ParamSlot<'_>> = Vec::with_capacity(2 * weights.len() + 3);
            for ((w, gw), (b, gb)) in weights
                .iter_mut()
                .zip(&enc_grads.weights)
                .zip(biases.iter_mut().zip(&enc_grads.biases))
            {
                slots.push(ParamSlot {
                    role: ParamRole::Weight,
                    values: w.as_mut_slice(),
                    grad: Some(gw.as_slice()),
                });
                slots.push(ParamSlot {
                    role: ParamRole::Bias,
                    values: b,
                    grad: Some(gb),
                });
            }
            let (basis, bias) = state.head.params_mut();
            slots.push(ParamSlot {
                role: ParamRole::Weight,
                values: basis.as_mut_slice(),
                grad: total.grad_basis.as_ref().map(Matrix::as_slice),
            });
            slots.push(ParamSlot {
                role: ParamRole::Bias,
                values: bias,
                grad: total.grad_bias.as_deref(),
            });
            slots.push(ParamSlot {
                role: ParamRole::Scalar,
                values: &mut scalars,
                grad: scalar_grads.as_ref().map(|g| &g[..]),
            });
            optimizer.step(&mut slots)?;
        }
        state.ge2e.w_score = scalars[0];
        state.ge2e.b_score = scalars[1];
        state.ge2e.clamp();
        if updates_centers {
            if let Some(centers) = &state.centers {
                state.centers = Some(center_update(centers, &emb)?);
            }
        }
        state.step = step + 1;
        log.steps.push(record);

        let every = cfg.run.eval_interval;
        if every > 0 && ((step + 1) % every == 0 || step + 1 == cfg.run.steps) {
            log.evals.push(eval_record(&state, ds, cfg)?);
        }
    }
    Ok(TrainOutcome { checkpoint: state, log })
}

fn eval_record(state: &Checkpoint, ds: &Dataset, cfg: &RunConfig) -> Result<EvalRecord> {
    let trials = eval::make_trials(
        ds,
        crate::data::Split::Heldout,
        cfg.eval.per_speaker_targets,
        cfg.eval.impostor_ratio,
        cfg.eval.seed,
    )?;
    let emb = state.encoder.embed(&ds.features)?;
    let scores = eval::cosine_scores(&emb, &trials, cfg.eval.normalize)?;
    Ok(EvalRecord {
        step: state.step,
        heldout_eer: eval::equal_error_rate(&scores, &trials)?.eer,
        mean_basis_cosine: eval::mean_basis_cosine(&state.head)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticDatasetSpec};

    fn tiny(preset: &str, steps: usize) -> (RunConfig, Dataset) {
        let mut cfg = RunConfig::preset(preset, 4).unwrap();
        cfg.dataset = SyntheticDatasetSpec {
            n_speakers: 6,
            utterances_per_speaker: 10,
            feature_dim: 5,
            seed: 4,
            ..Default::default()
        };
        cfg.model.layer_dims = vec![5, 8, 6];
        cfg.batch.batch_size = 20;
        cfg.batch.utterances_per_speaker = 5;
        cfg.loss.hard_negatives = 3;
        cfg.run.steps = steps;
        cfg.eval.per_speaker_targets = 3;
        let ds = generate(&cfg.dataset).unwrap();
        (cfg, ds)
    }

    #[test]
    fn zero_steps_returns_the_initialization() {
        let (cfg, ds) = tiny("center", 0);
        let out = train(&cfg, &ds).unwrap();
        assert_eq!(out.checkpoint, initial_checkpoint(&cfg, 6).unwrap());
        assert!(out.log.steps.is_empty());
    }

    #[test]
    fn zero_learning_rate_still_moves_centers() {
        let (mut cfg, ds) = tiny("center", 5);
        cfg.optimizer.learning_rate = 0.0;
        let init = initial_checkpoint(&cfg, 6).unwrap();
        let out = train(&cfg, &ds).unwrap().checkpoint;
        assert_eq!(out.encoder, init.encoder);
        assert_eq!(out.head, init.head);
        assert_ne!(out.centers, init.centers);
    }

    #[test]
    fn runs_are_bit_identical() {
        for preset in ["proposed1", "ge2e"] {
            let (mut cfg, ds) = tiny(preset, 15);
            cfg.run.eval_interval = 5;
            let a = train(&cfg, &ds).unwrap();
            let b = train(&cfg, &ds).unwrap();
            assert_eq!(a.checkpoint.to_text(), b.checkpoint.to_text());
            assert_eq!(a.log.to_jsonl(&cfg), b.log.to_jsonl(&cfg));
            assert_eq!(a.log.evals.len(), 3);
        }
    }

    #[test]
    fn biases_stay_put_without_gradients() {
        // Cosine losses never touch the head bias, and decay skips biases.
        let (cfg, ds) = tiny("proposed2", 10);
        let init = initial_checkpoint(&cfg, 6).unwrap();
        let out = train(&cfg, &ds).unwrap().checkpoint;
        assert_eq!(out.head.bias(), init.head.bias());
        assert!(out.centers.is_none());
        assert_ne!(out.head.basis(), init.head.basis());
    }

    #[test]
    fn every_record_is_finite_and_named() {
        let (cfg, ds) = tiny("proposed1", 10);
        let out = train(&cfg, &ds).unwrap();
        assert_eq!(out.log.steps.len(), 10);
        for r in &out.log.steps {
            assert!(r.total.is_finite());
            let names: Vec<_> = r.losses.iter().map(|(k, _)| *k).collect();
            assert_eq!(names, [LossKind::Softmax, LossKind::Center, LossKind::BetweenClass]);
        }
        let text = out.log.to_jsonl(&cfg);
        assert_eq!(text.lines().count(), 11);
        assert!(text.lines().next().unwrap().contains("\"record\":\"config\""));
        assert!(!text.contains("wall_time_s"));
    }

    #[test]
    fn non_finite_loss_aborts_with_the_last_state() {
        let (mut cfg, ds) = tiny("softmax", 10);
        cfg.optimizer.kind = OptimizerKind::Sgd;
        cfg.optimizer.learning_rate = 1e300;
        match train(&cfg, &ds) {
            Err(Error::NonFiniteLoss { step, last_good }) => {
                assert!(step > 0);
                assert_eq!(last_good.step, step);
            }
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn ge2e_scale_stays_positive() {
        let (mut cfg, ds) = tiny("ge2e", 20);
        cfg.optimizer.learning_rate = 5.0;
        if let Ok(out) = train(&cfg, &ds) {
            assert!(out.checkpoint.ge2e.w_score >= crate::losses::Ge2eParams::MIN_W_SCORE);
        }
    }
}
