//! Verification losses as value-plus-gradient computations.
//!
//! Every loss is a pure function returning a [`LossOutput`]. Values are sums
//! over utterances (or basis pairs), not means.

mod am_softmax;
mod basis;
mod center;
mod compose;
mod ge2e;
mod softmax;

pub use am_softmax::am_softmax_loss;
pub use basis::{between_class_loss, hard_negative_loss, top_h_bases};
pub use center::{center_loss, center_update};
pub use compose::{compose, ComposedLoss, LossComposite, LossInputs, LossKind};
pub use ge2e::{ge2e_centroids, ge2e_loss, speaker_groups};
pub use softmax::softmax_loss;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Vector};

/// Embeddings of a mini-batch with their speaker labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    embeddings: Matrix,
    labels: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(embeddings: Matrix, labels: Vec<usize>) -> Result<Self> {
        if embeddings.rows() != labels.len() {
            return Err(Error::shape(
                "EmbeddingBatch",
                format!("{} labels", embeddings.rows()),
                labels.len(),
            ));
        }
        Ok(Self { embeddings, labels })
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub(crate) fn check_labels(&self, op: &'static str, n_speakers: usize) -> Result<()> {
        match self.labels.iter().find(|&&y| y >= n_speakers) {
            Some(&y) => Err(Error::shape(op, format!("labels < {n_speakers}"), format!("label {y}"))),
            None => Ok(()),
        }
    }
}

/// Per-speaker center embeddings, moved by [`center_update`] rather than by
/// the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterStore {
    /// `[n_speakers × dim]`, row `k` is the center of speaker `k`.
    pub centers: Matrix,
    pub alpha: f64,
    pub lambda: f64,
}

impl CenterStore {
    pub fn new(centers: Matrix, alpha: f64, lambda: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::config("loss.alpha", format!("must be in (0, 1], got {alpha}")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::config("loss.lambda", format!("must be >= 0, got {lambda}")));
        }
        Ok(Self {
            centers,
            alpha,
            lambda,
        })
    }

    pub fn zeros(n_speakers: usize, dim: usize, alpha: f64, lambda: f64) -> Result<Self> {
        Self::new(Matrix::zeros(n_speakers, dim), alpha, lambda)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmSoftmaxParams {
    pub scale: f64,
    pub margin: f64,
}

impl AmSoftmaxParams {
    pub fn new(scale: f64, margin: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::config("loss.scale", format!("must be > 0, got {scale}")));
        }
        if !(0.0..1.0).contains(&margin) {
            return Err(Error::config("loss.margin", format!("must be in [0, 1), got {margin}")));
        }
        Ok(Self { scale, margin })
    }
}

impl Default for AmSoftmaxParams {
    fn default() -> Self {
        Self {
            scale: 5.0,
            margin: 0.35,
        }
    }
}

/// Trainable affine map applied to GE2E cosine scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ge2eParams {
    pub w_score: f64,
    pub b_score: f64,
}

impl Ge2eParams {
    pub const MIN_W_SCORE: f64 = 1e-6;

    pub fn clamp(&mut self) {
        self.w_score = self.w_score.max(Self::MIN_W_SCORE);
    }
}

impl Default for Ge2eParams {
    fn default() -> Self {
        Self {
            w_score: 10.0,
            b_score: -5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScalarGrads {
    pub w_score: f64,
    pub b_score: f64,
}

/// Loss value plus a gradient for every parameter the loss touches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// `[M × d]`.
    pub grad_embeddings: Option<Matrix>,
    /// `[d × N]`, same layout as the basis matrix.
    pub grad_basis: Option<Matrix>,
    pub grad_bias: Option<Vector>,
    pub grad_scalars: Option<ScalarGrads>,
}

impl LossOutput {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_embeddings.as_ref().is_none_or(Matrix::is_finite)
            && self.grad_basis.as_ref().is_none_or(Matrix::is_finite)
            && self
                .grad_bias
                .as_ref()
                .is_none_or(|b| b.iter().all(|v| v.is_finite()))
            && self
                .grad_scalars
                .is_none_or(|s| s.w_score.is_finite() && s.b_score.is_finite())
    }
}
