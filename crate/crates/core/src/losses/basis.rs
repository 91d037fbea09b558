//! Losses defined directly on the speaker bases, i.e. the columns of the
//! classifier weight matrix. Because every basis is a parameter, these losses
//! see all speakers at every step regardless of which speakers are in the
//! mini-batch.

use std::cmp::Ordering;

use super::{EmbeddingBatch, LossOutput};
use crate::error::{Error, Result};
use crate::model::ClassifierHead;
use crate::numeric::{accumulate_cosine_grad, cosine_parts, sigmoid, softplus, CosineParts, Matrix};

/// `Σ_i Σ_{j≠i} cos(W_i, W_j)` over ordered pairs, so every unordered pair
/// contributes twice. Only the bases receive a gradient.
pub fn between_class_loss(head: &ClassifierHead) -> Result<LossOutput> {
    let bases = head.bases();
    let n = bases.rows();
    let mut value = 0.0;
    let mut grad = Matrix::zeros(n, bases.cols());
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = cosine_parts(bases.row(i), bases.row(j))
                .map_err(|_| Error::degenerate(format!("speaker basis {i} or {j}")))?;
            value += p.value;
            accumulate_cosine_grad(&p, bases.row(i), bases.row(j), 1.0, grad.row_mut(i));
            accumulate_cosine_grad(&p.swapped(), bases.row(j), bases.row(i), 1.0, grad.row_mut(j));
        }
    }
    Ok(LossOutput {
        value,
        grad_basis: Some(grad.transpose()),
        ..LossOutput::default()
    })
}

fn check_h(h: usize) -> Result<()> {
    if h == 0 {
        return Err(Error::config("loss.hard_negatives", "must be >= 1"));
    }
    Ok(())
}

/// Indices `h ≠ target` of the `min(h, N−1)` largest values in `cosines`,
/// in descending order with ties going to the lower index.
fn select_top(cosines: &[f64], target: usize, h: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..cosines.len()).filter(|&j| j != target).collect();
    let keep = h.min(candidates.len());
    let order = |a: &usize, b: &usize| -> Ordering {
        cosines[*b].total_cmp(&cosines[*a]).then(a.cmp(b))
    };
    if keep < candidates.len() {
        candidates.select_nth_unstable_by(keep, order);
        candidates.truncate(keep);
    }
    candidates.sort_unstable_by(order);
    candidates
}

/// The hard-negative set for one utterance: the `min(h, N−1)` non-target
/// bases most similar to `e`, most similar first.
pub fn top_h_bases(head: &ClassifierHead, e: &[f64], target: usize, h: usize) -> Result<Vec<usize>> {
    check_h(h)?;
    if target >= head.n_speakers() {
        return Err(Error::shape("top_h_bases", format!("target < {}", head.n_speakers()), target));
    }
    let emb = Matrix::from_rows(&[e])?;
    let cosines = head.cosines(&emb)?;
    Ok(select_top(cosines.row(0), target, h))
}

/// `Σ_i Σ_{h ∈ H_i} log(1 + exp(cos(W_h, e_i) − cos(W_{y_i}, e_i)))`.
///
/// `H_i` is mined from the current parameters on every call and held fixed
/// while differentiating.
pub fn hard_negative_loss(emb: &EmbeddingBatch, head: &ClassifierHead, h: usize) -> Result<LossOutput> {
    check_h(h)?;
    emb.check_labels("hard_negative_loss", head.n_speakers())?;
    if emb.dim() != head.embedding_dim() {
        return Err(Error::shape("hard_negative_loss", head.embedding_dim(), emb.dim()));
    }
    let n = head.n_speakers();
    let bases = head.bases();
    let mut value = 0.0;
    let mut grad_emb = Matrix::zeros(emb.len(), emb.dim());
    let mut grad_bases = Matrix::zeros(n, emb.dim());
    let mut parts: Vec<CosineParts> = Vec::with_capacity(n);
    let mut cosines = vec![0.0; n];

    for (i, &y) in emb.labels().iter().enumerate() {
        let e = emb.embeddings().row(i);
        parts.clear();
        for j in 0..n {
            let p = cosine_parts(bases.row(j), e)
                .map_err(|_| Error::degenerate(format!("basis {j} or embedding {i}")))?;
            cosines[j] = p.value;
            parts.push(p);
        }
        let mut d_target = 0.0;
        for hard in select_top(&cosines, y, h) {
            let x = cosines[hard] - cosines[y];
            value += softplus(x);
            let d = sigmoid(x);
            d_target -= d;
            accumulate_cosine_grad(&parts[hard], bases.row(hard), e, d, grad_bases.row_mut(hard));
            accumulate_cosine_grad(&parts[hard].swapped(), e, bases.row(hard), d, grad_emb.row_mut(i));
        }
        accumulate_cosine_grad(&parts[y], bases.row(y), e, d_target, grad_bases.row_mut(y));
        accumulate_cosine_grad(&parts[y].swapped(), e, bases.row(y), d_target, grad_emb.row_mut(i));
    }

    Ok(LossOutput {
        value,
        grad_embeddings: Some(grad_emb),
        grad_basis: Some(grad_bases.transpose()),
        ..LossOutput::default()
    })
}
