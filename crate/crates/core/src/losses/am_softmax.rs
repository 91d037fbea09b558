use super::{AmSoftmaxParams, EmbeddingBatch, LossOutput};
use crate::error::{Error, Result};
use crate::model::ClassifierHead;
use crate::numeric::{accumulate_cosine_grad, cosine_parts, log_sum_exp, Matrix};

/// Additive-margin softmax on cosine logits.
///
/// The logit row for utterance `i` is `s·(cos(W_y, e_i) − m)` for the target
/// and `s·cos(W_j, e_i)` for every other speaker; the loss is cross-entropy
/// over that row. The head bias is ignored.
pub fn am_softmax_loss(
    emb: &EmbeddingBatch,
    head: &ClassifierHead,
    params: &AmSoftmaxParams,
) -> Result<LossOutput> {
    emb.check_labels("am_softmax_loss", head.n_speakers())?;
    if emb.dim() != head.embedding_dim() {
        return Err(Error::shape("am_softmax_loss", head.embedding_dim(), emb.dim()));
    }
    let n = head.n_speakers();
    let bases = head.bases();
    let s = params.scale;

    let mut value = 0.0;
    let mut grad_emb = Matrix::zeros(emb.len(), emb.dim());
    // Accumulated per basis row, transposed at the end.
    let mut grad_bases = Matrix::zeros(n, emb.dim());
    let mut parts = Vec::with_capacity(n);
    let mut logits = vec![0.0; n];
    for (i, &y) in emb.labels().iter().enumerate() {
        let e = emb.embeddings().row(i);
        parts.clear();
        for j in 0..n {
            let p = cosine_parts(bases.row(j), e)
                .map_err(|_| Error::degenerate(format!("basis {j} or embedding {i}")))?;
            logits[j] = s * p.value - if j == y { s * params.margin } else { 0.0 };
            parts.push(p);
        }
        let lse = log_sum_exp(&logits)?;
        value += lse - logits[y];
        for j in 0..n {
            let mut dz = (logits[j] - lse).exp();
            if j == y {
                dz -= 1.0;
            }
            let dcos = s * dz;
            accumulate_cosine_grad(&parts[j], bases.row(j), e, dcos, grad_bases.row_mut(j));
            accumulate_cosine_grad(&parts[j].swapped(), e, bases.row(j), dcos, grad_emb.row_mut(i));
        }
    }
    Ok(LossOutput {
        value,
        grad_embeddings: Some(grad_emb),
        grad_basis: Some(grad_bases.transpose()),
        grad_bias: None,
        grad_scalars: None,
    })
}
