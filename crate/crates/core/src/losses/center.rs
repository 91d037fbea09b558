use super::{CenterStore, EmbeddingBatch, LossOutput};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

fn check(op: &'static str, emb: &EmbeddingBatch, store: &CenterStore) -> Result<()> {
    if store.centers.cols() != emb.dim() {
        return Err(Error::shape(op, store.centers.cols(), emb.dim()));
    }
    emb.check_labels(op, store.centers.rows())
}

/// `(λ/2) Σ_i ‖e_i − c_{y_i}‖²`. Centers get no gradient.
pub fn center_loss(emb: &EmbeddingBatch, store: &CenterStore) -> Result<LossOutput> {
    check("center_loss", emb, store)?;
    let mut grad = Matrix::zeros(emb.len(), emb.dim());
    let mut sq = 0.0;
    for (i, &y) in emb.labels().iter().enumerate() {
        let center = store.centers.row(y);
        let g = grad.row_mut(i);
        for ((gk, ek), ck) in g.iter_mut().zip(emb.embeddings().row(i)).zip(center) {
            let diff = ek - ck;
            sq += diff * diff;
            *gk = store.lambda * diff;
        }
    }
    Ok(LossOutput {
        value: 0.5 * store.lambda * sq,
        grad_embeddings: Some(grad),
        ..LossOutput::default()
    })
}

/// Moves each center toward its speaker's batch embeddings:
/// `Δc_k = Σ_{y_i=k} (c_k − e_i) / (1 + n_k)`, then `c_k ← c_k − α·Δc_k`.
/// Speakers absent from the batch keep their centers.
pub fn center_update(store: &CenterStore, emb: &EmbeddingBatch) -> Result<CenterStore> {
    check("center_update", emb, store)?;
    let n = store.centers.rows();
    let d = store.centers.cols();
    let mut counts = vec![0usize; n];
    let mut sums = Matrix::zeros(n, d);
    for (i, &y) in emb.labels().iter().enumerate() {
        counts[y] += 1;
        let center = store.centers.row(y).to_vec();
        for ((s, c), e) in sums.row_mut(y).iter_mut().zip(&center).zip(emb.embeddings().row(i)) {
            *s += c - e;
        }
    }
    let mut updated = store.clone();
    for (k, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let denom = 1.0 + count as f64;
        for (c, s) in updated.centers.row_mut(k).iter_mut().zip(sums.row(k)) {
            *c -= store.alpha * (s / denom);
        }
    }
    Ok(updated)
}
