use super::{EmbeddingBatch, LossOutput};
use crate::error::Result;
use crate::model::ClassifierHead;
use crate::numeric::{axpy, log_sum_exp, Matrix, Vector};

/// Cross-entropy over all speakers: `−Σ_i log softmax(W·e_i + b)[y_i]`.
pub fn softmax_loss(emb: &EmbeddingBatch, head: &ClassifierHead) -> Result<LossOutput> {
    emb.check_labels("softmax_loss", head.n_speakers())?;
    let logits = head.logits(emb.embeddings())?;
    let n = head.n_speakers();

    let mut value = 0.0;
    // ∂L/∂logits = softmax(logits) − onehot(y)
    let mut grad_logits = Matrix::zeros(emb.len(), n);
    for (i, &y) in emb.labels().iter().enumerate() {
        let row = logits.row(i);
        let lse = log_sum_exp(row)?;
        value += lse - row[y];
        let g = grad_logits.row_mut(i);
        for (gj, zj) in g.iter_mut().zip(row) {
            *gj = (zj - lse).exp();
        }
        g[y] -= 1.0;
    }

    let grad_embeddings = grad_logits.matmul_t(head.basis())?;
    let grad_basis = emb.embeddings().t_matmul(&grad_logits)?;
    let grad_bias = head.use_bias().then(|| {
        let mut b = Vector::zeros(n);
        for row in grad_logits.row_iter() {
            axpy(1.0, row, &mut b);
        }
        b
    });

    Ok(LossOutput {
        value,
        grad_embeddings: Some(grad_embeddings),
        grad_basis: Some(grad_basis),
        grad_bias,
        grad_scalars: None,
    })
}
