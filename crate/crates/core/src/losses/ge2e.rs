use super::{EmbeddingBatch, Ge2eParams, LossOutput, ScalarGrads};
use crate::error::{Error, Result};
use crate::numeric::{accumulate_cosine_grad, axpy, cosine_parts, sigmoid, Matrix};

/// Utterance indices grouped by speaker, in ascending label order.
pub fn speaker_groups(labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &y) in labels.iter().enumerate() {
        groups.entry(y).or_default().push(i);
    }
    groups.into_iter().collect()
}

/// Per-speaker mean embeddings, one row per speaker present in the batch
/// (ascending label order). The query utterance is not excluded.
pub fn ge2e_centroids(emb: &EmbeddingBatch) -> Result<(Vec<usize>, Matrix)> {
    if emb.is_empty() {
        return Err(Error::EmptyInput("ge2e_centroids needs a non-empty batch"));
    }
    let groups = speaker_groups(emb.labels());
    let mut centroids = Matrix::zeros(groups.len(), emb.dim());
    for (k, (speaker, members)) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptySpeaker(*speaker));
        }
        let row = centroids.row_mut(k);
        for &i in members {
            axpy(1.0, emb.embeddings().row(i), row);
        }
        let inv = 1.0 / members.len() as f64;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((groups.into_iter().map(|(s, _)| s).collect(), centroids))
}

/// Centroid-based GE2E loss:
/// `Σ_{j,i} 1 − σ(S_ji,j) + max_{k≠j} σ(S_ji,k)` with
/// `S_ji,k = w·cos(e_ji, ĉ_k) + b`.
///
/// The maximizing speaker is treated as fixed when differentiating; ties go
/// to the lowest label.
pub fn ge2e_loss(emb: &EmbeddingBatch, params: &Ge2eParams) -> Result<LossOutput> {
    let groups = speaker_groups(emb.labels());
    if groups.len() < 2 {
        return Err(Error::InsufficientSpeakers(groups.len()));
    }
    let (_, centroids) = ge2e_centroids(emb)?;
    let n_groups = groups.len();
    let mut group_of = vec![0usize; emb.len()];
    for (k, (_, members)) in groups.iter().enumerate() {
        for &i in members {
            group_of[i] = k;
        }
    }

    let w = params.w_score;
    let b = params.b_score;
    let mut value = 0.0;
    let mut grad_emb = Matrix::zeros(emb.len(), emb.dim());
    let mut grad_centroids = Matrix::zeros(n_groups, emb.dim());
    let mut grads = ScalarGrads::default();
    let mut parts = Vec::with_capacity(n_groups);

    for i in 0..emb.len() {
        let e = emb.embeddings().row(i);
        let own = group_of[i];
        parts.clear();
        for k in 0..n_groups {
            let p = cosine_parts(e, centroids.row(k))
                .map_err(|_| Error::degenerate(format!("embedding {i} or centroid of group {k}")))?;
            parts.push(p);
        }
        let score = |k: usize| w * parts[k].value + b;
        let hardest = (0..n_groups)
            .filter(|&k| k != own)
            .fold(None, |best: Option<usize>, k| match best {
                Some(bk) if score(bk) >= score(k) => Some(bk),
                _ => Some(k),
            })
            .expect("at least two groups");

        let sig_pos = sigmoid(score(own));
        let sig_neg = sigmoid(score(hardest));
        value += 1.0 - sig_pos + sig_neg;

        for (k, d_score) in [
            (own, -sig_pos * (1.0 - sig_pos)),
            (hardest, sig_neg * (1.0 - sig_neg)),
        ] {
            grads.w_score += d_score * parts[k].value;
            grads.b_score += d_score;
            let d_cos = w * d_score;
            accumulate_cosine_grad(&parts[k], e, centroids.row(k), d_cos, grad_emb.row_mut(i));
            let swapped = parts[k].swapped();
            accumulate_cosine_grad(&swapped, centroids.row(k), e, d_cos, grad_centroids.row_mut(k));
        }
    }

    // ĉ_k is a mean, so each member receives 1/M_k of the centroid gradient.
    for (k, (_, members)) in groups.iter().enumerate() {
        let inv = 1.0 / members.len() as f64;
        for &i in members {
            axpy(inv, grad_centroids.row(k), grad_emb.row_mut(i));
        }
    }

    Ok(LossOutput {
        value,
        grad_embeddings: Some(grad_emb),
        grad_basis: None,
        grad_bias: None,
        grad_scalars: Some(grads),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[&[f64]], labels: Vec<usize>) -> EmbeddingBatch {
        EmbeddingBatch::new(Matrix::from_rows(rows).unwrap(), labels).unwrap()
    }

    #[test]
    fn centroid_examples() {
        let (speakers, c) = ge2e_centroids(&batch(&[&[1.0, 2.0], &[3.0, 4.0]], vec![7, 2])).unwrap();
        assert_eq!(speakers, vec![2, 7]);
        assert_eq!(c.row(0), &[3.0, 4.0]);
        assert_eq!(c.row(1), &[1.0, 2.0]);

        let (_, c) = ge2e_centroids(&batch(&[&[0.0, 0.0], &[2.0, 2.0]], vec![0, 0])).unwrap();
        assert_eq!(c.row(0), &[1.0, 1.0]);
    }

    #[test]
    fn centroids_ignore_utterance_order() {
        let a = batch(&[&[1.0, 0.5], &[-2.0, 3.0], &[0.25, 4.0]], vec![0, 1, 0]);
        let b = batch(&[&[0.25, 4.0], &[-2.0, 3.0], &[1.0, 0.5]], vec![0, 1, 0]);
        let (_, ca) = ge2e_centroids(&a).unwrap();
        let (_, cb) = ge2e_centroids(&b).unwrap();
        for (x, y) in ca.as_slice().iter().zip(cb.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_pair_closed_form() {
        let out = ge2e_loss(
            &batch(&[&[1.0, 0.0], &[0.0, 1.0]], vec![0, 1]),
            &Ge2eParams {
                w_score: 1.0,
                b_score: 0.0,
            },
        )
        .unwrap();
        let expected = 2.0 * (1.0 - sigmoid(1.0) + sigmoid(0.0));
        assert!((out.value - expected).abs() < 1e-12);
        assert!((out.value - 1.5378828).abs() < 1e-7);
    }

    #[test]
    fn identical_utterances_have_unit_positive_cosine() {
        let emb = batch(&[&[0.3, 0.7], &[0.3, 0.7], &[1.0, -1.0]], vec![0, 0, 1]);
        let (_, c) = ge2e_centroids(&emb).unwrap();
        for i in 0..2 {
            assert_eq!(crate::numeric::cosine(emb.embeddings().row(i), c.row(0)).unwrap(), 1.0);
        }
    }

    #[test]
    fn needs_two_speakers() {
        let emb = batch(&[&[1.0, 0.0], &[0.0, 1.0]], vec![3, 3]);
        assert!(matches!(
            ge2e_loss(&emb, &Ge2eParams::default()),
            Err(Error::InsufficientSpeakers(1))
        ));
    }

    #[test]
    fn weighted_centroid_mean_is_batch_mean() {
        let mut rng = crate::numeric::SeededRng::new(2);
        let m = rng.normal_matrix(9, 3, 1.0);
        let labels = vec![0, 1, 1, 2, 2, 2, 5, 5, 0];
        let emb = EmbeddingBatch::new(m.clone(), labels.clone()).unwrap();
        let (speakers, c) = ge2e_centroids(&emb).unwrap();
        let mut weighted = [0.0; 3];
        for (k, s) in speakers.iter().enumerate() {
            let count = labels.iter().filter(|&&y| y == *s).count() as f64;
            axpy(count / 9.0, c.row(k), &mut weighted);
        }
        for (j, w) in weighted.iter().enumerate() {
            let mean = m.column(j).iter().sum::<f64>() / 9.0;
            assert!((w - mean).abs() < 1e-12);
        }
    }
}
