//! Evaluates every loss on one random batch and prints value and gradient norms.
//!
//!     cargo run --example loss_zoo

use speaker_bases::losses::{AmSoftmaxParams, CenterStore, EmbeddingBatch, Ge2eParams, LossInputs, LossKind};
use speaker_bases::model::ClassifierHead;
use speaker_bases::numeric::{SeededRng, Vector};

fn main() -> speaker_bases::Result<()> {
    let mut rng = SeededRng::new(11);
    let (speakers, per_speaker, dim) = (4, 3, 8);

    // Grouped batch so GE2E has something to work with.
    let labels: Vec<usize> = (0..speakers).flat_map(|k| std::iter::repeat_n(k, per_speaker)).collect();
    let batch = EmbeddingBatch::new(rng.normal_matrix(labels.len(), dim, 1.0), labels)?;
    let head = ClassifierHead::from_parts(rng.normal_matrix(dim, speakers, 0.5), Vector::zeros(speakers), true)?;
    let centers = CenterStore::new(rng.normal_matrix(speakers, dim, 1.0), 0.5, 0.001)?;

    let inputs = LossInputs {
        batch: &batch,
        head: &head,
        centers: Some(&centers),
        am_softmax: AmSoftmaxParams::default(),
        ge2e: Ge2eParams::default(),
        hard_negatives: 2,
    };

    println!("{:<14} {:>12} {:>12} {:>12}", "loss", "value", "|dL/de|", "|dL/dW|");
    for kind in LossKind::ALL {
        let out = inputs.evaluate(kind)?;
        let norm = |m: Option<&speaker_bases::numeric::Matrix>| m.map_or(0.0, |m| m.frobenius_norm());
        println!(
            "{:<14} {:>12.6} {:>12.6} {:>12.6}",
            kind.name(),
            out.value,
            norm(out.grad_embeddings.as_ref()),
            norm(out.grad_basis.as_ref())
        );
    }
    Ok(())
}
