//! Centers chasing a fixed batch: repeated updates converge on the speaker means.
//!
//!     cargo run --example center_update

use speaker_bases::losses::{center_loss, center_update, CenterStore, EmbeddingBatch};
use speaker_bases::numeric::SeededRng;

fn main() -> speaker_bases::Result<()> {
    let mut rng = SeededRng::new(9);
    let labels = vec![0, 0, 0, 1, 1, 2];
    let batch = EmbeddingBatch::new(rng.normal_matrix(labels.len(), 3, 1.0), labels)?;
    let mut store = CenterStore::zeros(3, 3, 0.5, 0.001)?;

    for round in 0..8 {
        let loss = center_loss(&batch, &store)?;
        println!("round {round}: loss {:.6}, center 0 = {:.4?}", loss.value, store.centers.row(0));
        store = center_update(&store, &batch)?;
    }
    let e = batch.embeddings();
    let mean: Vec<f64> = (0..3).map(|j| (e[(0, j)] + e[(1, j)] + e[(2, j)]) / 3.0).collect();
    println!("speaker 0 mean     = {mean:.4?}");
    Ok(())
}
