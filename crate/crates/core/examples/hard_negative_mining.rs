//! Which bases does the hard-negative loss push away from an embedding?
//!
//!     cargo run --example hard_negative_mining

use speaker_bases::losses::{hard_negative_loss, top_h_bases, EmbeddingBatch};
use speaker_bases::model::ClassifierHead;
use speaker_bases::numeric::{cosine, Matrix, SeededRng, Vector};

fn main() -> speaker_bases::Result<()> {
    let mut rng = SeededRng::new(5);
    let (dim, speakers) = (6, 10);
    let head = ClassifierHead::from_parts(rng.normal_matrix(dim, speakers, 1.0), Vector::zeros(speakers), false)?;
    let bases = head.bases();

    // An embedding near speaker 3's basis.
    let target = 3;
    let e: Vec<f64> = bases.row(target).iter().map(|x| x + 0.3 * rng.normal()).collect();

    println!("cosine to each basis:");
    for j in 0..speakers {
        let mark = if j == target { " (target)" } else { "" };
        println!("  {j:>2} {:+.4}{mark}", cosine(&e, bases.row(j))?);
    }

    for h in [1, 3, speakers] {
        let picked = top_h_bases(&head, &e, target, h)?;
        let batch = EmbeddingBatch::new(Matrix::from_rows(&[e.as_slice()])?, vec![target])?;
        let loss = hard_negative_loss(&batch, &head, h)?;
        println!("H = {h:>2}: bases {picked:?}, loss {:.5}", loss.value);
    }
    Ok(())
}
