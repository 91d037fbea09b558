//! Generates the toy speaker data, writes it to CSV and reads it back.
//!
//!     cargo run --example synthetic_data [out.csv]

use speaker_bases::data::{generate, BatchMode, BatchPlan, Dataset, Split, SyntheticDatasetSpec};

fn main() -> speaker_bases::Result<()> {
    let spec = SyntheticDatasetSpec {
        n_speakers: 8,
        utterances_per_speaker: 10,
        feature_dim: 4,
        ..Default::default()
    };
    let ds = generate(&spec)?;
    println!(
        "{} utterances, {} speakers, {} train rows, {} heldout rows",
        ds.len(),
        ds.n_speakers(),
        ds.indices(Split::Train).len(),
        ds.indices(Split::Heldout).len()
    );

    let plan = BatchPlan {
        mode: BatchMode::SpeakerGrouped,
        batch_size: 12,
        utterances_per_speaker: 3,
        seed: 1,
    };
    for step in 0..2 {
        let batch = plan.next_batch(&ds, step)?;
        println!("grouped batch {step}: labels {:?}", batch.labels);
    }

    let path = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("speaker-bases-toy.csv"), Into::into);
    ds.write(&path, Some("example dataset"))?;
    let back = Dataset::read(&path)?;
    assert_eq!(back, ds);
    println!("round-tripped through {}", path.display());
    Ok(())
}
