//! Text histograms of centroid impostor cosines for several configurations.
//!
//!     cargo run --release --example impostor_histogram

use speaker_bases::data::{generate, Split};
use speaker_bases::eval::{impostor_histogram, speaker_centroids, Histogram};
use speaker_bases::training::{train, RunConfig};

fn draw(hist: &Histogram) {
    let widest = hist.counts.iter().copied().max().unwrap_or(1).max(1);
    for (k, &c) in hist.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let bar = "#".repeat((c * 50).div_ceil(widest));
        println!("  [{:+.1}, {:+.1}) {c:>5} {bar}", hist.edges[k], hist.edges[k + 1]);
    }
}

fn main() -> speaker_bases::Result<()> {
    for name in ["softmax", "center", "proposed1", "proposed2"] {
        let cfg = RunConfig::preset(name, 1)?;
        let ds = generate(&cfg.dataset)?;
        let ck = train(&cfg, &ds)?.checkpoint;
        let emb = ck.encoder.embed(&ds.features)?;
        let centroids = speaker_centroids(&emb, &ds.labels, &ds.indices(Split::Train), ds.n_speakers())?;
        let hist = impostor_histogram(&centroids, 20)?;
        let bases = impostor_histogram(&ck.head.bases(), 20)?;
        println!("{name}: centroid mean {:+.4}, basis mean {:+.4}", hist.mean, bases.mean);
        draw(&hist);
    }
    Ok(())
}
