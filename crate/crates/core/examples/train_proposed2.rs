//! Trains the full basis-loss configuration on the toy speakers and
//! compares heldout EER and impostor cosines before and after.
//!
//!     cargo run --release --example train_proposed2 [steps]

use speaker_bases::data::{generate, Split};
use speaker_bases::eval::{evaluate, make_trials};
use speaker_bases::training::{initial_checkpoint, train, RunConfig};

fn main() -> speaker_bases::Result<()> {
    let mut cfg = RunConfig::preset("proposed2", 1)?;
    if let Some(steps) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        cfg.run.steps = steps;
    }
    cfg.run.eval_interval = (cfg.run.steps / 5).max(1);

    let ds = generate(&cfg.dataset)?;
    let trials = make_trials(&ds, Split::Heldout, cfg.eval.per_speaker_targets, cfg.eval.impostor_ratio, cfg.eval.seed)?;
    let before = evaluate(&initial_checkpoint(&cfg, ds.n_speakers())?, &ds, &trials, &cfg.eval)?;

    let outcome = train(&cfg, &ds)?;
    for r in outcome.log.steps.iter().step_by((cfg.run.steps / 10).max(1)) {
        let parts: Vec<String> = r.losses.iter().map(|(k, v)| format!("{} {v:.3}", k.name())).collect();
        println!("step {:>5}  total {:>10.4}  {}", r.step, r.total, parts.join("  "));
    }
    for e in &outcome.log.evals {
        println!("after {:>5} steps: heldout eer {:.4}, mean basis cosine {:+.4}", e.step, e.heldout_eer, e.mean_basis_cosine);
    }

    let after = evaluate(&outcome.checkpoint, &ds, &trials, &cfg.eval)?;
    let floor = -1.0 / (ds.n_speakers() as f64 - 1.0);
    println!();
    println!("{:<24} {:>10} {:>10}", "", "initial", "trained");
    println!("{:<24} {:>10.4} {:>10.4}", "heldout eer", before.eer.eer, after.eer.eer);
    println!("{:<24} {:>+10.4} {:>+10.4}", "mean centroid cosine", before.summary.mean_centroid_cosine, after.summary.mean_centroid_cosine);
    println!("{:<24} {:>+10.4} {:>+10.4}", "mean basis cosine", before.summary.mean_basis_cosine, after.summary.mean_basis_cosine);
    println!("{:<24} {:>+10.4} {:>+10.4}", "basis/centroid alignment", before.alignment.mean, after.alignment.mean);
    println!("lowest possible mean cosine for {} vectors: {floor:+.4}", ds.n_speakers());
    Ok(())
}
