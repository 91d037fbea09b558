//! Cosine scoring against the learned b-vector scorer, first on a
//! synthetic pair task, then on a trained model's heldout trials.
//!
//!     cargo run --release --example bvector_backend

use speaker_bases::data::{generate, Split};
use speaker_bases::eval::bvector::SeparablePairTask;
use speaker_bases::eval::{cosine_scores, equal_error_rate, evaluate, make_trials, train_bvector_scorer, BVectorSettings};
use speaker_bases::training::{train, EvalSection, RunConfig, ScoringBackend};

fn main() -> speaker_bases::Result<()> {
    let task = SeparablePairTask::generate(32, 40, 10, 0.2, 1)?;
    let settings = BVectorSettings::from_eval(&EvalSection::default(), 32);
    let scorer = train_bvector_scorer(&task.embeddings, &task.train, &settings)?;
    let bv = equal_error_rate(&scorer.score_trials(&task.embeddings, &task.heldout)?, &task.heldout)?;
    let cos = equal_error_rate(&cosine_scores(&task.embeddings, &task.heldout, false)?, &task.heldout)?;
    println!("pair task, unseen speakers: b-vector accuracy {:.4}, eer {:.4}; cosine eer {:.4}",
        scorer.accuracy(&task.embeddings, &task.heldout)?, bv.eer, cos.eer);

    let mut cfg = RunConfig::preset("proposed2", 1)?;
    cfg.dataset.utterance_noise = 1.0; // harder than the default toy data
    let ds = generate(&cfg.dataset)?;
    let ck = train(&cfg, &ds)?.checkpoint;
    let trials = make_trials(&ds, Split::Heldout, cfg.eval.per_speaker_targets, cfg.eval.impostor_ratio, cfg.eval.seed)?;
    for backend in [ScoringBackend::Cosine, ScoringBackend::Bvector] {
        let eval_cfg = EvalSection { backend, ..cfg.eval.clone() };
        let result = evaluate(&ck, &ds, &trials, &eval_cfg)?;
        println!("trained model, {backend:?} backend: heldout eer {:.4}", result.eer.eer);
    }
    Ok(())
}
