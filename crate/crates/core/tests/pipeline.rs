use speaker_bases::data::{generate, Split};
use speaker_bases::eval::{evaluate, make_trials, Evaluation};
use speaker_bases::training::{train, RunConfig, ScoringBackend};

fn small(name: &str) -> RunConfig {
    let mut cfg = RunConfig::preset(name, 2).unwrap();
    cfg.run.steps = 40;
    cfg.dataset.n_speakers = 8;
    cfg.dataset.utterances_per_speaker = 12;
    cfg.eval.per_speaker_targets = 6;
    cfg.eval.bvector_steps = 60;
    if cfg.batch.mode == speaker_bases::data::BatchMode::Random {
        cfg.batch.batch_size = 24;
    } else {
        cfg.batch.batch_size = 20;
    }
    cfg
}

fn run(cfg: &RunConfig) -> Evaluation {
    let ds = generate(&cfg.dataset).unwrap();
    let ck = train(cfg, &ds).unwrap().checkpoint;
    let trials = make_trials(&ds, Split::Heldout, cfg.eval.per_speaker_targets, cfg.eval.impostor_ratio, cfg.eval.seed).unwrap();
    evaluate(&ck, &ds, &trials, &cfg.eval).unwrap()
}

#[test]
fn every_preset_trains_and_evaluates() {
    for name in speaker_bases::training::PRESET_NAMES {
        let cfg = small(name);
        let result = run(&cfg);
        assert!(result.eer.eer.is_finite() && (0.0..=1.0).contains(&result.eer.eer), "{name}");
        assert_eq!(result.scores.scores.len(), result.summary.n_targets + result.summary.n_impostors);
    }
}

#[test]
fn bvector_backend_scores_every_trial() {
    let mut cfg = small("proposed2");
    cfg.eval.backend = ScoringBackend::Bvector;
    let a = run(&cfg);
    let b = run(&cfg);
    assert_eq!(a.scores, b.scores);
    assert!(a.scores.scores.iter().all(|s| s.is_finite()));
    assert!(a.eer.eer < 0.5, "b-vector eer {}", a.eer.eer);
}

#[test]
fn basis_losses_spread_the_bases() {
    let cfg = small("proposed2");
    let ds = generate(&cfg.dataset).unwrap();
    let init = speaker_bases::training::initial_checkpoint(&cfg, ds.n_speakers()).unwrap();
    let trained = train(&cfg, &ds).unwrap().checkpoint;
    let before = speaker_bases::eval::mean_basis_cosine(&init.head).unwrap();
    let after = speaker_bases::eval::mean_basis_cosine(&trained.head).unwrap();
    assert!(after < before, "{before} -> {after}");
}
