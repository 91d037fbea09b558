use std::path::Path;
use std::process::{Command, Output};

use speaker_bases::cli::{CHECKPOINT_FILE, CONFIG_FILE, HISTOGRAM_FILE, LOG_FILE, METRICS_FILE, SCORES_FILE, TRIALS_FILE};
use speaker_bases::eval::MetricsSummary;
use speaker_bases::training::RunConfig;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speaker-bases"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = RunConfig::preset("proposed2", 3).unwrap();
    cfg.run.steps = 20;
    cfg.dataset.n_speakers = 6;
    cfg.dataset.utterances_per_speaker = 10;
    cfg.batch.batch_size = 12;
    cfg.eval.per_speaker_targets = 5;
    let path = dir.join("small.toml");
    cfg.write(&path).unwrap();
    path
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(bin(&[]).status.code(), Some(2));
    assert_eq!(bin(&["train"]).status.code(), Some(2));
    assert_eq!(bin(&["preset", "nonsense"]).status.code(), Some(2));
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset("ge2e", 1).unwrap();
    cfg.batch.mode = speaker_bases::data::BatchMode::Random;
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let o = dir.path().join("o");
    let out = bin(&["train", "--config", s(&path), "--out-dir", s(&o)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch.mode"));

    std::fs::write(&path, "[run]\nstepz = 3\n").unwrap();
    let out = bin(&["train", "--config", s(&path), "--out-dir", s(&o)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_train_eval_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let data = d.join("data.csv");
    let run = d.join("run");
    let eval = d.join("eval");

    assert!(bin(&["gen-data", "--config", s(&cfg), "--out", s(&data)]).status.success());
    assert!(bin(&["train", "--config", s(&cfg), "--data", s(&data), "--out-dir", s(&run)]).status.success());
    for f in [CONFIG_FILE, CHECKPOINT_FILE, LOG_FILE] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(run.join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 21, "header plus one line per step");

    let ck = run.join(CHECKPOINT_FILE);
    assert!(bin(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--out-dir", s(&eval)]).status.success());
    for f in [TRIALS_FILE, SCORES_FILE, METRICS_FILE, HISTOGRAM_FILE] {
        let text = std::fs::read_to_string(eval.join(f)).unwrap();
        assert!(text.contains("# seed = 3"), "{f} lacks provenance");
    }
    let metrics = MetricsSummary::from_text(&std::fs::read_to_string(eval.join(METRICS_FILE)).unwrap()).unwrap();
    assert_eq!(metrics.step, 20);
    assert!((0.0..=1.0).contains(&metrics.eer));

    // Re-scoring the written trial list reproduces the scores.
    let again = d.join("again");
    let trials = eval.join(TRIALS_FILE);
    let args = ["eval", "--checkpoint", s(&ck), "--data", s(&data), "--trials", s(&trials), "--out-dir", s(&again)];
    assert!(bin(&args).status.success());
    assert_eq!(
        std::fs::read(eval.join(SCORES_FILE)).unwrap(),
        std::fs::read(again.join(SCORES_FILE)).unwrap()
    );

    for source in ["centroids", "bases"] {
        let out = d.join(format!("{source}.txt"));
        let args = ["histogram", "--checkpoint", s(&ck), "--data", s(&data), "--source", source, "--bins", "8", "--out", s(&out)];
        assert!(bin(&args).status.success());
        let text = std::fs::read_to_string(out).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 8);
    }
}

#[test]
fn eval_rejects_a_trial_list_for_another_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let data = d.join("data.csv");
    let run = d.join("run");
    assert!(bin(&["gen-data", "--config", s(&cfg), "--out", s(&data)]).status.success());
    assert!(bin(&["train", "--config", s(&cfg), "--data", s(&data), "--out-dir", s(&run)]).status.success());
    let trials = d.join("trials.txt");
    std::fs::write(&trials, "# speaker-bases trials v1\n0 100000 target\n1 2 impostor\n").unwrap();
    let ck = run.join(CHECKPOINT_FILE);
    let e = d.join("e");
    let args = ["eval", "--checkpoint", s(&ck), "--data", s(&data), "--trials", s(&trials), "--out-dir", s(&e)];
    assert_eq!(bin(&args).status.code(), Some(1));
}

#[test]
fn gradcheck_writes_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.txt");
    let res = bin(&["gradcheck", "--seed", "3", "--out", s(&out)]);
    assert!(res.status.success());
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.trim_end().ends_with("result pass"));
}

#[test]
fn preset_print_config_round_trips() {
    let out = bin(&["preset", "proposed2_h50", "--seed", "4", "--print-config"]);
    assert!(out.status.success());
    let cfg = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, RunConfig::preset("proposed2_h50", 4).unwrap());
    assert_eq!(cfg.loss.hard_negatives, 50);
}
