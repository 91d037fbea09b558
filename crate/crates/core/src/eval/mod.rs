//! Verification trials, scoring, equal error rate and the basis/centroid
//! diagnostics.

pub mod bvector;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bvector::{bvector_features, train_bvector_scorer, BVectorScorer, BVectorSettings};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::between_class_loss;
use crate::model::{Checkpoint, ClassifierHead};
use crate::numeric::{axpy, cosine, Matrix, SeededRng};
use crate::training::{EvalSection, ScoringBackend};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Trial {
    pub a: usize,
    pub b: usize,
    pub target: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialList {
    trials: Vec<Trial>,
}

impl TrialList {
    pub fn new(trials: Vec<Trial>) -> Result<Self> {
        if let Some(t) = trials.iter().find(|t| t.a == t.b) {
            return Err(Error::InsufficientData(format!("trial pairs utterance {} with itself", t.a)));
        }
        let targets = trials.iter().filter(|t| t.target).count();
        let impostors = trials.len() - targets;
        if targets == 0 || impostors == 0 {
            return Err(Error::DegenerateTrials { targets, impostors });
        }
        Ok(Self { trials })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }

    pub fn n_impostors(&self) -> usize {
        self.len() - self.n_targets()
    }

    /// `index_a index_b target|impostor` per line after `# ` comment lines.
    pub fn to_text(&self, provenance: Option<&str>) -> String {
        let mut out = String::from("# speaker-bases trials v1\n");
        push_comments(&mut out, provenance);
        for t in &self.trials {
            let _ = writeln!(out, "{} {} {}", t.a, t.b, label_name(t.target));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut trials = Vec::new();
        for (n, line) in data_lines(text) {
            let f: Vec<&str> = line.split_ascii_whitespace().collect();
            let err = |m: &str| Error::parse(format!("trials line {}", n + 1), m.to_string());
            let [a, b, label] = f[..] else {
                return Err(err("expected `index_a index_b label`"));
            };
            trials.push(Trial {
                a: a.parse().map_err(|_| err("bad index_a"))?,
                b: b.parse().map_err(|_| err("bad index_b"))?,
                target: parse_label(label).ok_or_else(|| err("label must be target or impostor"))?,
            });
        }
        Self::new(trials)
    }

    pub fn write(&self, path: &Path, provenance: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_text(provenance)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }
}

fn label_name(target: bool) -> &'static str {
    if target {
        "target"
    } else {
        "impostor"
    }
}

fn parse_label(s: &str) -> Option<bool> {
    match s {
        "target" => Some(true),
        "impostor" => Some(false),
        _ => None,
    }
}

fn push_comments(out: &mut String, text: Option<&str>) {
    for line in text.unwrap_or_default().lines() {
        let _ = writeln!(out, "# {line}");
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
}

/// Distinct index pairs `(i, j)`, `i < j`, of `n` items, addressed by rank.
fn pair_at(n: usize, mut rank: usize) -> (usize, usize) {
    let mut i = 0;
    while rank >= n - 1 - i {
        rank -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + rank)
}

/// Up to `per_speaker_targets` distinct same-speaker pairs per speaker, then
/// `round(impostor_ratio × targets)` distinct cross-speaker pairs (capped at
/// the number that exist).
pub fn make_trials(
    ds: &Dataset,
    split: Split,
    per_speaker_targets: usize,
    impostor_ratio: f64,
    seed: u64,
) -> Result<TrialList> {
    let groups: Vec<Vec<usize>> = ds.by_speaker(split).into_iter().filter(|g| !g.is_empty()).collect();
    let with_pairs = groups.iter().filter(|g| g.len() >= 2).count();
    if groups.len() < 2 || with_pairs == 0 || per_speaker_targets == 0 {
        return Err(Error::InsufficientData(format!(
            "{} split has {} speakers, {} with two or more utterances",
            split.name(),
            groups.len(),
            with_pairs
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut trials = Vec::new();
    for g in &groups {
        let available = g.len() * (g.len() - 1) / 2;
        for rank in rng.sample_indices(available, per_speaker_targets.min(available)) {
            let (i, j) = pair_at(g.len(), rank);
            trials.push(Trial {
                a: g[i],
                b: g[j],
                target: true,
            });
        }
    }

    let total: usize = groups.iter().map(Vec::len).sum();
    let cross = (total * total - groups.iter().map(|g| g.len() * g.len()).sum::<usize>()) / 2;
    let wanted = ((impostor_ratio * trials.len() as f64).round() as usize).clamp(1, cross);
    if wanted * 4 >= cross {
        let mut all = Vec::with_capacity(cross);
        for (x, gx) in groups.iter().enumerate() {
            for gy in &groups[x + 1..] {
                for &a in gx {
                    all.extend(gy.iter().map(|&b| (a, b)));
                }
            }
        }
        for k in rng.sample_indices(all.len(), wanted) {
            let (a, b) = all[k];
            trials.push(Trial { a, b, target: false });
        }
    } else {
        let mut seen = HashSet::with_capacity(wanted);
        while seen.len() < wanted {
            let x = rng.below(groups.len());
            let mut y = rng.below(groups.len() - 1);
            if y >= x {
                y += 1;
            }
            let a = groups[x][rng.below(groups[x].len())];
            let b = groups[y][rng.below(groups[y].len())];
            if seen.insert((a.min(b), a.max(b))) {
                trials.push(Trial { a, b, target: false });
            }
        }
    }
    TrialList::new(trials)
}

/// Per-trial scores, aligned with a [`TrialList`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
}

impl ScoreSet {
    /// `index_a index_b label score` per line.
    pub fn to_text(&self, trials: &TrialList, provenance: Option<&str>) -> Result<String> {
        check_aligned(self, trials)?;
        let mut out = String::from("# speaker-bases scores v1\n");
        push_comments(&mut out, provenance);
        for (t, s) in trials.trials().iter().zip(&self.scores) {
            let _ = writeln!(out, "{} {} {} {s:e}", t.a, t.b, label_name(t.target));
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<(TrialList, ScoreSet)> {
        let mut trials = Vec::new();
        let mut scores = Vec::new();
        for (n, line) in data_lines(text) {
            let err = |m: &str| Error::parse(format!("scores line {}", n + 1), m.to_string());
            let f: Vec<&str> = line.split_ascii_whitespace().collect();
            let [a, b, label, score] = f[..] else {
                return Err(err("expected `index_a index_b label score`"));
            };
            trials.push(Trial {
                a: a.parse().map_err(|_| err("bad index_a"))?,
                b: b.parse().map_err(|_| err("bad index_b"))?,
                target: parse_label(label).ok_or_else(|| err("bad label"))?,
            });
            scores.push(score.parse().map_err(|_| err("bad score"))?);
        }
        Ok((TrialList::new(trials)?, ScoreSet { scores }))
    }

    pub fn write(&self, path: &Path, trials: &TrialList, provenance: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_text(trials, provenance)?).map_err(|e| Error::io(path, e))
    }
}

fn check_aligned(scores: &ScoreSet, trials: &TrialList) -> Result<()> {
    if scores.scores.len() != trials.len() {
        return Err(Error::shape("scores", trials.len(), scores.scores.len()));
    }
    Ok(())
}

fn check_indices(emb: &Matrix, trials: &TrialList) -> Result<()> {
    match trials.trials().iter().map(|t| t.a.max(t.b)).max() {
        Some(m) if m >= emb.rows() => Err(Error::shape(
            "trial index",
            format!("< {}", emb.rows()),
            m,
        )),
        _ => Ok(()),
    }
}

/// Cosine similarity of each trial's embeddings; `emb` row `i` is utterance `i`.
pub fn cosine_scores(emb: &Matrix, trials: &TrialList, normalize: bool) -> Result<ScoreSet> {
    check_indices(emb, trials)?;
    let normalized;
    let emb = if normalize {
        normalized = emb.normalized_rows()?;
        &normalized
    } else {
        emb
    };
    let scores = trials
        .trials()
        .iter()
        .map(|t| cosine(emb.row(t.a), emb.row(t.b)))
        .collect::<Result<_>>()?;
    Ok(ScoreSet { scores })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Sweeps every distinct score (and `+∞`) as threshold `t`, with
/// `FRR(t) = #{target < t} / #targets` and `FAR(t) = #{impostor ≥ t} / #impostors`.
/// Picks the lowest `t` minimizing `|FAR − FRR|` and reports `(FAR + FRR) / 2`.
pub fn equal_error_rate(scores: &ScoreSet, trials: &TrialList) -> Result<EerResult> {
    check_aligned(scores, trials)?;
    let mut targets = Vec::new();
    let mut impostors = Vec::new();
    for (t, &s) in trials.trials().iter().zip(&scores.scores) {
        if !s.is_finite() {
            return Err(Error::InsufficientData(format!("non-finite score for trial {} {}", t.a, t.b)));
        }
        if t.target {
            targets.push(s);
        } else {
            impostors.push(s);
        }
    }
    eer_from_scores(&targets, &impostors)
}

pub fn eer_from_scores(targets: &[f64], impostors: &[f64]) -> Result<EerResult> {
    if targets.is_empty() || impostors.is_empty() {
        return Err(Error::DegenerateTrials {
            targets: targets.len(),
            impostors: impostors.len(),
        });
    }
    let mut tar = targets.to_vec();
    let mut imp = impostors.to_vec();
    tar.sort_by(f64::total_cmp);
    imp.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = tar.iter().chain(&imp).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let (nt, ni) = (tar.len() as f64, imp.len() as f64);
    let (mut below_t, mut below_i) = (0usize, 0usize);
    let mut best: Option<(f64, EerResult)> = None;
    for &t in &thresholds {
        while below_t < tar.len() && tar[below_t] < t {
            below_t += 1;
        }
        while below_i < imp.len() && imp[below_i] < t {
            below_i += 1;
        }
        let frr = below_t as f64 / nt;
        let far = (imp.len() - below_i) as f64 / ni;
        let gap = (far - frr).abs();
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((
                gap,
                EerResult {
                    eer: (far + frr) / 2.0,
                    threshold: t,
                    far,
                    frr,
                },
            ));
        }
    }
    Ok(best.expect("at least one threshold").1)
}

/// Mean cosine over ordered pairs of distinct bases.
pub fn mean_basis_cosine(head: &ClassifierHead) -> Result<f64> {
    let n = head.n_speakers() as f64;
    Ok(between_class_loss(head)?.value / (n * (n - 1.0)))
}

/// Row `k` is the mean of the `rows` whose label is `k`; labels must cover
/// `0..n` with no gaps.
pub fn speaker_centroids(emb: &Matrix, labels: &[usize], rows: &[usize], n: usize) -> Result<Matrix> {
    let mut sums = Matrix::zeros(n, emb.cols());
    let mut counts = vec![0usize; n];
    for &i in rows {
        let y = labels[i];
        if y >= n {
            return Err(Error::shape("speaker_centroids", format!("labels < {n}"), y));
        }
        counts[y] += 1;
        axpy(1.0, emb.row(i), sums.row_mut(y));
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptySpeaker(k));
    }
    for (k, &c) in counts.iter().enumerate() {
        sums.row_mut(k).iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok(sums)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentReport {
    /// `cos(W_k, centroid_k)` per speaker.
    pub per_speaker: Vec<f64>,
    pub mean: f64,
    pub min: f64,
}

/// How well each basis points at its speaker's mean embedding.
/// `centroids` row `k` belongs to basis `k`.
pub fn basis_alignment_report(head: &ClassifierHead, centroids: &Matrix) -> Result<AlignmentReport> {
    if centroids.rows() != head.n_speakers() || centroids.cols() != head.embedding_dim() {
        return Err(Error::shape(
            "basis_alignment_report",
            format!("{} x {}", head.n_speakers(), head.embedding_dim()),
            format!("{} x {}", centroids.rows(), centroids.cols()),
        ));
    }
    let bases = head.bases();
    let per_speaker = (0..head.n_speakers())
        .map(|k| cosine(bases.row(k), centroids.row(k)))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_speaker.iter().sum::<f64>() / per_speaker.len() as f64;
    let min = per_speaker.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AlignmentReport { per_speaker, mean, min })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` uniform edges on `[−1, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Exact mean of the binned values.
    pub mean: f64,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `bin_left bin_right count` rows.
    pub fn to_text(&self, provenance: Option<&str>) -> String {
        let mut out = String::from("# speaker-bases histogram v1\n");
        push_comments(&mut out, provenance);
        let _ = writeln!(out, "# mean {:e}", self.mean);
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{:e} {:e} {c}", self.edges[k], self.edges[k + 1]);
        }
        out
    }

    pub fn write(&self, path: &Path, provenance: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_text(provenance)).map_err(|e| Error::io(path, e))
    }
}

/// Every ordered pair cosine `cos(v_i, v_j)`, `i ≠ j`, of the rows of `vectors`.
pub fn impostor_scores(vectors: &Matrix) -> Result<Vec<f64>> {
    let n = vectors.rows();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.push(cosine(vectors.row(i), vectors.row(j))?);
            }
        }
    }
    Ok(out)
}

/// Histogram of [`impostor_scores`] with `bins` uniform bins on `[−1, 1]`;
/// the last bin is closed.
pub fn impostor_histogram(vectors: &Matrix, bins: usize) -> Result<Histogram> {
    if vectors.rows() < 2 {
        return Err(Error::InsufficientSpeakers(vectors.rows()));
    }
    if bins < 2 {
        return Err(Error::config("eval.histogram_bins", "need at least 2 bins"));
    }
    let values = impostor_scores(vectors)?;
    let width = 2.0 / bins as f64;
    let edges = (0..=bins).map(|k| -1.0 + k as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &v in &values {
        let k = (((v + 1.0) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        mean: values.iter().sum::<f64>() / values.len() as f64,
    })
}

/// Metrics written by `eval` and `preset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub seed: u64,
    pub step: usize,
    pub backend: ScoringBackend,
    pub normalize: bool,
    pub eer: f64,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub n_targets: usize,
    pub n_impostors: usize,
    pub alignment_mean: f64,
    pub alignment_min: f64,
    pub mean_basis_cosine: f64,
    /// Mean ordered-pair cosine between training-speaker centroids.
    pub mean_centroid_cosine: f64,
}

impl MetricsSummary {
    pub fn to_text(&self, provenance: Option<&str>) -> String {
        let mut out = String::from("# speaker-bases metrics v1\n");
        push_comments(&mut out, provenance);
        out.push_str(&toml::to_string(self).expect("metrics serialize to TOML"));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("metrics", e.to_string()))
    }

    pub fn write(&self, path: &Path, provenance: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_text(provenance)).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub scores: ScoreSet,
    pub eer: EerResult,
    pub alignment: AlignmentReport,
    pub histogram: Histogram,
    pub summary: MetricsSummary,
}

/// Scores `trials` with the checkpoint's embeddings and collects every
/// diagnostic. Centroids, alignment and the b-vector training pairs come
/// from the training split.
pub fn evaluate(ck: &Checkpoint, ds: &Dataset, trials: &TrialList, cfg: &EvalSection) -> Result<Evaluation> {
    let emb = ck.encoder.embed(&ds.features)?;
    let scores = match cfg.backend {
        ScoringBackend::Cosine => cosine_scores(&emb, trials, cfg.normalize)?,
        ScoringBackend::Bvector => {
            let emb = if cfg.normalize { emb.normalized_rows()? } else { emb.clone() };
            let pairs = make_trials(ds, Split::Train, cfg.per_speaker_targets, 1.0, cfg.seed ^ BVECTOR_PAIR_SEED)?;
            let scorer = train_bvector_scorer(&emb, &pairs, &BVectorSettings::from_eval(cfg, emb.cols()))?;
            scorer.score_trials(&emb, trials)?
        }
    };
    let eer = equal_error_rate(&scores, trials)?;
    let train_rows = ds.indices(Split::Train);
    let centroids = speaker_centroids(&emb, &ds.labels, &train_rows, ck.head.n_speakers())?;
    let alignment = basis_alignment_report(&ck.head, &centroids)?;
    let histogram = impostor_histogram(&centroids, cfg.histogram_bins)?;
    let summary = MetricsSummary {
        seed: ck.seed,
        step: ck.step,
        backend: cfg.backend,
        normalize: cfg.normalize,
        eer: eer.eer,
        threshold: eer.threshold,
        far: eer.far,
        frr: eer.frr,
        n_targets: trials.n_targets(),
        n_impostors: trials.n_impostors(),
        alignment_mean: alignment.mean,
        alignment_min: alignment.min,
        mean_basis_cosine: mean_basis_cosine(&ck.head)?,
        mean_centroid_cosine: histogram.mean,
    };
    Ok(Evaluation {
        scores,
        eer,
        alignment,
        histogram,
        summary,
    })
}

/// Keeps the b-vector training pairs apart from the evaluation trials when
/// both are drawn with the same eval seed.
const BVECTOR_PAIR_SEED: u64 = 0x6276_6563;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticDatasetSpec};
    use proptest::prelude::*;

    fn trials(target: &[bool]) -> TrialList {
        TrialList::new(
            target
                .iter()
                .enumerate()
                .map(|(i, &t)| Trial { a: 2 * i, b: 2 * i + 1, target: t })
                .collect(),
        )
        .unwrap()
    }

    fn eer(tar: &[f64], imp: &[f64]) -> EerResult {
        eer_from_scores(tar, imp).unwrap()
    }

    /// Every score plus ±∞ as threshold, no sorting.
    fn brute_force(tar: &[f64], imp: &[f64]) -> (f64, f64) {
        let mut candidates: Vec<f64> = tar.iter().chain(imp).copied().collect();
        candidates.extend([f64::NEG_INFINITY, f64::INFINITY]);
        let mut best = (f64::INFINITY, f64::INFINITY, 0.0);
        for &t in &candidates {
            let frr = tar.iter().filter(|&&s| s < t).count() as f64 / tar.len() as f64;
            let far = imp.iter().filter(|&&s| s >= t).count() as f64 / imp.len() as f64;
            let gap = (far - frr).abs();
            if gap < best.0 || (gap == best.0 && t < best.1) {
                best = (gap, t, (far + frr) / 2.0);
            }
        }
        (best.2, best.1)
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&[0.9, 0.8], &[0.1, 0.2]).eer, 0.0);
        let r = eer(&[0.8, 0.4], &[0.6, 0.2]);
        assert_eq!((r.eer, r.threshold), (0.5, 0.6));
        assert_eq!(eer(&[0.3, 0.3], &[0.3, 0.3, 0.3]).eer, 0.5);
    }

    #[test]
    fn eer_matches_brute_force() {
        let mut rng = SeededRng::new(99);
        for case in 0..100 {
            let n = 2 + rng.below(499);
            let nt = 1 + rng.below(n - 1);
            // Coarse grids make ties common.
            let grid = [4.0, 20.0, 1e6][case % 3];
            let mut draw = |shift: f64| (((rng.normal() + shift) * grid).round()) / grid;
            let tar: Vec<f64> = (0..nt).map(|_| draw(1.0)).collect();
            let imp: Vec<f64> = (0..n - nt).map(|_| draw(0.0)).collect();
            let got = eer(&tar, &imp);
            let (expected, t) = brute_force(&tar, &imp);
            assert_eq!(got.eer, expected);
            let min = tar.iter().chain(&imp).copied().fold(f64::INFINITY, f64::min);
            assert!(got.threshold == t || (t == f64::NEG_INFINITY && got.threshold == min));
        }
    }

    proptest! {
        #[test]
        fn eer_is_invariant_under_increasing_maps(
            tar in prop::collection::vec(-3.0f64..3.0, 1..40),
            imp in prop::collection::vec(-3.0f64..3.0, 1..40),
        ) {
            let base = eer(&tar, &imp);
            let map = |v: &Vec<f64>| v.iter().map(|x| (2.0 * x).exp() + 1.0).collect::<Vec<_>>();
            prop_assert_eq!(eer(&map(&tar), &map(&imp)).eer, base.eer);
            prop_assert!((0.0..=1.0).contains(&base.eer));
        }

        #[test]
        fn cosine_scores_are_symmetric(values in prop::collection::vec(-2.0f64..2.0, 12)) {
            prop_assume!(values.chunks(4).all(|r| r.iter().any(|v| v.abs() > 1e-3)));
            let emb = Matrix::from_vec(3, 4, values).unwrap();
            let fwd = TrialList::new(vec![
                Trial { a: 0, b: 1, target: true }, Trial { a: 1, b: 2, target: false },
            ]).unwrap();
            let rev = TrialList::new(vec![
                Trial { a: 1, b: 0, target: true }, Trial { a: 2, b: 1, target: false },
            ]).unwrap();
            prop_assert_eq!(cosine_scores(&emb, &fwd, false).unwrap(), cosine_scores(&emb, &rev, false).unwrap());
        }
    }

    #[test]
    fn degenerate_trials_are_rejected() {
        assert!(matches!(eer_from_scores(&[1.0], &[]), Err(Error::DegenerateTrials { .. })));
        assert!(TrialList::new(vec![Trial { a: 0, b: 1, target: true }]).is_err());
        assert!(TrialList::new(vec![Trial { a: 1, b: 1, target: true }, Trial { a: 0, b: 1, target: false }]).is_err());
    }

    #[test]
    fn cosine_score_examples() {
        let emb = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [0.0, 3.0], [-1.0, 0.0]]).unwrap();
        let list = TrialList::new(vec![
            Trial { a: 0, b: 1, target: true },
            Trial { a: 0, b: 2, target: false },
            Trial { a: 0, b: 3, target: false },
        ])
        .unwrap();
        assert_eq!(cosine_scores(&emb, &list, false).unwrap().scores, vec![1.0, 0.0, -1.0]);
        assert_eq!(cosine_scores(&emb, &list, true).unwrap().scores, vec![1.0, 0.0, -1.0]);
    }

    fn small_ds(speakers: usize, utts: usize) -> Dataset {
        generate(&SyntheticDatasetSpec {
            n_speakers: speakers,
            utterances_per_speaker: utts,
            feature_dim: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn trial_counts() {
        // 2 speakers with 2 heldout utterances each.
        let ds = small_ds(2, 10);
        let list = make_trials(&ds, Split::Heldout, 1, 1.0, 3).unwrap();
        assert_eq!((list.n_targets(), list.n_impostors()), (2, 2));
        assert_eq!(list, make_trials(&ds, Split::Heldout, 1, 1.0, 3).unwrap());

        let ds = small_ds(50, 40);
        let list = make_trials(&ds, Split::Heldout, 20, 1.0, 1).unwrap();
        assert_eq!((list.n_targets(), list.n_impostors()), (1000, 1000));
        let distinct: HashSet<_> = list.trials().iter().map(|t| (t.a.min(t.b), t.a.max(t.b))).collect();
        assert_eq!(distinct.len(), list.len());
        for t in list.trials() {
            assert_ne!(t.a, t.b);
            assert_eq!(ds.labels[t.a] == ds.labels[t.b], t.target);
            assert_eq!(ds.splits[t.a], Split::Heldout);
        }
    }

    #[test]
    fn trials_need_two_speakers() {
        let ds = small_ds(2, 1);
        assert!(matches!(make_trials(&ds, Split::Heldout, 5, 1.0, 1), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn pair_ranks_enumerate_all_pairs() {
        let n = 6;
        let pairs: Vec<_> = (0..n * (n - 1) / 2).map(|r| pair_at(n, r)).collect();
        let mut expected = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                expected.push((i, j));
            }
        }
        assert_eq!(pairs, expected);
    }

    #[test]
    fn file_round_trips() {
        let list = trials(&[true, false, true]);
        assert_eq!(TrialList::from_text(&list.to_text(Some("seed = 1"))).unwrap(), list);
        let scores = ScoreSet { scores: vec![0.1, -0.25, 1.0 / 3.0] };
        let (l2, s2) = ScoreSet::from_text(&scores.to_text(&list, None).unwrap()).unwrap();
        assert_eq!((l2, s2), (list, scores));
        let m = MetricsSummary {
            seed: 1,
            step: 2,
            backend: ScoringBackend::Cosine,
            normalize: false,
            eer: 0.125,
            threshold: f64::INFINITY,
            far: 0.0,
            frr: 0.25,
            n_targets: 4,
            n_impostors: 4,
            alignment_mean: 0.9,
            alignment_min: 0.5,
            mean_basis_cosine: -0.02,
            mean_centroid_cosine: 0.01,
        };
        assert_eq!(MetricsSummary::from_text(&m.to_text(Some("[run]\nseed = 1"))).unwrap(), m);
    }

    #[test]
    fn histogram_examples() {
        let orth = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let h = impostor_histogram(&orth, 4).unwrap();
        assert_eq!(h.counts, vec![0, 0, 2, 0]);
        assert!(h.edges[2] <= 0.0 && 0.0 < h.edges[3]);
        let mut rng = SeededRng::new(4);
        let v = rng.normal_matrix(9, 5, 1.0);
        let h = impostor_histogram(&v, 7).unwrap();
        assert_eq!(h.total(), 9 * 8);
        assert_eq!(h.edges.len(), 8);
        let same = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert_eq!(impostor_histogram(&same, 5).unwrap().counts[4], 2);
    }

    #[test]
    fn alignment_examples() {
        let mut rng = SeededRng::new(2);
        let head = ClassifierHead::new(4, 3, false, &mut rng).unwrap();
        let report = basis_alignment_report(&head, &head.bases()).unwrap();
        assert!(report.per_speaker.iter().all(|&c| c == 1.0));
        let random = rng.normal_matrix(3, 4, 1.0);
        let report = basis_alignment_report(&head, &random).unwrap();
        assert!(report.per_speaker.iter().all(|c| (-1.0..=1.0).contains(c)));
        assert!(report.min <= report.mean);
    }

    #[test]
    fn mean_basis_cosine_of_identical_pair_is_one() {
        let head = ClassifierHead::from_parts(
            Matrix::from_rows(&[[1.0, 2.0], [0.5, 1.0]]).unwrap(),
            vec![0.0, 0.0].into(),
            false,
        )
        .unwrap();
        assert!((mean_basis_cosine(&head).unwrap() - 1.0).abs() < 1e-15);
    }
}
