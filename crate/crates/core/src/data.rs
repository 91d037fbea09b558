//! Synthetic speakers and mini-batch sampling.
//!
//! Speakers are Gaussian clusters: each speaker gets a mean drawn from
//! `N(0, spread²·I)` and each utterance adds `N(0, noise²·I)` noise. Two
//! samplers are provided. Random batches draw utterances uniformly. Grouped
//! batches draw `batch_size / U` speakers with `U` utterances each, which is
//! what centroid-based losses such as GE2E require.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, SeededRng};

pub const DATASET_MAGIC: &str = "# speaker-bases dataset v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDatasetSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub feature_dim: usize,
    /// Standard deviation of speaker means.
    pub speaker_spread: f64,
    /// Standard deviation of utterances around their speaker mean.
    pub utterance_noise: f64,
    pub seed: u64,
    /// Hold out whole speakers instead of 20% of every speaker's utterances.
    pub disjoint_eval_speakers: bool,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            n_speakers: 50,
            utterances_per_speaker: 40,
            feature_dim: 32,
            speaker_spread: 1.0,
            utterance_noise: 0.3,
            seed: 1,
            disjoint_eval_speakers: false,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::InvalidSpec(format!("dataset.{field}: {reason}")));
        if self.n_speakers < 2 {
            return bad("n_speakers", "need at least 2 speakers");
        }
        if self.utterances_per_speaker < 1 {
            return bad("utterances_per_speaker", "need at least 1 utterance");
        }
        if self.feature_dim < 1 {
            return bad("feature_dim", "must be positive");
        }
        if !(self.speaker_spread > 0.0 && self.speaker_spread.is_finite()) {
            return bad("speaker_spread", "must be finite and > 0");
        }
        if !(self.utterance_noise >= 0.0 && self.utterance_noise.is_finite()) {
            return bad("utterance_noise", "must be finite and >= 0");
        }
        if self.disjoint_eval_speakers && self.n_speakers < 3 {
            return bad("disjoint_eval_speakers", "need at least 3 speakers to hold some out");
        }
        Ok(())
    }

    fn heldout_per_speaker(&self) -> usize {
        let u = self.utterances_per_speaker;
        if u < 2 {
            0
        } else {
            ((u as f64 * 0.2).round() as usize).clamp(1, u - 1)
        }
    }

    fn heldout_speakers(&self) -> usize {
        if !self.disjoint_eval_speakers {
            return 0;
        }
        ((self.n_speakers as f64 * 0.2).round() as usize).clamp(1, self.n_speakers - 2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" => Ok(Split::Heldout),
            other => Err(Error::parse("split", format!("unknown split `{other}`"))),
        }
    }
}

/// Utterance features with speaker labels and train/heldout tags.
/// Utterance `i` belongs to speaker `i / utterances_per_speaker`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticDatasetSpec,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
}

pub fn generate(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let means = rng.normal_matrix(spec.n_speakers, spec.feature_dim, spec.speaker_spread);
    let u = spec.utterances_per_speaker;
    let rows = spec.n_speakers * u;
    let mut features = Matrix::zeros(rows, spec.feature_dim);
    let mut labels = Vec::with_capacity(rows);
    let mut splits = Vec::with_capacity(rows);
    let heldout = spec.heldout_per_speaker();
    let first_heldout_speaker = spec.n_speakers - spec.heldout_speakers();
    for k in 0..spec.n_speakers {
        for j in 0..u {
            let row = features.row_mut(k * u + j);
            for (f, m) in row.iter_mut().zip(means.row(k)) {
                *f = m + spec.utterance_noise * rng.normal();
            }
            labels.push(k);
            let is_heldout = if spec.disjoint_eval_speakers {
                k >= first_heldout_speaker
            } else {
                j >= u - heldout
            };
            splits.push(if is_heldout { Split::Heldout } else { Split::Train });
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        features,
        labels,
        splits,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_speakers(&self) -> usize {
        self.spec.n_speakers
    }

    /// Speakers with at least one training utterance. They are always the
    /// labels `0..n_train_speakers()`.
    pub fn n_train_speakers(&self) -> usize {
        self.labels
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == Split::Train)
            .map(|(y, _)| y + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Utterances of `split`, grouped by speaker label.
    pub fn by_speaker(&self, split: Split) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_speakers()];
        for i in self.indices(split) {
            groups[self.labels[i]].push(i);
        }
        groups
    }

    /// Writes `label,split,f_1..f_d` rows under a commented header. Extra
    /// `provenance` text is written as comment lines after the header.
    pub fn to_text(&self, provenance: Option<&str>) -> Result<String> {
        let s = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "{DATASET_MAGIC}");
        let _ = writeln!(out, "# n_speakers={}", s.n_speakers);
        let _ = writeln!(out, "# utterances_per_speaker={}", s.utterances_per_speaker);
        let _ = writeln!(out, "# feature_dim={}", s.feature_dim);
        let _ = writeln!(out, "# speaker_spread={:e}", s.speaker_spread);
        let _ = writeln!(out, "# utterance_noise={:e}", s.utterance_noise);
        let _ = writeln!(out, "# seed={}", s.seed);
        let _ = writeln!(out, "# disjoint_eval_speakers={}", s.disjoint_eval_speakers);
        if let Some(p) = provenance {
            for line in p.lines() {
                let _ = writeln!(out, "#| {line}");
            }
        }
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string(), "split".to_string()];
        header.extend((1..=s.feature_dim).map(|j| format!("f_{j}")));
        let csv_err = |e: csv::Error| Error::parse("dataset", e.to_string());
        writer.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut record = vec![self.labels[i].to_string(), self.splits[i].name().to_string()];
            record.extend(self.features.row(i).iter().map(|v| format!("{v:e}")));
            writer.write_record(&record).map_err(csv_err)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::parse("dataset", e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |m: String| Error::parse("dataset", m);
        let mut lines = text.lines();
        if lines.next() != Some(DATASET_MAGIC) {
            return Err(perr(format!("missing `{DATASET_MAGIC}` header")));
        }
        let mut spec = SyntheticDatasetSpec::default();
        for line in text.lines().skip(1).take_while(|l| l.starts_with('#')) {
            let Some(kv) = line.strip_prefix("# ") else { continue };
            let Some((k, v)) = kv.split_once('=') else { continue };
            let bad = || perr(format!("bad header value `{line}`"));
            match k {
                "n_speakers" => spec.n_speakers = v.parse().map_err(|_| bad())?,
                "utterances_per_speaker" => spec.utterances_per_speaker = v.parse().map_err(|_| bad())?,
                "feature_dim" => spec.feature_dim = v.parse().map_err(|_| bad())?,
                "speaker_spread" => spec.speaker_spread = v.parse().map_err(|_| bad())?,
                "utterance_noise" => spec.utterance_noise = v.parse().map_err(|_| bad())?,
                "seed" => spec.seed = v.parse().map_err(|_| bad())?,
                "disjoint_eval_speakers" => spec.disjoint_eval_speakers = v.parse().map_err(|_| bad())?,
                _ => return Err(perr(format!("unknown header key `{k}`"))),
            }
        }
        spec.validate()?;

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut splits = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| perr(e.to_string()))?;
            if record.len() != spec.feature_dim + 2 {
                return Err(perr(format!("row {row}: expected {} fields", spec.feature_dim + 2)));
            }
            let label: usize = record[0].parse().map_err(|_| perr(format!("row {row}: bad label")))?;
            if label >= spec.n_speakers {
                return Err(perr(format!("row {row}: label {label} out of range")));
            }
            labels.push(label);
            splits.push(record[1].parse()?);
            for field in record.iter().skip(2) {
                data.push(field.parse::<f64>().map_err(|_| perr(format!("row {row}: bad value `{field}`")))?);
            }
        }
        if labels.len() != spec.n_speakers * spec.utterances_per_speaker {
            return Err(perr(format!(
                "expected {} rows, found {}",
                spec.n_speakers * spec.utterances_per_speaker,
                labels.len()
            )));
        }
        let features = Matrix::from_vec(labels.len(), spec.feature_dim, data)?;
        Ok(Dataset {
            spec,
            features,
            labels,
            splits,
        })
    }

    pub fn write(&self, path: &Path, provenance: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_text(provenance)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Random,
    SpeakerGrouped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchPlan {
    pub mode: BatchMode,
    pub batch_size: usize,
    /// Utterances per speaker in grouped mode.
    pub utterances_per_speaker: usize,
    pub seed: u64,
}

impl Default for BatchPlan {
    fn default() -> Self {
        Self {
            mode: BatchMode::Random,
            batch_size: 100,
            utterances_per_speaker: 5,
            seed: 1,
        }
    }
}

/// Features of one mini-batch and where they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Dataset row of each batch row.
    pub indices: Vec<usize>,
}

impl BatchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidPlan("batch.batch_size must be positive".into()));
        }
        if self.mode == BatchMode::SpeakerGrouped {
            if self.utterances_per_speaker == 0 {
                return Err(Error::InvalidPlan("batch.utterances_per_speaker must be positive".into()));
            }
            if self.batch_size % self.utterances_per_speaker != 0 {
                return Err(Error::InvalidPlan(format!(
                    "batch.batch_size {} is not divisible by batch.utterances_per_speaker {}",
                    self.batch_size, self.utterances_per_speaker
                )));
            }
        }
        Ok(())
    }

    /// Speakers per grouped batch.
    pub fn speakers_per_batch(&self) -> usize {
        match self.mode {
            BatchMode::Random => self.batch_size,
            BatchMode::SpeakerGrouped => self.batch_size / self.utterances_per_speaker,
        }
    }

    /// Mini-batch number `step` of the training split; a pure function of
    /// `(plan, dataset, step)`.
    pub fn next_batch(&self, ds: &Dataset, step: usize) -> Result<FeatureBatch> {
        self.validate()?;
        let mut rng = SeededRng::with_stream(self.seed, step as u64);
        let indices = match self.mode {
            BatchMode::Random => {
                let pool = ds.indices(Split::Train);
                if pool.len() < self.batch_size {
                    return Err(Error::InvalidPlan(format!(
                        "batch.batch_size {} exceeds the {} training utterances",
                        self.batch_size,
                        pool.len()
                    )));
                }
                rng.sample_indices(pool.len(), self.batch_size)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect::<Vec<_>>()
            }
            BatchMode::SpeakerGrouped => {
                let u = self.utterances_per_speaker;
                let groups: Vec<Vec<usize>> = ds
                    .by_speaker(Split::Train)
                    .into_iter()
                    .filter(|g| g.len() >= u)
                    .collect();
                let wanted = self.speakers_per_batch();
                if groups.len() < wanted.max(2) {
                    return Err(Error::InvalidPlan(format!(
                        "grouped batches need {} speakers with >= {u} training utterances, dataset has {}",
                        wanted.max(2),
                        groups.len()
                    )));
                }
                let mut out = Vec::with_capacity(self.batch_size);
                for g in rng.sample_indices(groups.len(), wanted) {
                    let group = &groups[g];
                    out.extend(rng.sample_indices(group.len(), u).into_iter().map(|i| group[i]));
                }
                out
            }
        };
        Ok(FeatureBatch {
            features: ds.features.select_rows(&indices),
            labels: indices.iter().map(|&i| ds.labels[i]).collect(),
            indices,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small() -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            n_speakers: 6,
            utterances_per_speaker: 10,
            feature_dim: 4,
            ..Default::default()
        }
    }

    #[test]
    fn default_spec_counts() {
        let ds = generate(&SyntheticDatasetSpec::default()).unwrap();
        assert_eq!(ds.features.shape(), (2000, 32));
        for k in 0..50 {
            assert_eq!(ds.labels.iter().filter(|&&y| y == k).count(), 40);
        }
        assert_eq!(ds.indices(Split::Heldout).len(), 50 * 8);
        assert_eq!(ds.n_train_speakers(), 50);
        for g in ds.by_speaker(Split::Heldout) {
            assert_eq!(g.len(), 8);
        }
    }

    #[test]
    fn zero_noise_makes_identical_utterances() {
        let ds = generate(&SyntheticDatasetSpec {
            utterance_noise: 0.0,
            ..small()
        })
        .unwrap();
        for k in 0..6 {
            for j in 1..10 {
                assert_eq!(ds.features.row(k * 10 + j), ds.features.row(k * 10));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticDatasetSpec { seed: 2, ..small() }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn splits_cover_every_speaker() {
        let ds = generate(&SyntheticDatasetSpec {
            utterances_per_speaker: 2,
            ..small()
        })
        .unwrap();
        for g in ds.by_speaker(Split::Heldout) {
            assert_eq!(g.len(), 1);
        }
        let single = generate(&SyntheticDatasetSpec {
            utterances_per_speaker: 1,
            ..small()
        })
        .unwrap();
        assert!(single.indices(Split::Heldout).is_empty());
    }

    #[test]
    fn disjoint_speakers_hold_out_whole_speakers() {
        let ds = generate(&SyntheticDatasetSpec {
            n_speakers: 10,
            disjoint_eval_speakers: true,
            ..small()
        })
        .unwrap();
        assert_eq!(ds.n_train_speakers(), 8);
        let held: BTreeSet<usize> = ds.indices(Split::Heldout).iter().map(|&i| ds.labels[i]).collect();
        assert_eq!(held, BTreeSet::from([8, 9]));
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            SyntheticDatasetSpec { n_speakers: 1, ..small() },
            SyntheticDatasetSpec { utterances_per_speaker: 0, ..small() },
            SyntheticDatasetSpec { speaker_spread: 0.0, ..small() },
            SyntheticDatasetSpec { utterance_noise: -1.0, ..small() },
        ] {
            assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
        }
    }

    #[test]
    fn text_round_trip_preserves_values() {
        let ds = generate(&small()).unwrap();
        let text = ds.to_text(Some("[run]\nseed = 4")).unwrap();
        let back = Dataset::from_text(&text).unwrap();
        assert_eq!(back, ds);
        assert!(Dataset::from_text(&text.replace("f_4", "f_4,extra")).is_err());
    }

    #[test]
    fn grouped_batches_hold_twenty_speakers() {
        let ds = generate(&SyntheticDatasetSpec::default()).unwrap();
        let plan = BatchPlan {
            mode: BatchMode::SpeakerGrouped,
            batch_size: 100,
            utterances_per_speaker: 5,
            seed: 3,
        };
        for step in 0..20 {
            let b = plan.next_batch(&ds, step).unwrap();
            let speakers: BTreeSet<usize> = b.labels.iter().copied().collect();
            assert_eq!(speakers.len(), 20);
            for s in &speakers {
                assert_eq!(b.labels.iter().filter(|y| *y == s).count(), 5);
            }
            assert!(b.indices.iter().all(|&i| ds.splits[i] == Split::Train));
        }
        let plan = BatchPlan {
            batch_size: 10,
            utterances_per_speaker: 1,
            ..plan
        };
        let b = plan.next_batch(&ds, 0).unwrap();
        assert_eq!(b.labels.iter().collect::<BTreeSet<_>>().len(), 10);
    }

    #[test]
    fn batches_depend_only_on_seed_and_step() {
        let ds = generate(&small()).unwrap();
        let plan = BatchPlan {
            batch_size: 12,
            ..Default::default()
        };
        assert_eq!(plan.next_batch(&ds, 5).unwrap(), plan.next_batch(&ds, 5).unwrap());
        assert_ne!(plan.next_batch(&ds, 5).unwrap().indices, plan.next_batch(&ds, 6).unwrap().indices);
        let b = plan.next_batch(&ds, 0).unwrap();
        assert_eq!(b.indices.iter().collect::<BTreeSet<_>>().len(), 12);
    }

    #[test]
    fn random_batches_cover_training_set() {
        let ds = generate(&SyntheticDatasetSpec::default()).unwrap();
        let plan = BatchPlan::default();
        let mut seen = vec![false; ds.len()];
        for step in 0..1000 {
            for i in plan.next_batch(&ds, step).unwrap().indices {
                seen[i] = true;
            }
        }
        assert!(ds.indices(Split::Train).iter().all(|&i| seen[i]));
    }

    #[test]
    fn invalid_plans_rejected() {
        let ds = generate(&small()).unwrap();
        let grouped = BatchPlan {
            mode: BatchMode::SpeakerGrouped,
            batch_size: 10,
            utterances_per_speaker: 3,
            seed: 1,
        };
        assert!(matches!(grouped.next_batch(&ds, 0), Err(Error::InvalidPlan(_))));
        let too_many = BatchPlan {
            batch_size: 35,
            utterances_per_speaker: 5,
            ..grouped
        };
        assert!(matches!(too_many.next_batch(&ds, 0), Err(Error::InvalidPlan(_))));
        let huge = BatchPlan {
            batch_size: 1000,
            ..Default::default()
        };
        assert!(matches!(huge.next_batch(&ds, 0), Err(Error::InvalidPlan(_))));
    }
}
