//! Learned pair scoring on b-vectors `[a + b ; a − b ; a ⊙ b]`.

use super::{ScoreSet, Trial, TrialList};
use crate::error::{Error, Result};
use crate::losses::{softmax_loss, EmbeddingBatch};
use crate::model::{ClassifierHead, MlpEncoder};
use crate::numeric::{Matrix, SeededRng, Vector};
use crate::training::{EvalSection, OptimizerSettings, OptimizerState, ParamRole, ParamSlot};

const INIT_STREAM: u64 = 1 << 63;
/// Output node of the same-speaker class; node 1 is different-speaker.
const SAME: usize = 0;

pub fn bvector_features(a: &[f64], b: &[f64]) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::shape("bvector_features", a.len(), b.len()));
    }
    let mut out = Vec::with_capacity(3 * a.len());
    out.extend(a.iter().zip(b).map(|(x, y)| x + y));
    out.extend(a.iter().zip(b).map(|(x, y)| x - y));
    out.extend(a.iter().zip(b).map(|(x, y)| x * y));
    Ok(Vector(out))
}

fn bvector_rows(emb: &Matrix, pairs: impl ExactSizeIterator<Item = (usize, usize)>) -> Result<Matrix> {
    let d = emb.cols();
    let mut out = Matrix::zeros(pairs.len(), 3 * d);
    for (r, (a, b)) in pairs.enumerate() {
        out.row_mut(r).copy_from_slice(&bvector_features(emb.row(a), emb.row(b))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BVectorSettings {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl BVectorSettings {
    /// Three hidden layers of `width_factor × embedding_dim` nodes.
    pub fn from_eval(cfg: &EvalSection, embedding_dim: usize) -> Self {
        Self {
            hidden_width: cfg.bvector_width_factor * embedding_dim,
            hidden_layers: 3,
            steps: cfg.bvector_steps,
            batch_size: cfg.bvector_batch,
            learning_rate: cfg.bvector_learning_rate,
            leaky_slope: 0.01,
            seed: cfg.seed,
        }
    }
}

/// Fully connected classifier over b-vectors with a two-node output.
#[derive(Clone, Debug, PartialEq)]
pub struct BVectorScorer {
    pub hidden: MlpEncoder,
    pub output: ClassifierHead,
}

impl BVectorScorer {
    pub fn new(embedding_dim: usize, settings: &BVectorSettings) -> Result<Self> {
        let mut rng = SeededRng::with_stream(settings.seed, INIT_STREAM);
        let mut dims = vec![3 * embedding_dim];
        dims.extend(std::iter::repeat_n(settings.hidden_width, settings.hidden_layers));
        let hidden = MlpEncoder::new(&dims, settings.leaky_slope, true, &mut rng)?;
        let output = ClassifierHead::new(settings.hidden_width, 2, true, &mut rng)?;
        Ok(Self { hidden, output })
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden.input_dim() / 3
    }

    /// Same-speaker minus different-speaker log-probability of each row,
    /// which equals the difference of the two logits.
    fn directed(&self, bvectors: &Matrix) -> Result<Vec<f64>> {
        let logits = self.output.logits(&self.hidden.embed(bvectors)?)?;
        Ok(logits.row_iter().map(|l| l[SAME] - l[1 - SAME]).collect())
    }

    /// Score of each `(a, b)` averaged with the score of `(b, a)`.
    pub fn score_pairs(&self, emb: &Matrix, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        if emb.cols() != self.embedding_dim() {
            return Err(Error::shape("bvector scorer", self.embedding_dim(), emb.cols()));
        }
        let fwd = self.directed(&bvector_rows(emb, pairs.iter().copied())?)?;
        let rev = self.directed(&bvector_rows(emb, pairs.iter().map(|&(a, b)| (b, a)))?)?;
        Ok(fwd.iter().zip(&rev).map(|(f, r)| 0.5 * (f + r)).collect())
    }

    pub fn score_trials(&self, emb: &Matrix, trials: &TrialList) -> Result<ScoreSet> {
        let pairs: Vec<_> = trials.trials().iter().map(|t| (t.a, t.b)).collect();
        Ok(ScoreSet {
            scores: self.score_pairs(emb, &pairs)?,
        })
    }

    /// Fraction of trials whose score sign matches the label.
    pub fn accuracy(&self, emb: &Matrix, trials: &TrialList) -> Result<f64> {
        let scores = self.score_trials(emb, trials)?;
        let hits = trials
            .trials()
            .iter()
            .zip(&scores.scores)
            .filter(|(t, &s)| (s > 0.0) == t.target)
            .count();
        Ok(hits as f64 / trials.len() as f64)
    }
}

/// Softmax cross-entropy training on both orders of every pair, with Adam.
/// Mini-batch `k` is drawn from RNG stream `k` of `settings.seed`.
pub fn train_bvector_scorer(emb: &Matrix, pairs: &TrialList, settings: &BVectorSettings) -> Result<BVectorScorer> {
    if settings.batch_size == 0 || settings.hidden_width == 0 {
        return Err(Error::config("eval.bvector_batch", "b-vector batch and width must be positive"));
    }
    super::check_indices(emb, pairs)?;
    let mut scorer = BVectorScorer::new(emb.cols(), settings)?;
    let examples: Vec<Trial> = pairs
        .trials()
        .iter()
        .flat_map(|t| [*t, Trial { a: t.b, b: t.a, target: t.target }])
        .collect();
    let mut optimizer = OptimizerState::new(OptimizerSettings {
        learning_rate: settings.learning_rate,
        ..Default::default()
    });
    for step in 0..settings.steps {
        let mut rng = SeededRng::with_stream(settings.seed, step as u64);
        let picked = rng.sample_indices(examples.len(), settings.batch_size.min(examples.len()));
        let x = bvector_rows(emb, picked.iter().map(|&i| (examples[i].a, examples[i].b)))?;
        let labels = picked
            .iter()
            .map(|&i| if examples[i].target { SAME } else { 1 - SAME })
            .collect();
        let (hidden, trace) = scorer.hidden.forward(&x)?;
        let out = softmax_loss(&EmbeddingBatch::new(hidden, labels)?, &scorer.output)?;
        if !out.is_finite() {
            return Err(Error::InsufficientData(format!("b-vector training diverged at step {step}")));
        }
        let grad_hidden = out.grad_embeddings.expect("softmax has embedding gradients");
        let grads = scorer.hidden.backward(&trace, &grad_hidden)?;
        let (weights, biases) = scorer.hidden.params_mut();
        let mut slots = Vec::with_capacity(2 * weights.len() + 2);
        for ((w, gw), (b, gb)) in weights.iter_mut().zip(&grads.weights).zip(biases.iter_mut().zip(&grads.biases)) {
            slots.push(ParamSlot { role: ParamRole::Weight, values: w.as_mut_slice(), grad: Some(gw.as_slice()) });
            slots.push(ParamSlot { role: ParamRole::Bias, values: b, grad: Some(gb) });
        }
        let (basis, bias) = scorer.output.params_mut();
        slots.push(ParamSlot {
            role: ParamRole::Weight,
            values: basis.as_mut_slice(),
            grad: out.grad_basis.as_ref().map(Matrix::as_slice),
        });
        slots.push(ParamSlot { role: ParamRole::Bias, values: bias, grad: out.grad_bias.as_deref() });
        optimizer.step(&mut slots)?;
    }
    Ok(scorer)
}

/// Pair task whose classes a single linear read-out of the product block
/// separates: unit-norm embeddings scattered tightly around random unit
/// speaker directions. `noise` is the expected norm of the perturbation
/// added to a speaker direction before renormalizing.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparablePairTask {
    pub embeddings: Matrix,
    pub labels: Vec<usize>,
    /// Pairs among the first `train_speakers` speakers.
    pub train: TrialList,
    /// Pairs among the remaining speakers.
    pub heldout: TrialList,
}

impl SeparablePairTask {
    pub fn generate(dim: usize, speakers: usize, utterances: usize, noise: f64, seed: u64) -> Result<Self> {
        if speakers < 4 || utterances < 2 {
            return Err(Error::InsufficientData("need >= 4 speakers with >= 2 utterances".into()));
        }
        let mut rng = SeededRng::new(seed);
        let means = rng.normal_matrix(speakers, dim, 1.0).normalized_rows()?;
        let std = noise / (dim as f64).sqrt();
        let mut raw = Matrix::zeros(speakers * utterances, dim);
        let mut labels = Vec::with_capacity(speakers * utterances);
        for k in 0..speakers {
            for u in 0..utterances {
                for (x, m) in raw.row_mut(k * utterances + u).iter_mut().zip(means.row(k)) {
                    *x = m + std * rng.normal();
                }
                labels.push(k);
            }
        }
        let embeddings = raw.normalized_rows()?;
        let train_speakers = speakers * 3 / 4;
        let mut split = |range: std::ops::Range<usize>| -> Result<TrialList> {
            let mut trials = Vec::new();
            for k in range.clone() {
                for u in 0..utterances {
                    for v in u + 1..utterances {
                        trials.push(Trial { a: k * utterances + u, b: k * utterances + v, target: true });
                    }
                }
            }
            let targets = trials.len();
            let width = range.len();
            while trials.len() < 2 * targets {
                let x = range.start + rng.below(width);
                let y = range.start + rng.below(width);
                if x != y {
                    trials.push(Trial {
                        a: x * utterances + rng.below(utterances),
                        b: y * utterances + rng.below(utterances),
                        target: false,
                    });
                }
            }
            TrialList::new(trials)
        };
        let train = split(0..train_speakers)?;
        let heldout = split(train_speakers..speakers)?;
        Ok(Self { embeddings, labels, train, heldout })
    }
}
