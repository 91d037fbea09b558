//! Analytic gradients against central finite differences.

use std::fmt;

use crate::error::Result;
use crate::losses::{
    ge2e_centroids, AmSoftmaxParams, CenterStore, EmbeddingBatch, Ge2eParams, LossInputs, LossKind, LossOutput,
};
use crate::model::{ClassifierHead, MlpEncoder};
use crate::numeric::{cosine, finite_difference_gradient, relative_error, Matrix, SeededRng, Vector};

pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-6;
pub const CONFIGURATIONS: usize = 10;

/// Configurations whose discrete choices (hard-negative set, GE2E argmax)
/// sit closer than this to a tie are redrawn, since a finite-difference step
/// across the tie measures a different function.
const SELECTION_MARGIN: f64 = 1e-4;

/// Relative error between `grad(x)` and the central difference of `value`.
pub fn check_gradient<F>(x: &[f64], f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = f(x)?;
    let numeric = finite_difference_gradient(|p| f(p).map_or(f64::NAN, |(v, _)| v), x, FD_STEP)?;
    Ok(relative_error(&analytic, &numeric))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub configurations: usize,
    pub max_relative_error: f64,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= GRADCHECK_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub seed: u64,
    /// One entry per loss, gradients with respect to the loss inputs.
    pub losses: Vec<GradCheckEntry>,
    /// The same losses backpropagated through a small encoder.
    pub through_encoder: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.losses.iter().chain(&self.through_encoder).all(GradCheckEntry::passed)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# gradcheck seed={} fd_step={FD_STEP:e} tolerance={GRADCHECK_TOLERANCE:e}",
            self.seed
        )?;
        writeln!(f, "{:<24} {:>7} {:>14}  status", "loss", "configs", "max_rel_error")?;
        for e in self.losses.iter().chain(&self.through_encoder) {
            let status = if e.passed() { "pass" } else { "FAIL" };
            writeln!(f, "{:<24} {:>7} {:>14.3e}  {status}", e.name, e.configurations, e.max_relative_error)?;
        }
        write!(f, "result {}", if self.passed() { "pass" } else { "FAIL" })
    }
}

/// Every loss over [`CONFIGURATIONS`] random configurations. Failures are
/// reported, not raised; an evaluation error counts as an infinite error.
pub fn gradcheck_suite(seed: u64) -> GradCheckReport {
    let run = |name: String, f: &dyn Fn(u64) -> Result<f64>| {
        let max = (0..CONFIGURATIONS as u64)
            .map(|c| f(c).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        GradCheckEntry {
            name,
            configurations: CONFIGURATIONS,
            max_relative_error: max,
        }
    };
    let losses = LossKind::ALL
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            run(kind.name().to_string(), &|c| {
                let mut rng = SeededRng::with_stream(seed, (k as u64) << 32 | c);
                loss_input_error(kind, &mut rng)
            })
        })
        .collect();
    let through_encoder = LossKind::ALL
        .iter()
        .enumerate()
        .filter(|(_, kind)| **kind != LossKind::BetweenClass)
        .map(|(k, &kind)| {
            run(format!("encoder+{}", kind.name()), &|c| {
                let mut rng = SeededRng::with_stream(seed, 1 << 48 | (k as u64) << 32 | c);
                encoder_chain_error(kind, &mut rng)
            })
        })
        .collect();
    GradCheckReport {
        seed,
        losses,
        through_encoder,
    }
}

/// One random configuration of everything a loss can read.
#[derive(Clone, Debug)]
pub struct LossFixture {
    pub batch: EmbeddingBatch,
    pub head: ClassifierHead,
    pub centers: CenterStore,
    pub am_softmax: AmSoftmaxParams,
    pub ge2e: Ge2eParams,
    pub hard_negatives: usize,
}

impl LossFixture {
    pub fn random(kind: LossKind, rng: &mut SeededRng) -> Result<Self> {
        loop {
            let d = 3 + rng.below(6);
            let n = 3 + rng.below(6);
            let labels = if kind == LossKind::Ge2e {
                let speakers = 2 + rng.below(3);
                let per = 2 + rng.below(2);
                (0..speakers).flat_map(|k| std::iter::repeat_n(k, per)).collect()
            } else {
                let m = 4 + rng.below(7);
                (0..m).map(|_| rng.below(n)).collect::<Vec<_>>()
            };
            let m = labels.len();
            let fixture = LossFixture {
                batch: EmbeddingBatch::new(rng.normal_matrix(m, d, 1.0), labels)?,
                head: ClassifierHead::from_parts(
                    rng.normal_matrix(d, n, 1.0),
                    Vector(rng.normal_matrix(1, n, 1.0).into_vec()),
                    true,
                )?,
                centers: CenterStore::new(rng.normal_matrix(n, d, 1.0), 0.5, rng.uniform(1e-3, 1.0))?,
                am_softmax: AmSoftmaxParams::new(rng.uniform(1.0, 5.0), rng.uniform(0.0, 0.5))?,
                ge2e: Ge2eParams {
                    w_score: rng.uniform(0.5, 3.0),
                    b_score: rng.uniform(-1.0, 1.0),
                },
                hard_negatives: 1 + rng.below(n),
            };
            if fixture.selection_margin(kind)? > SELECTION_MARGIN {
                return Ok(fixture);
            }
        }
    }

    pub fn inputs(&self) -> LossInputs<'_> {
        LossInputs {
            batch: &self.batch,
            head: &self.head,
            centers: Some(&self.centers),
            am_softmax: self.am_softmax,
            ge2e: self.ge2e,
            hard_negatives: self.hard_negatives,
        }
    }

    /// Smallest cosine gap at a discrete selection boundary.
    fn selection_margin(&self, kind: LossKind) -> Result<f64> {
        let mut margin = f64::INFINITY;
        match kind {
            LossKind::HardNegative => {
                let cos = self.head.cosines(self.batch.embeddings())?;
                let n = self.head.n_speakers();
                let h = self.hard_negatives.min(n - 1);
                if h == n - 1 {
                    return Ok(margin);
                }
                for (i, &y) in self.batch.labels().iter().enumerate() {
                    let mut others: Vec<f64> = (0..n).filter(|&j| j != y).map(|j| cos[(i, j)]).collect();
                    others.sort_by(|a, b| b.total_cmp(a));
                    margin = margin.min(others[h - 1] - others[h]);
                }
            }
            LossKind::Ge2e => {
                let (speakers, centroids) = ge2e_centroids(&self.batch)?;
                for (i, &y) in self.batch.labels().iter().enumerate() {
                    let e = self.batch.embeddings().row(i);
                    let mut others = Vec::new();
                    for (k, &s) in speakers.iter().enumerate() {
                        if s != y {
                            others.push(cosine(e, centroids.row(k))?);
                        }
                    }
                    others.sort_by(|a, b| b.total_cmp(a));
                    if others.len() > 1 {
                        margin = margin.min(others[0] - others[1]);
                    }
                }
            }
            _ => {}
        }
        Ok(margin)
    }

    /// The parameters `kind` has gradients for, flattened.
    pub fn pack(&self, kind: LossKind) -> Vec<f64> {
        let mut x = Vec::new();
        if uses_embeddings(kind) {
            x.extend_from_slice(self.batch.embeddings().as_slice());
        }
        if uses_basis(kind) {
            x.extend_from_slice(self.head.basis().as_slice());
        }
        if kind == LossKind::Softmax {
            x.extend_from_slice(self.head.bias());
        }
        if kind == LossKind::Ge2e {
            x.extend([self.ge2e.w_score, self.ge2e.b_score]);
        }
        x
    }

    pub fn unpack(&self, kind: LossKind, x: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        let mut rest = x;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        if uses_embeddings(kind) {
            let (m, d) = self.batch.embeddings().shape();
            out.batch = EmbeddingBatch::new(Matrix::from_vec(m, d, take(m * d))?, self.batch.labels().to_vec())?;
        }
        if uses_basis(kind) {
            let (d, n) = self.head.basis().shape();
            *out.head.basis_mut() = Matrix::from_vec(d, n, take(d * n))?;
        }
        if kind == LossKind::Softmax {
            *out.head.bias_mut() = Vector(take(self.head.n_speakers()));
        }
        if kind == LossKind::Ge2e {
            let s = take(2);
            out.ge2e = Ge2eParams {
                w_score: s[0],
                b_score: s[1],
            };
        }
        Ok(out)
    }

    /// Analytic gradient in [`pack`](Self::pack) order.
    pub fn pack_gradient(kind: LossKind, out: &LossOutput) -> Vec<f64> {
        let mut g = Vec::new();
        if uses_embeddings(kind) {
            g.extend_from_slice(out.grad_embeddings.as_ref().map_or(&[][..], Matrix::as_slice));
        }
        if uses_basis(kind) {
            g.extend_from_slice(out.grad_basis.as_ref().map_or(&[][..], Matrix::as_slice));
        }
        if kind == LossKind::Softmax {
            g.extend_from_slice(out.grad_bias.as_deref().unwrap_or(&[]));
        }
        if kind == LossKind::Ge2e {
            let s = out.grad_scalars.unwrap_or_default();
            g.extend([s.w_score, s.b_score]);
        }
        g
    }
}

fn uses_embeddings(kind: LossKind) -> bool {
    kind != LossKind::BetweenClass
}

fn uses_basis(kind: LossKind) -> bool {
    !matches!(kind, LossKind::Center | LossKind::Ge2e)
}

/// Gradient error of `kind` with respect to its direct inputs.
pub fn loss_input_error(kind: LossKind, rng: &mut SeededRng) -> Result<f64> {
    let fixture = LossFixture::random(kind, rng)?;
    check_gradient(&fixture.pack(kind), |x| {
        let f = fixture.unpack(kind, x)?;
        let out = f.inputs().evaluate(kind)?;
        Ok((out.value, LossFixture::pack_gradient(kind, &out)))
    })
}

/// Gradient error of `kind` with respect to the weights and biases of a
/// small encoder that produces the embeddings.
pub fn encoder_chain_error(kind: LossKind, rng: &mut SeededRng) -> Result<f64> {
    let fixture = LossFixture::random(kind, rng)?;
    let d = fixture.batch.dim();
    let m = fixture.batch.len();
    let input_dim = 4;
    let encoder = MlpEncoder::new(&[input_dim, 6, d], 0.1, false, rng)?;
    let features = rng.normal_matrix(m, input_dim, 1.0);
    let sizes: Vec<(usize, usize)> = encoder.weights().iter().map(Matrix::shape).collect();
    let mut x = Vec::new();
    for (w, b) in encoder.weights().iter().zip(encoder.biases()) {
        x.extend_from_slice(w.as_slice());
        x.extend_from_slice(b);
    }
    let rebuild = |x: &[f64]| -> Result<MlpEncoder> {
        let mut enc = encoder.clone();
        let mut offset = 0;
        for (l, &(r, c)) in sizes.iter().enumerate() {
            enc.weights_mut()[l].as_mut_slice().copy_from_slice(&x[offset..offset + r * c]);
            offset += r * c;
            enc.biases_mut()[l].copy_from_slice(&x[offset..offset + c]);
            offset += c;
        }
        Ok(enc)
    };
    // Keep the discrete selections made on the encoder's own embeddings away
    // from ties too; otherwise redraw through the caller's rng.
    let (emb, _) = encoder.forward(&features)?;
    let probe = LossFixture {
        batch: EmbeddingBatch::new(emb, fixture.batch.labels().to_vec())?,
        ..fixture.clone()
    };
    if probe.selection_margin(kind)? <= SELECTION_MARGIN {
        return encoder_chain_error(kind, rng);
    }
    check_gradient(&x, |x| {
        let enc = rebuild(x)?;
        let (emb, trace) = enc.forward(&features)?;
        let f = LossFixture {
            batch: EmbeddingBatch::new(emb, fixture.batch.labels().to_vec())?,
            ..fixture.clone()
        };
        let out = f.inputs().evaluate(kind)?;
        let grad_emb = out
            .grad_embeddings
            .unwrap_or_else(|| Matrix::zeros(f.batch.len(), f.batch.dim()));
        let grads = enc.backward(&trace, &grad_emb)?;
        let mut g = Vec::new();
        for (w, b) in grads.weights.iter().zip(&grads.biases) {
            g.extend_from_slice(w.as_slice());
            g.extend_from_slice(b);
        }
        Ok((out.value, g))
    })
}
