use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    am_softmax_loss, between_class_loss, center_loss, ge2e_loss, hard_negative_loss, softmax_loss,
    AmSoftmaxParams, CenterStore, EmbeddingBatch, Ge2eParams, LossOutput, ScalarGrads,
};
use crate::error::{Error, Result};
use crate::model::ClassifierHead;
use crate::numeric::{axpy, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Softmax,
    Center,
    AmSoftmax,
    Ge2e,
    BetweenClass,
    HardNegative,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Softmax,
        LossKind::Center,
        LossKind::AmSoftmax,
        LossKind::Ge2e,
        LossKind::BetweenClass,
        LossKind::HardNegative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Softmax => "softmax",
            LossKind::Center => "center",
            LossKind::AmSoftmax => "am_softmax",
            LossKind::Ge2e => "ge2e",
            LossKind::BetweenClass => "between_class",
            LossKind::HardNegative => "hard_negative",
        }
    }

    /// Whether the loss is built on cosine similarity to the bases.
    pub fn is_cosine_based(self) -> bool {
        matches!(self, LossKind::AmSoftmax | LossKind::BetweenClass | LossKind::HardNegative)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("loss", format!("unknown loss `{s}`")))
    }
}

/// Weighted sum of losses, e.g. `softmax + center + between_class`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossComposite {
    terms: Vec<(LossKind, f64)>,
}

impl LossComposite {
    pub fn new(terms: Vec<(LossKind, f64)>) -> Result<Self> {
        if let Some((kind, w)) = terms.iter().find(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::config(
                format!("loss.weights.{kind}"),
                format!("weight must be finite and >= 0, got {w}"),
            ));
        }
        if !terms.iter().any(|(_, w)| *w > 0.0) {
            return Err(Error::config("loss.weights", "at least one weight must be positive"));
        }
        Ok(Self { terms })
    }

    /// Every listed loss with weight 1.
    pub fn unit(kinds: &[LossKind]) -> Result<Self> {
        Self::new(kinds.iter().map(|&k| (k, 1.0)).collect())
    }

    pub fn terms(&self) -> &[(LossKind, f64)] {
        &self.terms
    }

    /// Losses with a positive weight.
    pub fn active(&self) -> impl Iterator<Item = LossKind> + '_ {
        self.terms.iter().filter(|(_, w)| *w > 0.0).map(|(k, _)| *k)
    }

    pub fn contains(&self, kind: LossKind) -> bool {
        self.active().any(|k| k == kind)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.terms.iter().map(|&(k, w)| (k, w * factor)).collect())
    }
}

/// Everything any loss might read.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a> {
    pub batch: &'a EmbeddingBatch,
    pub head: &'a ClassifierHead,
    pub centers: Option<&'a CenterStore>,
    pub am_softmax: AmSoftmaxParams,
    pub ge2e: Ge2eParams,
    pub hard_negatives: usize,
}

impl LossInputs<'_> {
    pub fn evaluate(&self, kind: LossKind) -> Result<LossOutput> {
        match kind {
            LossKind::Softmax => softmax_loss(self.batch, self.head),
            LossKind::Center => {
                let centers = self
                    .centers
                    .ok_or_else(|| Error::config("loss", "center loss needs a center store"))?;
                center_loss(self.batch, centers)
            }
            LossKind::AmSoftmax => am_softmax_loss(self.batch, self.head, &self.am_softmax),
            LossKind::Ge2e => ge2e_loss(self.batch, &self.ge2e),
            LossKind::BetweenClass => between_class_loss(self.head),
            LossKind::HardNegative => hard_negative_loss(self.batch, self.head, self.hard_negatives),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ComposedLoss {
    pub total: LossOutput,
    /// Unweighted value of every active component, in composite order.
    pub components: Vec<(LossKind, f64)>,
}

fn add_matrix(acc: &mut Option<Matrix>, weight: f64, grad: Option<&Matrix>) -> Result<()> {
    if let Some(g) = grad {
        match acc {
            Some(a) => a.add_scaled(weight, g)?,
            None => {
                let mut scaled = g.clone();
                scaled.scale(weight);
                *acc = Some(scaled);
            }
        }
    }
    Ok(())
}

/// Weighted sum of the composite's losses and their gradients. Zero-weight
/// terms are not evaluated.
pub fn compose(losses: &LossComposite, inputs: &LossInputs<'_>) -> Result<ComposedLoss> {
    let mut total = LossOutput::default();
    let mut components = Vec::new();
    for &(kind, weight) in losses.terms() {
        if weight == 0.0 {
            continue;
        }
        let out = inputs.evaluate(kind)?;
        components.push((kind, out.value));
        total.value += weight * out.value;
        add_matrix(&mut total.grad_embeddings, weight, out.grad_embeddings.as_ref())?;
        add_matrix(&mut total.grad_basis, weight, out.grad_basis.as_ref())?;
        if let Some(b) = &out.grad_bias {
            let acc = total.grad_bias.get_or_insert_with(|| vec![0.0; b.len()].into());
            axpy(weight, b, acc);
        }
        if let Some(s) = out.grad_scalars {
            let acc = total.grad_scalars.get_or_insert_with(ScalarGrads::default);
            acc.w_score += weight * s.w_score;
            acc.b_score += weight * s.b_score;
        }
    }
    Ok(ComposedLoss { total, components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;

    fn fixture() -> (EmbeddingBatch, ClassifierHead, CenterStore) {
        let mut rng = SeededRng::new(17);
        let head = ClassifierHead::new(4, 5, true, &mut rng).unwrap();
        let emb = EmbeddingBatch::new(rng.normal_matrix(6, 4, 1.0), vec![0, 0, 1, 1, 4, 4]).unwrap();
        let centers = CenterStore::new(rng.normal_matrix(5, 4, 0.5), 0.5, 0.01).unwrap();
        (emb, head, centers)
    }

    fn inputs<'a>(emb: &'a EmbeddingBatch, head: &'a ClassifierHead, c: &'a CenterStore) -> LossInputs<'a> {
        LossInputs {
            batch: emb,
            head,
            centers: Some(c),
            am_softmax: AmSoftmaxParams::default(),
            ge2e: Ge2eParams::default(),
            hard_negatives: 2,
        }
    }

    #[test]
    fn zero_weight_term_is_ignored() {
        let (emb, head, c) = fixture();
        let inp = inputs(&emb, &head, &c);
        let comp = LossComposite::new(vec![(LossKind::Softmax, 1.0), (LossKind::Center, 0.0)]).unwrap();
        let composed = compose(&comp, &inp).unwrap();
        assert_eq!(composed.total, softmax_loss(&emb, &head).unwrap());
        assert_eq!(composed.components.len(), 1);
    }

    #[test]
    fn additive_over_components() {
        let (emb, head, c) = fixture();
        let inp = inputs(&emb, &head, &c);
        let comp = LossComposite::unit(&[LossKind::Softmax, LossKind::BetweenClass]).unwrap();
        let composed = compose(&comp, &inp).unwrap();
        let s = softmax_loss(&emb, &head).unwrap();
        let bc = between_class_loss(&head).unwrap();
        assert!((composed.total.value - (s.value + bc.value)).abs() < 1e-12);
        let mut basis = s.grad_basis.unwrap();
        basis.add_scaled(1.0, bc.grad_basis.as_ref().unwrap()).unwrap();
        assert_eq!(composed.total.grad_basis.unwrap(), basis);
        assert_eq!(composed.total.grad_embeddings, s.grad_embeddings);
    }

    #[test]
    fn doubling_weights_doubles_everything() {
        let (emb, head, c) = fixture();
        let inp = inputs(&emb, &head, &c);
        let comp = LossComposite::unit(&[
            LossKind::Softmax,
            LossKind::Center,
            LossKind::Ge2e,
            LossKind::HardNegative,
            LossKind::BetweenClass,
        ])
        .unwrap();
        let one = compose(&comp, &inp).unwrap().total;
        let two = compose(&comp.scaled(2.0).unwrap(), &inp).unwrap().total;
        assert_eq!(two.value, 2.0 * one.value);
        let pairs = [
            (one.grad_embeddings.unwrap(), two.grad_embeddings.unwrap()),
            (one.grad_basis.unwrap(), two.grad_basis.unwrap()),
        ];
        for (a, b) in pairs {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
        let (s1, s2) = (one.grad_scalars.unwrap(), two.grad_scalars.unwrap());
        assert_eq!(2.0 * s1.w_score, s2.w_score);
        assert_eq!(2.0 * s1.b_score, s2.b_score);
    }

    #[test]
    fn composite_validation() {
        assert!(LossComposite::new(vec![(LossKind::Softmax, 0.0)]).is_err());
        assert!(LossComposite::new(vec![(LossKind::Softmax, -1.0), (LossKind::Center, 1.0)]).is_err());
        assert!(LossComposite::new(vec![]).is_err());
        assert_eq!("hard_negative".parse::<LossKind>().unwrap(), LossKind::HardNegative);
        assert!("triplet".parse::<LossKind>().is_err());
    }

    #[test]
    fn center_loss_without_store_fails() {
        let (emb, head, c) = fixture();
        let inp = LossInputs {
            centers: None,
            ..inputs(&emb, &head, &c)
        };
        assert!(compose(&LossComposite::unit(&[LossKind::Center]).unwrap(), &inp).is_err());
    }
}
