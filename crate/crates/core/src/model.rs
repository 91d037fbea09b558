//! The embedding extractor and the classifier head whose weight columns are
//! the speaker bases.

mod checkpoint;

pub use checkpoint::Checkpoint;

use crate::error::{Error, Result};
use crate::numeric::{axpy, cosine_parts, dot, Matrix, SeededRng, Vector, NORM_EPS};

/// Glorot/Xavier uniform limit `√(6 / (fan_in + fan_out))`.
fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fully connected leaky-ReLU network mapping features to embeddings.
///
/// Weights are stored `[fan_in × fan_out]`, so a layer computes `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpEncoder {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vector>,
    leaky_slope: f64,
    activate_output: bool,
}

/// Values kept from the forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Input to each layer; `inputs[0]` is the feature matrix.
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.pre_activations.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    /// Gradient with respect to the input features.
    pub input: Matrix,
}

impl MlpEncoder {
    /// Glorot-uniform weights and zero biases.
    ///
    /// With `activate_output == false` the last layer is linear, which makes
    /// it the fully connected code layer whose output is the embedding.
    pub fn new(
        layer_dims: &[usize],
        leaky_slope: f64,
        activate_output: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::shape(
                "MlpEncoder::new",
                "at least two non-zero layer dims",
                format!("{layer_dims:?}"),
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let limit = glorot_limit(pair[0], pair[1]);
            weights.push(rng.uniform_matrix(pair[0], pair[1], -limit, limit));
            biases.push(Vector::zeros(pair[1]));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            leaky_slope,
            activate_output,
        })
    }

    pub fn from_parts(
        weights: Vec<Matrix>,
        biases: Vec<Vector>,
        leaky_slope: f64,
        activate_output: bool,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::shape(
                "MlpEncoder::from_parts",
                "one bias per weight matrix, at least one layer",
                format!("{} weights, {} biases", weights.len(), biases.len()),
            ));
        }
        let mut layer_dims = vec![weights[0].rows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() != *layer_dims.last().unwrap() || b.dim() != w.cols() {
                return Err(Error::shape(
                    "MlpEncoder::from_parts",
                    format!("layer {l} input {}", layer_dims.last().unwrap()),
                    format!("weight {:?}, bias {}", w.shape(), b.dim()),
                ));
            }
            layer_dims.push(w.cols());
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            leaky_slope,
            activate_output,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn activate_output(&self) -> bool {
        self.activate_output
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vector] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vector] {
        &mut self.biases
    }

    /// Weights and biases, mutably at the same time.
    pub fn params_mut(&mut self) -> (&mut [Matrix], &mut [Vector]) {
        (&mut self.weights, &mut self.biases)
    }

    fn activated(&self, layer: usize) -> bool {
        self.activate_output || layer + 1 < self.weights.len()
    }

    pub fn forward(&self, features: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        if features.cols() != self.input_dim() {
            return Err(Error::shape(
                "encoder_forward",
                format!("{} feature columns", self.input_dim()),
                features.cols(),
            ));
        }
        let mut inputs = Vec::with_capacity(self.depth());
        let mut pre_activations = Vec::with_capacity(self.depth());
        let mut current = features.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = current.matmul(w)?;
            for i in 0..z.rows() {
                axpy(1.0, b, z.row_mut(i));
            }
            let mut a = z.clone();
            if self.activated(l) {
                let slope = self.leaky_slope;
                a.as_mut_slice()
                    .iter_mut()
                    .for_each(|x| *x = if *x > 0.0 { *x } else { slope * *x });
            }
            inputs.push(current);
            pre_activations.push(z);
            current = a;
        }
        Ok((
            current,
            ForwardTrace {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Embeddings only.
    pub fn embed(&self, features: &Matrix) -> Result<Matrix> {
        Ok(self.forward(features)?.0)
    }

    pub fn backward(&self, trace: &ForwardTrace, grad_output: &Matrix) -> Result<EncoderGradients> {
        if trace.depth() != self.depth() {
            return Err(Error::shape("encoder_backward", self.depth(), trace.depth()));
        }
        let last = &trace.pre_activations[self.depth() - 1];
        if grad_output.shape() != last.shape() {
            return Err(Error::shape(
                "encoder_backward",
                format!("{:?}", last.shape()),
                format!("{:?}", grad_output.shape()),
            ));
        }
        let mut weight_grads = vec![Matrix::zeros(0, 0); self.depth()];
        let mut bias_grads = vec![Vector::zeros(0); self.depth()];
        let mut upstream = grad_output.clone();
        for l in (0..self.depth()).rev() {
            if self.activated(l) {
                let z = trace.pre_activations[l].as_slice();
                let slope = self.leaky_slope;
                for (g, &zv) in upstream.as_mut_slice().iter_mut().zip(z) {
                    if zv <= 0.0 {
                        *g *= slope;
                    }
                }
            }
            weight_grads[l] = trace.inputs[l].t_matmul(&upstream)?;
            let mut db = Vector::zeros(upstream.cols());
            for row in upstream.row_iter() {
                axpy(1.0, row, &mut db);
            }
            bias_grads[l] = db;
            upstream = upstream.matmul_t(&self.weights[l])?;
        }
        Ok(EncoderGradients {
            weights: weight_grads,
            biases: bias_grads,
            input: upstream,
        })
    }
}

/// Output layer whose column `j` is the basis vector of speaker `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    /// `[embedding_dim × n_speakers]`.
    basis: Matrix,
    bias: Vector,
    use_bias: bool,
}

impl ClassifierHead {
    pub fn new(
        embedding_dim: usize,
        n_speakers: usize,
        use_bias: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let limit = glorot_limit(embedding_dim, n_speakers);
        let basis = rng.uniform_matrix(embedding_dim, n_speakers, -limit, limit);
        Self::from_parts(basis, Vector::zeros(n_speakers), use_bias)
    }

    pub fn from_parts(basis: Matrix, bias: Vector, use_bias: bool) -> Result<Self> {
        if basis.cols() < 2 {
            return Err(Error::shape("ClassifierHead", "at least 2 speakers", basis.cols()));
        }
        if bias.dim() != basis.cols() {
            return Err(Error::shape("ClassifierHead bias", basis.cols(), bias.dim()));
        }
        Ok(Self {
            basis,
            bias,
            use_bias,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn n_speakers(&self) -> usize {
        self.basis.cols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn basis_mut(&mut self) -> &mut Matrix {
        &mut self.basis
    }

    pub fn bias(&self) -> &Vector {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Vector {
        &mut self.bias
    }

    pub fn params_mut(&mut self) -> (&mut Matrix, &mut Vector) {
        (&mut self.basis, &mut self.bias)
    }

    pub fn use_bias(&self) -> bool {
        self.use_bias
    }

    pub fn set_use_bias(&mut self, use_bias: bool) {
        self.use_bias = use_bias;
    }

    /// Basis vectors as rows, `[n_speakers × embedding_dim]`.
    pub fn bases(&self) -> Matrix {
        self.basis.transpose()
    }

    fn check_dim(&self, op: &'static str, emb: &Matrix) -> Result<()> {
        if emb.cols() != self.embedding_dim() {
            return Err(Error::shape(op, self.embedding_dim(), emb.cols()));
        }
        Ok(())
    }

    /// `logits[i][j] = W_j·e_i + b_j`.
    pub fn logits(&self, emb: &Matrix) -> Result<Matrix> {
        self.check_dim("head_logits", emb)?;
        let mut logits = emb.matmul(&self.basis)?;
        if self.use_bias {
            for i in 0..logits.rows() {
                axpy(1.0, &self.bias, logits.row_mut(i));
            }
        }
        Ok(logits)
    }

    /// `cosines[i][j] = cos(W_j, e_i)`.
    pub fn cosines(&self, emb: &Matrix) -> Result<Matrix> {
        self.check_dim("head_cosines", emb)?;
        let bases = self.bases();
        let mut out = Matrix::zeros(emb.rows(), self.n_speakers());
        for i in 0..emb.rows() {
            for j in 0..self.n_speakers() {
                out[(i, j)] = cosine_parts(bases.row(j), emb.row(i))
                    .map_err(|_| degenerate_pair(bases.row(j), j, i))?
                    .value;
            }
        }
        Ok(out)
    }
}

fn degenerate_pair(basis: &[f64], j: usize, i: usize) -> Error {
    if dot(basis, basis).sqrt() <= NORM_EPS {
        Error::degenerate(format!("speaker basis {j}"))
    } else {
        Error::degenerate(format!("embedding {i}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_difference_gradient, relative_error};

    fn one_layer(w: Vec<Vec<f64>>, b: Vec<f64>, slope: f64, activate: bool) -> MlpEncoder {
        MlpEncoder::from_parts(
            vec![Matrix::from_rows(&w).unwrap()],
            vec![Vector(b)],
            slope,
            activate,
        )
        .unwrap()
    }

    #[test]
    fn identity_network_passes_features_through() {
        let enc = one_layer(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], 0.01, true);
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(enc.embed(&x).unwrap(), x);
    }

    #[test]
    fn leaky_relu_scales_negative_input() {
        let enc = one_layer(vec![vec![1.0]], vec![0.0], 0.01, true);
        let out = enc.embed(&Matrix::from_rows(&[[-1.0]]).unwrap()).unwrap();
        assert_eq!(out.as_slice(), &[-0.01]);
    }

    #[test]
    fn linear_code_layer_keeps_sign() {
        let enc = one_layer(vec![vec![1.0]], vec![0.0], 0.01, false);
        let out = enc.embed(&Matrix::from_rows(&[[-1.0]]).unwrap()).unwrap();
        assert_eq!(out.as_slice(), &[-1.0]);
    }

    #[test]
    fn random_network_has_contracted_shape() {
        let mut rng = SeededRng::new(9);
        let enc = MlpEncoder::new(&[32, 64, 64], 0.01, false, &mut rng).unwrap();
        let x = rng.normal_matrix(7, 32, 1.0);
        let out = enc.embed(&x).unwrap();
        assert_eq!(out.shape(), (7, 64));
        assert!(out.is_finite());
        assert!(enc.embed(&rng.normal_matrix(2, 31, 1.0)).is_err());
    }

    #[test]
    fn batch_forward_equals_row_by_row() {
        let mut rng = SeededRng::new(4);
        let enc = MlpEncoder::new(&[6, 9, 5], 0.01, true, &mut rng).unwrap();
        let x = rng.normal_matrix(11, 6, 1.0);
        let batch = enc.embed(&x).unwrap();
        for i in 0..x.rows() {
            let single = enc.embed(&x.select_rows(&[i])).unwrap();
            assert_eq!(single.row(0), batch.row(i));
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = SeededRng::new(5);
        let enc = MlpEncoder::new(&[3, 4, 2], 0.01, false, &mut rng).unwrap();
        let x = rng.normal_matrix(5, 3, 1.0);
        let (out, trace) = enc.forward(&x).unwrap();
        let g = enc.backward(&trace, &Matrix::zeros(out.rows(), out.cols())).unwrap();
        assert!(g.weights.iter().all(|w| w.as_slice().iter().all(|v| *v == 0.0)));
        assert!(g.biases.iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn linear_layer_weight_gradient_is_input_sums() {
        // loss = Σ outputs, so ∂loss/∂W[k][j] = Σ_i x[i][k] for every j.
        let enc = one_layer(vec![vec![0.5, -1.0], vec![2.0, 0.3]], vec![0.1, 0.2], 0.01, false);
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, -4.0], [0.5, 0.5]]).unwrap();
        let (out, trace) = enc.forward(&x).unwrap();
        let ones = Matrix::from_fn(out.rows(), out.cols(), |_, _| 1.0);
        let g = enc.backward(&trace, &ones).unwrap();
        let expected = Matrix::from_rows(&[[4.5, 4.5], [-1.5, -1.5]]).unwrap();
        assert_eq!(g.weights[0], expected);
        assert_eq!(g.biases[0].as_ref(), &[3.0, 3.0]);
    }

    #[test]
    fn backward_rejects_wrong_gradient_shape() {
        let mut rng = SeededRng::new(5);
        let enc = MlpEncoder::new(&[3, 4, 2], 0.01, false, &mut rng).unwrap();
        let (_, trace) = enc.forward(&rng.normal_matrix(5, 3, 1.0)).unwrap();
        assert!(matches!(
            enc.backward(&trace, &Matrix::zeros(5, 3)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn two_layer_gradients_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = SeededRng::new(100 + seed);
            let enc = MlpEncoder::new(&[4, 6, 3], 0.01, seed % 2 == 0, &mut rng).unwrap();
            let x = rng.normal_matrix(5, 4, 1.0);
            let probe = rng.normal_matrix(5, 3, 1.0);
            let scalarize = |e: &MlpEncoder| -> f64 {
                let out = e.embed(&x).unwrap();
                dot(out.as_slice(), probe.as_slice())
            };
            let (_, trace) = enc.forward(&x).unwrap();
            let grads = enc.backward(&trace, &probe).unwrap();
            for l in 0..enc.depth() {
                let fd = finite_difference_gradient(
                    |w| {
                        let mut e = enc.clone();
                        e.weights_mut()[l].as_mut_slice().copy_from_slice(w);
                        scalarize(&e)
                    },
                    enc.weights()[l].as_slice(),
                    1e-6,
                )
                .unwrap();
                assert!(relative_error(grads.weights[l].as_slice(), &fd) <= 1e-6);
                let fd = finite_difference_gradient(
                    |b| {
                        let mut e = enc.clone();
                        e.biases_mut()[l].copy_from_slice(b);
                        scalarize(&e)
                    },
                    &enc.biases()[l],
                    1e-6,
                )
                .unwrap();
                assert!(relative_error(&grads.biases[l], &fd) <= 1e-6);
            }
        }
    }

    fn head(cols: &[[f64; 2]], bias: &[f64], use_bias: bool) -> ClassifierHead {
        let rows = Matrix::from_rows(cols).unwrap();
        ClassifierHead::from_parts(rows.transpose(), Vector(bias.to_vec()), use_bias).unwrap()
    }

    #[test]
    fn logits_examples() {
        let h = head(&[[1.0, 0.0], [0.0, 1.0]], &[0.0, 0.0], true);
        let e = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert_eq!(h.logits(&e).unwrap().as_slice(), &[1.0, 0.0]);

        let h = head(&[[1.0, 0.0], [0.0, 2.0]], &[0.5, -0.5], true);
        let e = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        assert_eq!(h.logits(&e).unwrap().as_slice(), &[1.5, 1.5]);

        let h = head(&[[1.0, 0.0], [0.0, 2.0]], &[3.0, 4.0], true);
        let e = Matrix::zeros(1, 2);
        assert_eq!(h.logits(&e).unwrap().as_slice(), &[3.0, 4.0]);

        let h = head(&[[1.0, 0.0], [0.0, 2.0]], &[3.0, 4.0], false);
        assert_eq!(h.logits(&e).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(h.logits(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn cosine_examples() {
        let h = head(&[[1.0, 0.0], [0.0, 1.0]], &[0.0, 0.0], false);
        let c = h.cosines(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 0.0]);
        let c = h.cosines(&Matrix::from_rows(&[[1.0, 1.0]]).unwrap()).unwrap();
        for v in c.as_slice() {
            assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        }
        assert!(matches!(
            h.cosines(&Matrix::zeros(1, 2)),
            Err(Error::DegenerateVector { context }) if context.contains("embedding")
        ));
        let h = head(&[[0.0, 0.0], [0.0, 1.0]], &[0.0, 0.0], false);
        assert!(matches!(
            h.cosines(&Matrix::from_rows(&[[1.0, 1.0]]).unwrap()),
            Err(Error::DegenerateVector { context }) if context.contains("basis")
        ));
    }

    #[test]
    fn cosines_invariant_under_positive_rescaling() {
        let mut rng = SeededRng::new(12);
        let h = ClassifierHead::new(5, 4, false, &mut rng).unwrap();
        let e = rng.normal_matrix(3, 5, 1.0);
        let base = h.cosines(&e).unwrap();
        let mut scaled_head = h.clone();
        for j in 0..4 {
            let col: Vec<f64> = h.basis().column(j).iter().map(|v| v * (j as f64 + 0.3)).collect();
            scaled_head.basis_mut().set_column(j, &col);
        }
        let mut scaled_e = e.clone();
        for i in 0..3 {
            scaled_e.row_mut(i).iter_mut().for_each(|v| *v *= 7.5 * (i as f64 + 1.0));
        }
        let after = scaled_head.cosines(&scaled_e).unwrap();
        assert!(relative_error(base.as_slice(), after.as_slice()) < 1e-12);
    }
}
