//! Plain-text model checkpoints.
//!
//! ```text
//! speaker-bases checkpoint v1
//! # <resolved run config, one comment line per config line>
//! seed 1
//! step 2000
//! layer_dims 32 64 64
//! leaky_slope 1e-2
//! activate_output false
//! use_bias true
//! ge2e_w_score 1e1
//! ge2e_b_score -5e0
//! center_alpha 5e-1          (only with centers)
//! center_lambda 1e-3         (only with centers)
//! tensor encoder.weight.0 32 64
//! <one line per row, space separated>
//! tensor encoder.bias.0 1 64
//! ...
//! tensor head.basis 64 50
//! tensor head.bias 1 50
//! tensor centers 50 64       (only with centers)
//! ```
//!
//! Floats are written in shortest round-trip exponent form, so reading a
//! written checkpoint reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::{ClassifierHead, MlpEncoder};
use crate::error::{Error, Result};
use crate::losses::{CenterStore, Ge2eParams};
use crate::numeric::{Matrix, Vector};

const MAGIC: &str = "speaker-bases checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub step: usize,
    pub encoder: MlpEncoder,
    pub head: ClassifierHead,
    pub ge2e: Ge2eParams,
    pub centers: Option<CenterStore>,
    /// Resolved run configuration, stored as comment lines.
    pub config: Option<String>,
}

fn write_tensor(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "tensor {name} {} {}", m.rows(), m.cols());
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

fn vector_as_matrix(v: &Vector) -> Matrix {
    Matrix::from_vec(1, v.dim(), v.to_vec()).expect("1 x n")
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        if let Some(cfg) = &self.config {
            for line in cfg.lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        let dims: Vec<String> = self.encoder.layer_dims().iter().map(usize::to_string).collect();
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "step {}", self.step);
        let _ = writeln!(out, "layer_dims {}", dims.join(" "));
        let _ = writeln!(out, "leaky_slope {:e}", self.encoder.leaky_slope());
        let _ = writeln!(out, "activate_output {}", self.encoder.activate_output());
        let _ = writeln!(out, "use_bias {}", self.head.use_bias());
        let _ = writeln!(out, "ge2e_w_score {:e}", self.ge2e.w_score);
        let _ = writeln!(out, "ge2e_b_score {:e}", self.ge2e.b_score);
        if let Some(c) = &self.centers {
            let _ = writeln!(out, "center_alpha {:e}", c.alpha);
            let _ = writeln!(out, "center_lambda {:e}", c.lambda);
        }
        for (l, (w, b)) in self.encoder.weights().iter().zip(self.encoder.biases()).enumerate() {
            write_tensor(&mut out, &format!("encoder.weight.{l}"), w);
            write_tensor(&mut out, &format!("encoder.bias.{l}"), &vector_as_matrix(b));
        }
        write_tensor(&mut out, "head.basis", self.head.basis());
        write_tensor(&mut out, "head.bias", &vector_as_matrix(self.head.bias()));
        if let Some(c) = &self.centers {
            write_tensor(&mut out, "centers", &c.centers);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Parser::new(text).parse()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

struct Parser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
        }
    }

    fn err(line: usize, message: impl Into<String>) -> Error {
        Error::parse(format!("checkpoint line {}", line + 1), message)
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .ok_or_else(|| Error::parse("checkpoint", "unexpected end of file"))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((n, v)),
            _ => Err(Self::err(n, format!("expected `{key} ...`, found `{line}`"))),
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, v) = self.field(key)?;
        v.trim()
            .parse()
            .map_err(|_| Self::err(n, format!("invalid value for {key}: `{v}`")))
    }

    fn optional<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.lines.peek() {
            Some((_, line)) if line.split(' ').next() == Some(key) => self.parsed(key).map(Some),
            _ => Ok(None),
        }
    }

    fn tensor(&mut self, name: &str) -> Result<Matrix> {
        let (n, header) = self.field("tensor")?;
        let parts: Vec<&str> = header.split(' ').collect();
        let [found, rows, cols] = parts[..] else {
            return Err(Self::err(n, "tensor header needs name, rows, cols"));
        };
        if found != name {
            return Err(Self::err(n, format!("expected tensor {name}, found {found}")));
        }
        let rows: usize = rows.parse().map_err(|_| Self::err(n, "bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| Self::err(n, "bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = self.next_line()?;
            let before = data.len();
            for tok in line.split_ascii_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| Self::err(n, format!("bad number `{tok}`")))?,
                );
            }
            if data.len() - before != cols {
                return Err(Self::err(n, format!("expected {cols} values in {name}")));
            }
        }
        Matrix::from_vec(rows, cols, data)
    }

    fn parse(mut self) -> Result<Checkpoint> {
        let (n, magic) = self.next_line()?;
        if magic != MAGIC {
            return Err(Self::err(n, format!("not a checkpoint (expected `{MAGIC}`)")));
        }
        let mut config_lines = Vec::new();
        while let Some((_, line)) = self.lines.peek() {
            match line.strip_prefix('#') {
                Some(rest) => {
                    config_lines.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
                    self.lines.next();
                }
                None => break,
            }
        }
        let seed = self.parsed("seed")?;
        let step = self.parsed("step")?;
        let (n, dims) = self.field("layer_dims")?;
        let layer_dims = dims
            .split(' ')
            .map(str::parse)
            .collect::<Result<Vec<usize>, _>>()
            .map_err(|_| Self::err(n, "bad layer_dims"))?;
        let leaky_slope = self.parsed("leaky_slope")?;
        let activate_output = self.parsed("activate_output")?;
        let use_bias = self.parsed("use_bias")?;
        let ge2e = Ge2eParams {
            w_score: self.parsed("ge2e_w_score")?,
            b_score: self.parsed("ge2e_b_score")?,
        };
        let alpha: Option<f64> = self.optional("center_alpha")?;
        let lambda: Option<f64> = self.optional("center_lambda")?;

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len().saturating_sub(1) {
            weights.push(self.tensor(&format!("encoder.weight.{l}"))?);
            biases.push(Vector(self.tensor(&format!("encoder.bias.{l}"))?.into_vec()));
        }
        let encoder = MlpEncoder::from_parts(weights, biases, leaky_slope, activate_output)?;
        if encoder.layer_dims() != layer_dims {
            return Err(Error::parse("checkpoint", "layer_dims disagree with tensors"));
        }
        let basis = self.tensor("head.basis")?;
        let bias = Vector(self.tensor("head.bias")?.into_vec());
        let head = ClassifierHead::from_parts(basis, bias, use_bias)?;
        let centers = match (alpha, lambda) {
            (Some(alpha), Some(lambda)) => Some(CenterStore::new(self.tensor("centers")?, alpha, lambda)?),
            (None, None) => None,
            _ => return Err(Error::parse("checkpoint", "center_alpha and center_lambda must appear together")),
        };
        Ok(Checkpoint {
            seed,
            step,
            encoder,
            head,
            ge2e,
            centers,
            config: (!config_lines.is_empty()).then(|| {
                let mut s = config_lines.join("\n");
                s.push('\n');
                s
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;
    use proptest::prelude::*;

    fn sample(seed: u64, with_centers: bool) -> Checkpoint {
        let mut rng = SeededRng::new(seed);
        let encoder = MlpEncoder::new(&[3, 5, 4], 0.01, false, &mut rng).unwrap();
        let head = ClassifierHead::new(4, 3, true, &mut rng).unwrap();
        Checkpoint {
            seed,
            step: 17,
            encoder,
            head,
            ge2e: Ge2eParams {
                w_score: 9.75,
                b_score: -5.0000001,
            },
            centers: with_centers.then(|| CenterStore::new(rng.normal_matrix(3, 4, 1e-200), 0.5, 0.001).unwrap()),
            config: Some("[run]\nseed = 1\n".into()),
        }
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        for with_centers in [false, true] {
            let ck = sample(5, with_centers);
            let back = Checkpoint::from_text(&ck.to_text()).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_text(), ck.to_text());
        }
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(Checkpoint::from_text("hello\n").is_err());
        let text = sample(1, false).to_text().replace("tensor head.basis 4 3", "tensor head.basis 4 2");
        assert!(Checkpoint::from_text(&text).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample(2, true);
        ck.write(&path).unwrap();
        assert_eq!(Checkpoint::read(&path).unwrap(), ck);
    }

    proptest! {
        #[test]
        fn arbitrary_finite_parameters_round_trip(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 12)) {
            let mut ck = sample(3, false);
            ck.head.basis_mut().as_mut_slice().copy_from_slice(&values);
            let back = Checkpoint::from_text(&ck.to_text()).unwrap();
            let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.head.basis()), bits(ck.head.basis()));
        }
    }
}
