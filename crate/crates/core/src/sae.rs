//! Sparse-autoencoder inference: `h = σ(Wx + b)` and `x̂ = W′h`, plus
//! per-feature top-activating-token statistics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Hidden-unit nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `z` if `z > threshold[f]`, else 0. A zero threshold is plain ReLU.
    JumpRelu { threshold: Vec<f64> },
}

impl Activation {
    #[inline]
    fn apply(&self, feature: usize, z: f64) -> f64 {
        let t = match self {
            Activation::Relu => 0.0,
            Activation::JumpRelu { threshold } => threshold[feature],
        };
        if z > t {
            z
        } else {
            0.0
        }
    }
}

/// Weights of one SAE: encoder `h×n`, bias `h`, decoder `n×h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeWeights {
    encoder: Matrix,
    bias: Vec<f64>,
    decoder: Matrix,
    activation: Activation,
    decoder_bias: Option<Vec<f64>>,
}

impl SaeWeights {
    pub fn new(encoder: Matrix, bias: Vec<f64>, decoder: Matrix, activation: Activation) -> Result<Self> {
        let h = encoder.rows();
        let n = encoder.cols();
        if bias.len() != h {
            return Err(Error::DimensionMismatch {
                context: "SAE bias length",
                expected: h,
                actual: bias.len(),
            });
        }
        if decoder.cols() != h {
            return Err(Error::DimensionMismatch {
                context: "SAE decoder columns",
                expected: h,
                actual: decoder.cols(),
            });
        }
        if decoder.rows() != n {
            return Err(Error::DimensionMismatch {
                context: "SAE decoder rows",
                expected: n,
                actual: decoder.rows(),
            });
        }
        if let Activation::JumpRelu { threshold } = &activation {
            if threshold.len() != h {
                return Err(Error::DimensionMismatch {
                    context: "SAE threshold length",
                    expected: h,
                    actual: threshold.len(),
                });
            }
            if !threshold.iter().all(|t| t.is_finite()) {
                return Err(Error::NonFinite("SAE threshold"));
            }
        }
        if !encoder.all_finite() {
            return Err(Error::NonFinite("SAE encoder"));
        }
        if !decoder.all_finite() {
            return Err(Error::NonFinite("SAE decoder"));
        }
        if !bias.iter().all(|b| b.is_finite()) {
            return Err(Error::NonFinite("SAE bias"));
        }
        Ok(Self {
            encoder,
            bias,
            decoder,
            activation,
            decoder_bias: None,
        })
    }

    /// Adds a decoder-side bias, `x̂ = W′h + b_dec`, as shipped by some
    /// pretrained SAE releases.
    pub fn with_decoder_bias(mut self, decoder_bias: Vec<f64>) -> Result<Self> {
        if decoder_bias.len() != self.model_dim() {
            return Err(Error::DimensionMismatch {
                context: "SAE decoder bias length",
                expected: self.model_dim(),
                actual: decoder_bias.len(),
            });
        }
        if !decoder_bias.iter().all(|b| b.is_finite()) {
            return Err(Error::NonFinite("SAE decoder bias"));
        }
        self.decoder_bias = Some(decoder_bias);
        Ok(self)
    }

    /// Number of features `h`.
    pub fn n_features(&self) -> usize {
        self.encoder.rows()
    }

    /// Model dimension `n`.
    pub fn model_dim(&self) -> usize {
        self.encoder.cols()
    }

    pub fn encoder(&self) -> &Matrix {
        &self.encoder
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn decoder(&self) -> &Matrix {
        &self.decoder
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn decoder_bias(&self) -> Option<&[f64]> {
        self.decoder_bias.as_deref()
    }

    /// Decoder direction of every feature as a row: `h×n`.
    pub fn decoder_rows(&self) -> Matrix {
        self.decoder.transpose()
    }
}

/// Feature activations for each residual row. Row blocks may be encoded
/// independently and stacked.
pub fn encode(residuals: &Matrix, weights: &SaeWeights) -> Result<Matrix> {
    let n = weights.model_dim();
    if residuals.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "residual width vs SAE model dim",
            expected: n,
            actual: residuals.cols(),
        });
    }
    let h = weights.n_features();
    let mut out = Matrix::zeros(residuals.rows(), h);
    for i in 0..residuals.rows() {
        let x = residuals.row(i);
        let out_row = out.row_mut(i);
        for (f, o) in out_row.iter_mut().enumerate() {
            let w = weights.encoder.row(f);
            let z = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + weights.bias[f];
            *o = weights.activation.apply(f, z);
        }
    }
    Ok(out)
}

/// Reconstruction `x̂ = W′h (+ b_dec)` for each feature row.
pub fn decode(features: &Matrix, weights: &SaeWeights) -> Result<Matrix> {
    let h = weights.n_features();
    if features.cols() != h {
        return Err(Error::DimensionMismatch {
            context: "feature width vs SAE features",
            expected: h,
            actual: features.cols(),
        });
    }
    let n = weights.model_dim();
    // row i of x̂ = Σ_f h[i][f] · column f of W′
    let decoder_rows = weights.decoder_rows();
    let mut out = features.matmul(&decoder_rows)?;
    if let Some(bd) = &weights.decoder_bias {
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(bd) {
                *v += b;
            }
        }
    }
    debug_assert_eq!(out.cols(), n);
    Ok(out)
}

/// Per-row `‖x − x̂‖²`.
pub fn reconstruction_loss(residuals: &Matrix, weights: &SaeWeights) -> Result<Vec<f64>> {
    let h = encode(residuals, weights)?;
    let xhat = decode(&h, weights)?;
    Ok((0..residuals.rows())
        .map(|i| {
            residuals
                .row(i)
                .iter()
                .zip(xhat.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect())
}

/// One entry of a feature's top-activating list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopToken {
    pub token: String,
    pub activation: f64,
    pub row: usize,
}

/// Summary of one feature over a token corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub max: f64,
    /// Sorted by activation descending, ties by lower row.
    pub top: Vec<TopToken>,
    /// Fraction of tokens with activation strictly above zero.
    pub frequency: f64,
}

impl FeatureStats {
    /// Top tokens that actually fired (activation > 0).
    pub fn active_top_tokens(&self) -> impl Iterator<Item = &str> {
        self.top
            .iter()
            .filter(|t| t.activation > 0.0)
            .map(|t| t.token.as_str())
    }
}

#[derive(Debug, Clone)]
struct FeatureAcc {
    max: f64,
    positive: u64,
    // (activation, row), kept sorted by (activation desc, row asc)
    top: Vec<(f64, usize)>,
}

#[inline]
fn ranks_before(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl FeatureAcc {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            positive: 0,
            top: Vec::new(),
        }
    }

    fn push(&mut self, value: f64, row: usize, k: usize) {
        if value > self.max {
            self.max = value;
        }
        if value > 0.0 {
            self.positive += 1;
        }
        self.insert_top((value, row), k);
    }

    fn insert_top(&mut self, entry: (f64, usize), k: usize) {
        if self.top.len() == k {
            match self.top.last() {
                Some(&worst) if ranks_before(entry, worst) => {
                    self.top.pop();
                }
                _ => return,
            }
        }
        let pos = self.top.partition_point(|&e| ranks_before(e, entry));
        self.top.insert(pos, entry);
    }

    fn merge(&mut self, other: &FeatureAcc, k: usize) {
        if other.max > self.max {
            self.max = other.max;
        }
        self.positive += other.positive;
        for &entry in &other.top {
            self.insert_top(entry, k);
        }
    }
}

/// Streaming accumulator for [`FeatureStats`]. Blocks are fed with their
/// global row offset; partial accumulators over disjoint row ranges merge
/// associatively.
#[derive(Debug, Clone)]
pub struct FeatureStatsAccumulator {
    k: usize,
    n_rows: u64,
    features: Vec<FeatureAcc>,
}

impl FeatureStatsAccumulator {
    pub fn new(n_features: usize, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidParameter("top-k must be at least 1".into()));
        }
        Ok(Self {
            k,
            n_rows: 0,
            features: vec![FeatureAcc::new(); n_features],
        })
    }

    pub fn update(&mut self, row_offset: usize, block: &Matrix) -> Result<()> {
        if block.cols() != self.features.len() {
            return Err(Error::DimensionMismatch {
                context: "feature stats block width",
                expected: self.features.len(),
                actual: block.cols(),
            });
        }
        for i in 0..block.rows() {
            for (f, &v) in block.row(i).iter().enumerate() {
                self.features[f].push(v, row_offset + i, self.k);
            }
        }
        self.n_rows += block.rows() as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &FeatureStatsAccumulator) -> Result<()> {
        if other.features.len() != self.features.len() || other.k != self.k {
            return Err(Error::DimensionMismatch {
                context: "feature stats merge",
                expected: self.features.len(),
                actual: other.features.len(),
            });
        }
        for (a, b) in self.features.iter_mut().zip(&other.features) {
            a.merge(b, self.k);
        }
        self.n_rows += other.n_rows;
        Ok(())
    }

    pub fn n_rows(&self) -> u64 {
        self.n_rows
    }

    /// Resolves row indices to token strings.
    pub fn finish(self, tokens: &[String]) -> Result<Vec<FeatureStats>> {
        if tokens.len() as u64 != self.n_rows {
            return Err(Error::DimensionMismatch {
                context: "token table vs activation rows",
                expected: self.n_rows as usize,
                actual: tokens.len(),
            });
        }
        let n = self.n_rows;
        Ok(self
            .features
            .into_iter()
            .map(|acc| FeatureStats {
                max: if n == 0 { 0.0 } else { acc.max },
                frequency: if n == 0 {
                    0.0
                } else {
                    acc.positive as f64 / n as f64
                },
                top: acc
                    .top
                    .into_iter()
                    .map(|(activation, row)| TopToken {
                        token: tokens[row].clone(),
                        activation,
                        row,
                    })
                    .collect(),
            })
            .collect())
    }
}

/// Per-feature max, top-k tokens and firing frequency.
pub fn feature_stats(features: &Matrix, tokens: &[String], k: usize) -> Result<Vec<FeatureStats>> {
    if tokens.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            context: "token table vs activation rows",
            expected: features.rows(),
            actual: tokens.len(),
        });
    }
    let mut acc = FeatureStatsAccumulator::new(features.cols(), k)?;
    acc.update(0, features)?;
    acc.finish(tokens)
}
