//! Synthetic paired feature spaces with planted ground truth.
//!
//! `shared` sparse non-negative latent signals are written into randomly
//! chosen feature columns on both sides. Side B sees each latent through
//! `ReLU(latent + σ·noise)`; its decoder direction for a planted feature is
//! side A's direction plus `σ·noise`, optionally rotated by a random
//! orthogonal matrix in model space. All other features are independent
//! sparse signals with random decoder directions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::random_orthogonal;
use crate::math::sqrt;
use crate::matrix::Matrix;
use crate::rng;
use crate::sae::{Activation, SaeWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_tokens: usize,
    pub n_features_a: usize,
    pub n_features_b: usize,
    /// Planted shared features; at most `min(n_features_a, n_features_b)`.
    pub shared: usize,
    pub noise_sigma: f64,
    pub rotation: bool,
    pub seed: u64,
    /// Model (residual-stream) dimension of the synthetic SAE weights.
    pub d_model: usize,
    /// Probability that a feature fires on a given token.
    pub active_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tokens: 2000,
            n_features_a: 96,
            n_features_b: 96,
            shared: 64,
            noise_sigma: 0.0,
            rotation: false,
            seed: 0,
            d_model: 16,
            active_prob: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shared > self.n_features_a.min(self.n_features_b) {
            return Err(Error::InvalidParameter(format!(
                "shared ({}) exceeds the smaller dictionary ({})",
                self.shared,
                self.n_features_a.min(self.n_features_b)
            )));
        }
        if self.n_tokens == 0 || self.n_features_a == 0 || self.n_features_b == 0 || self.d_model == 0 {
            return Err(Error::InvalidParameter("synthetic sizes must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter("noise_sigma must be finite and non-negative".into()));
        }
        if !(self.active_prob > 0.0 && self.active_prob <= 1.0) {
            return Err(Error::InvalidParameter("active_prob must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    /// `n_tokens × n_features_a`.
    pub acts_a: Matrix,
    /// `n_tokens × n_features_b`.
    pub acts_b: Matrix,
    /// Planted `(feature in A, feature in B)` pairs, sorted by A index.
    pub truth: Vec<(usize, usize)>,
    pub weights_a: SaeWeights,
    pub weights_b: SaeWeights,
    /// One distinct word-like token per row.
    pub tokens: Vec<String>,
}

// Independent random streams per component.
const STREAM_LATENT: u64 = 0;
const STREAM_POS_A: u64 = 1;
const STREAM_POS_B: u64 = 2;
const STREAM_PRIVATE_A: u64 = 3;
const STREAM_PRIVATE_B: u64 = 4;
const STREAM_ACT_NOISE: u64 = 5;
const STREAM_DEC_A: u64 = 6;
const STREAM_DEC_B: u64 = 7;
const STREAM_DEC_NOISE: u64 = 8;
const STREAM_ROTATION: u64 = 9;

fn sparse_signal<R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let fires = rng.random::<f64>() < p;
            let v: f64 = Exp1.sample(rng);
            if fires {
                v
            } else {
                0.0
            }
        })
        .collect()
}

fn unit_gaussian<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = sqrt(v.iter().map(|x| x * x).sum());
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

// Synthetic SAE with tied encoder: encoder = decoderᵀ, zero bias, ReLU.
fn tied_sae(dec_rows: Matrix) -> Result<SaeWeights> {
    let h = dec_rows.rows();
    SaeWeights::new(dec_rows.clone(), alloc::vec![0.0; h], dec_rows.transpose(), Activation::Relu)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let n = cfg.n_tokens;
    let (ha, hb, d) = (cfg.n_features_a, cfg.n_features_b, cfg.d_model);
    let sigma = cfg.noise_sigma;
    let stream = |s: u64| rng::stream(cfg.seed, s);

    let pos_a = rng::permutation(ha, &mut stream(STREAM_POS_A));
    let pos_b = rng::permutation(hb, &mut stream(STREAM_POS_B));
    let mut truth: Vec<(usize, usize)> = (0..cfg.shared).map(|k| (pos_a[k], pos_b[k])).collect();

    let mut acts_a = Matrix::zeros(n, ha);
    let mut acts_b = Matrix::zeros(n, hb);
    let mut latent_rng = stream(STREAM_LATENT);
    let mut act_noise = stream(STREAM_ACT_NOISE);
    for &(fa, fb) in &truth {
        let latent = sparse_signal(n, cfg.active_prob, &mut latent_rng);
        for (t, &v) in latent.iter().enumerate() {
            acts_a.set(t, fa, v);
            let noisy = if sigma > 0.0 {
                let e: f64 = StandardNormal.sample(&mut act_noise);
                (v + sigma * e).max(0.0)
            } else {
                v
            };
            acts_b.set(t, fb, noisy);
        }
    }
    let fill_private = |acts: &mut Matrix, positions: &[usize], s: u64| {
        let mut r = stream(s);
        for &f in &positions[cfg.shared..] {
            for (t, v) in sparse_signal(n, cfg.active_prob, &mut r).into_iter().enumerate() {
                acts.set(t, f, v);
            }
        }
    };
    fill_private(&mut acts_a, &pos_a, STREAM_PRIVATE_A);
    fill_private(&mut acts_b, &pos_b, STREAM_PRIVATE_B);

    let mut dec_a_rng = stream(STREAM_DEC_A);
    let mut dec_a = Matrix::zeros(ha, d);
    for f in 0..ha {
        dec_a.row_mut(f).copy_from_slice(&unit_gaussian(d, &mut dec_a_rng));
    }
    let mut dec_b_rng = stream(STREAM_DEC_B);
    let mut dec_b = Matrix::zeros(hb, d);
    for f in 0..hb {
        dec_b.row_mut(f).copy_from_slice(&unit_gaussian(d, &mut dec_b_rng));
    }
    let rotation = cfg.rotation.then(|| random_orthogonal(d, &mut stream(STREAM_ROTATION)));
    let mut dec_noise = stream(STREAM_DEC_NOISE);
    for &(fa, fb) in &truth {
        let mut v: Vec<f64> = dec_a.row(fa).to_vec();
        if sigma > 0.0 {
            for x in v.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut dec_noise);
                *x += sigma * e;
            }
        }
        if let Some(q) = &rotation {
            v = (0..d)
                .map(|i| q.row(i).iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
        }
        dec_b.row_mut(fb).copy_from_slice(&v);
    }

    truth.sort_unstable();
    Ok(SynthData {
        acts_a,
        acts_b,
        truth,
        weights_a: tied_sae(dec_a)?,
        weights_b: tied_sae(dec_b)?,
        tokens: (0..n).map(|t| format!("tok{t}")).collect(),
    })
}
