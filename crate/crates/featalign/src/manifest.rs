//! Dataset and SAE manifests, token tables, and their consistency checks.
//!
//! Paths inside a manifest are relative to the manifest's own directory
//! unless absolute.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use featalign_core::{Activation, SaeWeights};
use serde::{Deserialize, Serialize};

use crate::axt::{read_tensor, AxtReader};
use crate::error::{Error, IoContext, Result};

/// What the rows of a dataset's activation tensor hold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    /// SAE feature activations (`n_tokens × n_features`).
    #[default]
    Features,
    /// Residual-stream activations (`n_tokens × model_dim`), to be encoded.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub model_id: String,
    pub layer: u32,
    pub n_tokens: usize,
    /// Column count of the activation tensor.
    pub n_features: usize,
    pub activation_path: PathBuf,
    pub token_table_path: PathBuf,
    #[serde(default)]
    pub notes: String,
    #[serde(default)]
    pub kind: ActivationKind,
    /// SAE manifest for this layer; needed for encoding and weights mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sae_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeManifest {
    pub model_id: String,
    pub layer: u32,
    /// `h × n` encoder.
    pub encoder_path: PathBuf,
    /// `1 × h` encoder bias.
    pub bias_path: PathBuf,
    /// `n × h` decoder.
    pub decoder_path: PathBuf,
    /// `1 × h` JumpReLU thresholds; absent means ReLU.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_path: Option<PathBuf>,
    /// `1 × n` decoder bias.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_bias_path: Option<PathBuf>,
    #[serde(default)]
    pub notes: String,
}

/// A manifest together with the directory its relative paths resolve from.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<M> {
    pub manifest: M,
    pub path: PathBuf,
}

impl<M> Loaded<M> {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(rel)
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).at(path)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).at(path)?;
    text.push('\n');
    fs::write(path, text).at(path)
}

fn manifest_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

impl Loaded<DatasetManifest> {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        Ok(Self {
            manifest: read_json(&path)?,
            path,
        })
    }

    pub fn activation_path(&self) -> PathBuf {
        self.resolve(&self.manifest.activation_path)
    }

    pub fn token_table_path(&self) -> PathBuf {
        self.resolve(&self.manifest.token_table_path)
    }

    pub fn sae_path(&self) -> Option<PathBuf> {
        self.manifest.sae_path.as_deref().map(|p| self.resolve(p))
    }

    pub fn sae(&self) -> Result<Loaded<SaeManifest>> {
        let p = self
            .sae_path()
            .ok_or_else(|| manifest_err(&self.path, "no sae_path given"))?;
        Loaded::<SaeManifest>::load(p)
    }

    /// Checks counts against the referenced tensor and token table.
    pub fn validate(&self) -> Result<AxtReader> {
        let m = &self.manifest;
        let reader = AxtReader::open(self.activation_path())?;
        if reader.rows() != m.n_tokens || reader.cols() != m.n_features {
            return Err(manifest_err(
                &self.path,
                format!(
                    "declares {}×{} but activation tensor is {}×{}",
                    m.n_tokens,
                    m.n_features,
                    reader.rows(),
                    reader.cols()
                ),
            ));
        }
        let n_lines = count_tokens(self.token_table_path())?;
        if n_lines != m.n_tokens {
            return Err(manifest_err(
                &self.path,
                format!("declares {} tokens but token table has {n_lines}", m.n_tokens),
            ));
        }
        if m.kind == ActivationKind::Residual && m.sae_path.is_none() {
            return Err(manifest_err(&self.path, "residual activations need an sae_path"));
        }
        Ok(reader)
    }
}

fn row_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_tensor(path)?;
    if m.rows() != 1 {
        return Err(manifest_err(path, format!("expected a 1×k vector, got {}×{}", m.rows(), m.cols())));
    }
    Ok(m.into_vec())
}

impl Loaded<SaeManifest> {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        Ok(Self {
            manifest: read_json(&path)?,
            path,
        })
    }

    /// Every tensor file the weights are built from, in a fixed order.
    pub fn tensor_paths(&self) -> Vec<PathBuf> {
        let m = &self.manifest;
        let mut out = vec![
            self.resolve(&m.encoder_path),
            self.resolve(&m.bias_path),
            self.resolve(&m.decoder_path),
        ];
        out.extend(m.threshold_path.as_deref().map(|p| self.resolve(p)));
        out.extend(m.decoder_bias_path.as_deref().map(|p| self.resolve(p)));
        out
    }

    pub fn weights(&self) -> Result<SaeWeights> {
        let m = &self.manifest;
        let encoder = read_tensor(self.resolve(&m.encoder_path))?;
        let bias = row_vector(&self.resolve(&m.bias_path))?;
        let decoder = read_tensor(self.resolve(&m.decoder_path))?;
        let activation = match &m.threshold_path {
            Some(p) => Activation::JumpRelu {
                threshold: row_vector(&self.resolve(p))?,
            },
            None => Activation::Relu,
        };
        let mut w = SaeWeights::new(encoder, bias, decoder, activation)?;
        if let Some(p) = &m.decoder_bias_path {
            w = w.with_decoder_bias(row_vector(&self.resolve(p))?)?;
        }
        Ok(w)
    }
}

/// Reads a token table: one JSON string per line.
pub fn read_tokens(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let f = fs::File::open(path).at(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.at(path)?;
        let tok: String = serde_json::from_str(&line)
            .map_err(|e| manifest_err(path, format!("token table line {}: {e}", i + 1)))?;
        out.push(tok);
    }
    Ok(out)
}

fn count_tokens(path: PathBuf) -> Result<usize> {
    let f = fs::File::open(&path).at(&path)?;
    let mut n = 0;
    for line in BufReader::new(f).lines() {
        line.at(&path)?;
        n += 1;
    }
    Ok(n)
}

pub fn write_tokens(path: impl AsRef<Path>, tokens: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(fs::File::create(path).at(path)?);
    for t in tokens {
        let line = serde_json::to_string(t).at(path)?;
        writeln!(w, "{line}").at(path)?;
    }
    w.flush().at(path)
}
