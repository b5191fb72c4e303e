//! Writing SAE weights as AXT tensors plus a manifest.

use std::path::{Path, PathBuf};

use featalign_core::{Activation, Matrix, SaeWeights};

use crate::axt::{write_tensor, Dtype};
use crate::error::Result;
use crate::manifest::{write_json, SaeManifest};

/// Writes `<stem>.{encoder,bias,decoder}.axt` (plus thresholds and decoder
/// bias when present) and `<stem>.sae.json` into `dir`; returns the
/// manifest path.
pub fn write_sae(dir: &Path, stem: &str, w: &SaeWeights, model_id: &str, layer: u32, dtype: Dtype) -> Result<PathBuf> {
    let file = |part: &str| PathBuf::from(format!("{stem}.{part}.axt"));
    let row = |v: &[f64]| Matrix::from_vec(1, v.len(), v.to_vec()).expect("row vector");
    write_tensor(dir.join(file("encoder")), w.encoder(), dtype)?;
    write_tensor(dir.join(file("bias")), &row(w.bias()), dtype)?;
    write_tensor(dir.join(file("decoder")), w.decoder(), dtype)?;
    let threshold_path = match w.activation() {
        Activation::JumpRelu { threshold } => {
            write_tensor(dir.join(file("threshold")), &row(threshold), dtype)?;
            Some(file("threshold"))
        }
        Activation::Relu => None,
    };
    let decoder_bias_path = match w.decoder_bias() {
        Some(b) => {
            write_tensor(dir.join(file("decoder_bias")), &row(b), dtype)?;
            Some(file("decoder_bias"))
        }
        None => None,
    };
    let manifest = SaeManifest {
        model_id: model_id.to_string(),
        layer,
        encoder_path: file("encoder"),
        bias_path: file("bias"),
        decoder_path: file("decoder"),
        threshold_path,
        decoder_bias_path,
        notes: String::new(),
    };
    let path = dir.join(format!("{stem}.sae.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}
