//! Synthetic datasets on disk, in the same formats as harvested data.
//!
//! Layer `i` of model A and layer `i` of model B come from one generator
//! call and share planted features; different layer indices come from
//! independent generators and share nothing.

use std::fs;
use std::path::{Path, PathBuf};

use featalign_core::synth::{generate, SynthConfig, SynthData};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::axt::{write_tensor, Dtype};
use crate::error::{IoContext, Result};
use crate::manifest::{write_json, write_tokens, ActivationKind, DatasetManifest};
use crate::sae_io::write_sae;

/// Planted correspondences of one layer pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub layer: u32,
    pub seed: u64,
    pub pairs: Vec<(usize, usize)>,
}

/// Generator seed for layer `i`.
pub fn layer_seed(seed: u64, layer: u32) -> u64 {
    featalign_core::rng::stream(seed, (1 << 41) + layer as u64).next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthLayout {
    /// Dataset manifests of model A, one per layer.
    pub manifests_a: Vec<PathBuf>,
    pub manifests_b: Vec<PathBuf>,
    pub truth_path: PathBuf,
}

fn write_side(dir: &Path, side: &str, layer: u32, data: &SynthData, dtype: Dtype) -> Result<PathBuf> {
    let (acts, weights) = match side {
        "a" => (&data.acts_a, &data.weights_a),
        _ => (&data.acts_b, &data.weights_b),
    };
    let stem = format!("{side}_L{layer}");
    let model_id = format!("synthetic-{side}");
    write_tensor(dir.join(format!("{stem}.acts.axt")), acts, dtype)?;
    let sae = write_sae(dir, &stem, weights, &model_id, layer, dtype)?;
    let manifest = DatasetManifest {
        model_id,
        layer,
        n_tokens: acts.rows(),
        n_features: acts.cols(),
        activation_path: format!("{stem}.acts.axt").into(),
        token_table_path: "tokens.jsonl".into(),
        notes: "synthetic".into(),
        kind: ActivationKind::Features,
        sae_path: sae.file_name().map(PathBuf::from),
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Writes `layers` synthetic layer pairs into `dir`.
pub fn write_synth(dir: &Path, cfg: &SynthConfig, layers: &[u32], dtype: Dtype) -> Result<SynthLayout> {
    fs::create_dir_all(dir).at(dir)?;
    let mut layout = SynthLayout {
        manifests_a: Vec::new(),
        manifests_b: Vec::new(),
        truth_path: dir.join("truth.json"),
    };
    let mut truth = Vec::new();
    for &layer in layers {
        let seed = layer_seed(cfg.seed, layer);
        let data = generate(&SynthConfig { seed, ..cfg.clone() })?;
        if layout.manifests_a.is_empty() {
            write_tokens(dir.join("tokens.jsonl"), &data.tokens)?;
        }
        layout.manifests_a.push(write_side(dir, "a", layer, &data, dtype)?);
        layout.manifests_b.push(write_side(dir, "b", layer, &data, dtype)?);
        truth.push(Truth {
            layer,
            seed,
            pairs: data.truth,
        });
    }
    write_json(&layout.truth_path, &truth)?;
    Ok(layout)
}
