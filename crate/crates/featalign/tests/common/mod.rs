#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use featalign::axt::Dtype;
use featalign::experiment::{ExperimentConfig, ModelSpec};
use featalign::synth_io::{write_synth, SynthLayout};
use featalign_core::pipeline::CellConfig;
use featalign_core::synth::SynthConfig;

pub fn synth_config(n_tokens: usize, sigma: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        n_tokens,
        noise_sigma: sigma,
        seed,
        ..SynthConfig::default()
    }
}

/// Synthetic layers `0..layers` for both models under `dir/data`.
pub fn synth_data(dir: &Path, layers: u32, cfg: &SynthConfig) -> SynthLayout {
    let layers: Vec<u32> = (0..layers).collect();
    write_synth(&dir.join("data"), cfg, &layers, Dtype::F32).unwrap()
}

pub fn grid_config(layout: &SynthLayout, null_runs: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: "synthetic".into(),
        model_a: ModelSpec {
            label: "A".into(),
            manifests: layout.manifests_a.clone(),
        },
        model_b: ModelSpec {
            label: "B".into(),
            manifests: layout.manifests_b.clone(),
        },
        cell: CellConfig {
            null_runs,
            ..CellConfig::default()
        },
        svg: true,
        ..ExperimentConfig::default()
    }
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}
