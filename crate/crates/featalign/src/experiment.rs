//! Layer-by-layer experiment grids.
//!
//! An [`Experiment`] pairs every configured layer of model A with every
//! configured layer of model B, scores each pair as a whole and once per
//! keyword subspace, and writes tables and heatmaps. Outputs carry no
//! timestamps or absolute paths: the same config and data give the same
//! bytes.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use featalign_core::baseline::BaselineReport;
use featalign_core::correlate::{Metric, ScoreMatrix};
use featalign_core::filter::Stoplist;
use featalign_core::math;
use featalign_core::pipeline::{
    score_spaces, select_pairs, AlignedSpaces, CellConfig, PairSelection, Restriction, RsaOutcome,
    SimilarityReport, SpaceMode, SvccaOutcome,
};
use featalign_core::matching::MatchedPair;
use featalign_core::subspace::{compose, Composition, KeywordIndex};
use featalign_core::{FeatureStats, Matrix};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axt::{AxtReader, Dtype};
use crate::cache::{key, Cache};
use crate::error::{Error, IoContext, Result};
use crate::formats::ScoreRecord;
use crate::heatmap::{Format, Heatmap};
use crate::keywords::load_subspace;
use crate::manifest::{read_json, read_tokens, write_json, ActivationKind, DatasetManifest, Loaded};
use crate::streaming::{bootstrap_counts, correlate_files, encode_file, feature_stats_file, RayonExecutor};

/// Random pairings per subspace cell unless overridden.
pub const SUBSPACE_NULL_RUNS: usize = 1000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub label: String,
    /// Dataset manifests, one per layer.
    pub manifests: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeSpec {
    /// Keyword source of the second operand.
    pub with: String,
    pub kind: Composition,
    #[serde(default)]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceConfig {
    /// `bundled:<name>` or a keyword file.
    pub keywords: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub compose: Option<ComposeSpec>,
    #[serde(default)]
    pub null_runs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model_a: ModelSpec,
    pub model_b: ModelSpec,
    /// `(layer_a, layer_b)` cells to score; all combinations when absent.
    pub layer_pairs: Option<Vec<(u32, u32)>>,
    /// Activation similarity used for matching.
    pub metric: Metric,
    pub cell: CellConfig,
    /// Top tokens kept per feature.
    pub stats_k: usize,
    /// Extra stop tokens, one per line, on top of the default punctuation.
    pub stoplist: Option<PathBuf>,
    pub subspaces: Vec<SubspaceConfig>,
    /// Repeat the grid once per seed and report mean and variance; empty
    /// runs once with `cell.seed`.
    pub seeds: Vec<u64>,
    /// Resample tokens with replacement (per seed) for the correlation pass.
    pub bootstrap: bool,
    pub block_rows: usize,
    pub memory_budget_mb: usize,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            model_a: ModelSpec::default(),
            model_b: ModelSpec::default(),
            layer_pairs: None,
            metric: Metric::Pearson,
            cell: CellConfig::default(),
            stats_k: 10,
            stoplist: None,
            subspaces: Vec::new(),
            seeds: Vec::new(),
            bootstrap: false,
            block_rows: 4096,
            memory_budget_mb: 1024,
            cache_dir: None,
            output_dir: "out".into(),
            svg: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.model_a.manifests.is_empty() || self.model_b.manifests.is_empty() {
            return bad("both models need at least one dataset manifest");
        }
        if self.block_rows == 0 {
            return bad("block_rows must be at least 1");
        }
        if self.memory_budget_mb == 0 {
            return bad("memory_budget_mb must be at least 1");
        }
        if self.stats_k < self.cell.top_k {
            return bad("stats_k must be at least cell.top_k");
        }
        if self.bootstrap && self.seeds.is_empty() {
            return bad("bootstrap needs a list of seeds");
        }
        if self.cell.svcca.is_none() && self.cell.rsa.is_none() {
            return bad("enable at least one of cell.svcca and cell.rsa");
        }
        Ok(())
    }
}

/// Reads a config file; relative paths inside it resolve against the
/// file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<(ExperimentConfig, PathBuf)> {
    let path = path.as_ref();
    let cfg: ExperimentConfig = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, base))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// One layer of one model, ready for scoring.
#[derive(Debug)]
pub struct Dataset {
    pub label: String,
    pub layer: u32,
    pub features: AxtReader,
    /// Content hash of the feature tensor.
    pub features_hash: String,
    pub stats: Option<Arc<Vec<FeatureStats>>>,
    pub decoder_rows: Option<Matrix>,
}

/// A resolved keyword subspace.
#[derive(Debug, Clone)]
pub struct Subspace {
    pub name: String,
    pub index: KeywordIndex,
    pub null_runs: usize,
    pub n_items: usize,
}

/// Per-metric summary of a scored cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub score: f64,
    pub null_mean: Option<f64>,
    pub p_value: Option<f64>,
    pub p_smooth: Option<f64>,
    pub n_runs: usize,
}

impl MetricSummary {
    fn new(score: f64, baseline: Option<&BaselineReport>) -> Self {
        Self {
            score,
            null_mean: baseline.map(|b| b.null_mean),
            p_value: baseline.map(|b| b.p_value),
            p_smooth: baseline.map(|b| b.p_smooth),
            n_runs: baseline.map_or(0, |b| b.n_runs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub layer_a: u32,
    pub layer_b: u32,
    /// `None` for the whole-dictionary cell.
    pub subspace: Option<String>,
    pub status: CellStatus,
    pub error: Option<String>,
    pub candidates: Option<[usize; 2]>,
    pub n_matched: usize,
    pub n_pairs: usize,
    pub mean_corr_pre: Option<f64>,
    pub mean_corr_post: Option<f64>,
    pub svcca: Option<MetricSummary>,
    pub rsa: Option<MetricSummary>,
}

/// Statistics tabulated per cell, in output order.
pub const STATISTICS: &[&str] = &[
    "mean_corr_pre",
    "mean_corr_post",
    "svcca",
    "svcca_null_mean",
    "svcca_p",
    "rsa",
    "rsa_null_mean",
    "rsa_p",
];

impl CellSummary {
    fn failed(layer_a: u32, layer_b: u32, subspace: Option<String>, err: &Error) -> Self {
        Self {
            layer_a,
            layer_b,
            subspace,
            status: CellStatus::Failed,
            error: Some(err.to_string()),
            candidates: None,
            n_matched: 0,
            n_pairs: 0,
            mean_corr_pre: None,
            mean_corr_post: None,
            svcca: None,
            rsa: None,
        }
    }

    fn ok(layer_a: u32, layer_b: u32, subspace: Option<String>, r: &SimilarityReport) -> Self {
        Self {
            layer_a,
            layer_b,
            subspace,
            status: CellStatus::Ok,
            error: None,
            candidates: Some(r.candidates),
            n_matched: r.n_matched,
            n_pairs: r.pairs.len(),
            mean_corr_pre: r.mean_corr_pre,
            mean_corr_post: r.mean_corr_post,
            svcca: r
                .svcca
                .as_ref()
                .map(|s| MetricSummary::new(s.result.score, s.baseline.as_ref())),
            rsa: r.rsa.as_ref().map(|s| MetricSummary::new(s.score, s.baseline.as_ref())),
        }
    }

    /// One of [`STATISTICS`]; `None` when not computed.
    pub fn statistic(&self, name: &str) -> Option<f64> {
        let (metric, field) = match name {
            "mean_corr_pre" => return self.mean_corr_pre,
            "mean_corr_post" => return self.mean_corr_post,
            n => match n.split_once('_') {
                Some((m, f)) => (m, f),
                None => (n, ""),
            },
        };
        let m = match metric {
            "svcca" => self.svcca.as_ref()?,
            "rsa" => self.rsa.as_ref()?,
            _ => return None,
        };
        match field {
            "" => Some(m.score),
            "null_mean" => m.null_mean,
            "p" => m.p_value,
            _ => None,
        }
    }

    fn file_stem(&self) -> String {
        match &self.subspace {
            Some(s) => format!("L{}_L{}_{}", self.layer_a, self.layer_b, sanitize(s)),
            None => format!("L{}_L{}", self.layer_a, self.layer_b),
        }
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '+' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub name: String,
    pub model_a: String,
    pub model_b: String,
    pub metric: Metric,
    pub mode: SpaceMode,
    pub seed: u64,
    pub bootstrap: bool,
    pub layers_a: Vec<u32>,
    pub layers_b: Vec<u32>,
    pub subspaces: Vec<String>,
    /// Whole-dictionary cells in layer-pair order, then each subspace's.
    pub cells: Vec<CellSummary>,
}

impl GridResult {
    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed).count()
    }

    pub fn cell(&self, layer_a: u32, layer_b: u32, subspace: Option<&str>) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.layer_a == layer_a && c.layer_b == layer_b && c.subspace.as_deref() == subspace)
    }

    /// `layers_a × layers_b` matrix of one statistic.
    pub fn heatmap(&self, stat: &str, subspace: Option<&str>) -> Heatmap {
        let values = self
            .layers_a
            .iter()
            .map(|&la| {
                self.layers_b
                    .iter()
                    .map(|&lb| self.cell(la, lb, subspace).and_then(|c| c.statistic(stat)))
                    .collect()
            })
            .collect();
        let title = match subspace {
            Some(s) => format!("{} {stat} ({s})", self.name),
            None => format!("{} {stat}", self.name),
        };
        Heatmap {
            title,
            row_axis: format!("{} layer", self.model_a),
            col_axis: format!("{} layer", self.model_b),
            row_labels: self.layers_a.iter().map(|l| format!("L{l}")).collect(),
            col_labels: self.layers_b.iter().map(|l| format!("L{l}")).collect(),
            values,
            range: stat.ends_with("_p").then_some((0.0, 1.0)),
        }
    }

    /// Whole-dictionary SVCCA and RSA scores of every scored cell.
    pub fn score_records(&self) -> Vec<ScoreRecord> {
        let mut out = Vec::new();
        for c in self.cells.iter().filter(|c| c.subspace.is_none()) {
            for (metric, m) in [("svcca", &c.svcca), ("rsa", &c.rsa)] {
                if let Some(m) = m {
                    out.push(ScoreRecord {
                        layer_a: c.layer_a,
                        layer_b: c.layer_b,
                        metric: metric.into(),
                        mode: self.mode,
                        score: m.score,
                    });
                }
            }
        }
        out
    }
}

/// One grid run: the summary plus the full report of every scored cell.
#[derive(Debug, Clone)]
pub struct GridRun {
    pub result: GridResult,
    pub reports: Vec<Option<SimilarityReport>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedStat {
    pub mean: f64,
    /// Population variance over the seeds where the value exists.
    pub variance: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCell {
    pub layer_a: u32,
    pub layer_b: u32,
    pub subspace: Option<String>,
    /// Keyed by statistic name, in [`STATISTICS`] order.
    pub stats: Vec<(String, Option<SeedStat>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    /// What differs between the runs.
    pub varied: String,
    pub cells: Vec<SeedCell>,
}

impl SeedSummary {
    pub fn from_runs(seeds: &[u64], bootstrap: bool, runs: &[GridResult]) -> Self {
        let varied = if bootstrap {
            "random-pairing null draws, RSA row subsample, and a with-replacement token resample feeding the correlation pass"
        } else {
            "random-pairing null draws and RSA row subsample; matching is seed-independent"
        };
        let cells = match runs.first() {
            None => Vec::new(),
            Some(first) => first
                .cells
                .iter()
                .enumerate()
                .map(|(i, c)| SeedCell {
                    layer_a: c.layer_a,
                    layer_b: c.layer_b,
                    subspace: c.subspace.clone(),
                    stats: STATISTICS
                        .iter()
                        .map(|&s| {
                            let xs: Vec<f64> = runs.iter().filter_map(|r| r.cells[i].statistic(s)).collect();
                            let stat = (!xs.is_empty()).then(|| SeedStat {
                                mean: math::mean(&xs),
                                variance: math::variance(&xs),
                                n: xs.len(),
                            });
                            (s.to_string(), stat)
                        })
                        .collect(),
                })
                .collect(),
        };
        Self {
            seeds: seeds.to_vec(),
            varied: varied.into(),
            cells,
        }
    }

    pub fn get(&self, layer_a: u32, layer_b: u32, subspace: Option<&str>, stat: &str) -> Option<SeedStat> {
        self.cells
            .iter()
            .find(|c| c.layer_a == layer_a && c.layer_b == layer_b && c.subspace.as_deref() == subspace)?
            .stats
            .iter()
            .find(|(n, _)| n == stat)?
            .1
    }
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub runs: Vec<GridRun>,
    pub seed_summary: Option<SeedSummary>,
}

impl Outcome {
    pub fn n_failed(&self) -> usize {
        self.runs.iter().map(|r| r.result.n_failed()).sum()
    }
}

pub struct Experiment {
    pub config: ExperimentConfig,
    base: PathBuf,
    cache: Cache,
    stoplist: Stoplist,
    pub subspaces: Vec<Subspace>,
    pub datasets_a: Vec<Dataset>,
    pub datasets_b: Vec<Dataset>,
}

impl Experiment {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let (cfg, base) = load_config(path)?;
        Self::new(cfg, &base)
    }

    /// Validates the config and prepares every dataset: residuals are
    /// encoded, feature statistics computed and decoder rows loaded.
    pub fn new(config: ExperimentConfig, base: &Path) -> Result<Self> {
        config.validate()?;
        let base = base.to_path_buf();
        let cache = Cache::new(config.cache_dir.as_deref().map(|d| resolve(&base, d)))?;
        let mut stoplist = Stoplist::default();
        if let Some(p) = &config.stoplist {
            let p = resolve(&base, p);
            stoplist.extend_from_text(&fs::read_to_string(&p).at(&p)?);
        }
        let subspaces = config
            .subspaces
            .iter()
            .map(|s| resolve_subspace(s, &base))
            .collect::<Result<Vec<_>>>()?;
        let mut names = BTreeSet::new();
        for s in &subspaces {
            if !names.insert(s.name.clone()) {
                return Err(Error::Config(format!("subspace `{}` listed twice", s.name)));
            }
        }
        let mut exp = Self {
            config,
            base,
            cache,
            stoplist,
            subspaces,
            datasets_a: Vec::new(),
            datasets_b: Vec::new(),
        };
        exp.datasets_a = exp.prepare_model(&exp.config.model_a)?;
        exp.datasets_b = exp.prepare_model(&exp.config.model_b)?;
        Ok(exp)
    }

    pub fn output_dir(&self) -> PathBuf {
        resolve(&self.base, &self.config.output_dir)
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    fn prepare_model(&self, model: &ModelSpec) -> Result<Vec<Dataset>> {
        let out = model
            .manifests
            .par_iter()
            .map(|m| self.prepare_dataset(&model.label, &resolve(&self.base, m)))
            .collect::<Result<Vec<_>>>()?;
        let mut seen = BTreeSet::new();
        for d in &out {
            if !seen.insert(d.layer) {
                return Err(Error::Config(format!("model `{}` lists layer {} twice", model.label, d.layer)));
            }
        }
        Ok(out)
    }

    fn prepare_dataset(&self, label: &str, path: &Path) -> Result<Dataset> {
        let manifest = Loaded::<DatasetManifest>::load(path)?;
        let reader = manifest.validate()?;
        let layer = manifest.manifest.layer;
        let sae = match manifest.sae_path() {
            Some(_) => Some(manifest.sae()?),
            None => None,
        };
        let features = match manifest.manifest.kind {
            ActivationKind::Features => reader,
            ActivationKind::Residual => {
                let sae = sae.as_ref().expect("validated residual manifests name an SAE");
                let mut parts = vec!["encode".to_string(), self.cache.file_hash(reader.path())?];
                for p in sae.tensor_paths() {
                    parts.push(self.cache.file_hash(&p)?);
                }
                let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
                let k = key(&refs);
                let out = match self.cache.features_path(&k) {
                    Some(p) => p,
                    None => {
                        let dir = self.output_dir().join("encoded");
                        fs::create_dir_all(&dir).at(&dir)?;
                        dir.join(format!("{}_L{layer}.axt", sanitize(label)))
                    }
                };
                if self.cache.dir().is_none() || !out.exists() {
                    info!("encoding {} layer {layer} into {}", label, out.display());
                    let tmp = out.with_extension("axt.tmp");
                    encode_file(&reader, &sae.weights()?, &tmp, self.config.block_rows, Dtype::F32)?;
                    fs::rename(&tmp, &out).at(&out)?;
                }
                AxtReader::open(&out)?
            }
        };
        let features_hash = self.cache.file_hash(features.path())?;
        let needs_stats = self.config.cell.filter || !self.subspaces.is_empty();
        let stats = if needs_stats {
            let tokens_path = manifest.token_table_path();
            let tokens_hash = self.cache.file_hash(&tokens_path)?;
            let k = key(&["stats", &features_hash, &tokens_hash, &self.config.stats_k.to_string()]);
            Some(self.cache.stats(&k, || {
                let tokens = read_tokens(&tokens_path)?;
                feature_stats_file(&features, &tokens, self.config.stats_k, self.config.block_rows)
            })?)
        } else {
            None
        };
        let decoder_rows = match self.config.cell.mode {
            SpaceMode::Activations => None,
            SpaceMode::Weights => {
                let sae = sae.ok_or_else(|| Error::Manifest {
                    path: path.to_path_buf(),
                    message: "weights mode needs an sae_path".into(),
                })?;
                let rows = sae.weights()?.decoder_rows();
                if rows.rows() != features.cols() {
                    return Err(Error::Manifest {
                        path: path.to_path_buf(),
                        message: format!("SAE has {} features, activations have {}", rows.rows(), features.cols()),
                    });
                }
                Some(rows)
            }
        };
        Ok(Dataset {
            label: label.to_string(),
            layer,
            features,
            features_hash,
            stats,
            decoder_rows,
        })
    }

    /// Layer pairs in grid order.
    pub fn layer_pairs(&self) -> Result<Vec<(usize, usize)>> {
        let find = |ds: &[Dataset], l: u32, side: &str| {
            ds.iter()
                .position(|d| d.layer == l)
                .ok_or_else(|| Error::Config(format!("layer {l} not found for model {side}")))
        };
        match &self.config.layer_pairs {
            Some(pairs) => pairs
                .iter()
                .map(|&(la, lb)| Ok((find(&self.datasets_a, la, "A")?, find(&self.datasets_b, lb, "B")?)))
                .collect(),
            None => Ok((0..self.datasets_a.len())
                .flat_map(|i| (0..self.datasets_b.len()).map(move |j| (i, j)))
                .collect()),
        }
    }

    fn scores(&self, a: &Dataset, b: &Dataset, counts: Option<(u64, &[u32])>) -> Result<Arc<ScoreMatrix>> {
        let boot = counts.map_or("-".to_string(), |(s, _)| format!("bootstrap:{s}"));
        let k = key(&[
            "scores",
            &a.features_hash,
            &b.features_hash,
            self.config.metric.as_str(),
            &self.config.block_rows.to_string(),
            &boot,
        ]);
        self.cache.scores(&k, || {
            info!("correlating {} L{} with {} L{}", a.label, a.layer, b.label, b.layer);
            correlate_files(
                &a.features,
                &b.features,
                self.config.metric,
                self.config.block_rows,
                self.config.memory_budget_mb << 20,
                counts.map(|(_, c)| c),
            )
        })
    }

    fn spaces(&self, a: &Dataset, b: &Dataset, pairs: &[MatchedPair], mode: SpaceMode) -> Result<AlignedSpaces> {
        let src: Vec<usize> = pairs.iter().map(|p| p.src).collect();
        let tgt: Vec<usize> = pairs.iter().map(|p| p.tgt).collect();
        let (x, y) = match mode {
            SpaceMode::Weights => {
                let (da, db) = a
                    .decoder_rows
                    .as_ref()
                    .zip(b.decoder_rows.as_ref())
                    .ok_or_else(|| Error::Config("weights mode needs decoder rows".into()))?;
                (da.select_rows(&src), db.select_rows(&tgt))
            }
            // only the matched columns are read into memory
            SpaceMode::Activations => (
                a.features.read_columns(&src, self.config.block_rows)?,
                b.features.read_columns(&tgt, self.config.block_rows)?,
            ),
        };
        Ok(AlignedSpaces { x, y, mode })
    }

    /// Similarity matrix of layer pair `(i, j)` (indices into the datasets).
    pub fn cell_scores(&self, i: usize, j: usize) -> Result<Arc<ScoreMatrix>> {
        self.scores(&self.datasets_a[i], &self.datasets_b[j], None)
    }

    /// Matched and filtered pairs of layer pair `(i, j)`.
    pub fn select(&self, i: usize, j: usize, index: Option<&KeywordIndex>) -> Result<PairSelection> {
        let (a, b) = (&self.datasets_a[i], &self.datasets_b[j]);
        let scores = self.cell_scores(i, j)?;
        let restriction = index.map(|i| Restriction { index_a: i, index_b: i });
        Ok(select_pairs(
            &scores,
            a.stats.as_deref().map(Vec::as_slice),
            b.stats.as_deref().map(Vec::as_slice),
            &self.config.cell,
            &self.stoplist,
            restriction,
        )?)
    }

    /// Scores a given pairing of layer pair `(i, j)` with the configured
    /// metrics and baselines.
    pub fn score_pairs(
        &self,
        i: usize,
        j: usize,
        pairs: &[MatchedPair],
    ) -> Result<(Option<SvccaOutcome>, Option<RsaOutcome>)> {
        let spaces = self.spaces(&self.datasets_a[i], &self.datasets_b[j], pairs, self.config.cell.mode)?;
        Ok(score_spaces(&spaces, &self.config.cell, &RayonExecutor)?)
    }

    fn score_one(
        &self,
        scores: &ScoreMatrix,
        a: &Dataset,
        b: &Dataset,
        cfg: &CellConfig,
        index: Option<&KeywordIndex>,
    ) -> Result<SimilarityReport> {
        let restriction = index.map(|i| Restriction { index_a: i, index_b: i });
        let sel = select_pairs(
            scores,
            a.stats.as_deref().map(Vec::as_slice),
            b.stats.as_deref().map(Vec::as_slice),
            cfg,
            &self.stoplist,
            restriction,
        )?;
        let spaces = self.spaces(a, b, &sel.pairs, cfg.mode)?;
        let (svcca, rsa) = score_spaces(&spaces, cfg, &RayonExecutor)?;
        Ok(SimilarityReport::new(scores.metric, cfg, sel, svcca, rsa))
    }

    /// Scores the grid once with the given seed.
    pub fn run_grid(&self, seed: u64, bootstrap: bool) -> Result<GridRun> {
        let pairs = self.layer_pairs()?;
        let n_tokens = self.datasets_a.first().map_or(0, |d| d.features.rows());
        let counts = bootstrap.then(|| bootstrap_counts(n_tokens, seed));
        let scores: Vec<Result<Arc<ScoreMatrix>>> = pairs
            .par_iter()
            .map(|&(i, j)| {
                self.scores(
                    &self.datasets_a[i],
                    &self.datasets_b[j],
                    counts.as_deref().map(|c| (seed, c)),
                )
            })
            .collect();

        let base_cfg = CellConfig {
            seed,
            ..self.config.cell.clone()
        };
        // (pair index, subspace index)
        let mut tasks: Vec<(usize, Option<usize>)> = (0..pairs.len()).map(|p| (p, None)).collect();
        for s in 0..self.subspaces.len() {
            tasks.extend((0..pairs.len()).map(|p| (p, Some(s))));
        }
        let outcomes: Vec<(CellSummary, Option<SimilarityReport>)> = tasks
            .par_iter()
            .map(|&(p, s)| {
                let (i, j) = pairs[p];
                let (a, b) = (&self.datasets_a[i], &self.datasets_b[j]);
                let sub = s.map(|s| &self.subspaces[s]);
                let name = sub.map(|s| s.name.clone());
                let cfg = match sub {
                    Some(sub) => CellConfig {
                        null_runs: sub.null_runs,
                        ..base_cfg.clone()
                    },
                    None => base_cfg.clone(),
                };
                let report = match &scores[p] {
                    Ok(m) => self.score_one(m, a, b, &cfg, sub.map(|s| &s.index)),
                    Err(e) => Err(Error::Config(format!("correlation failed: {e}"))),
                };
                match report {
                    Ok(r) => (CellSummary::ok(a.layer, b.layer, name, &r), Some(r)),
                    Err(e) => {
                        warn!("cell L{} x L{} {:?} failed: {e}", a.layer, b.layer, name);
                        (CellSummary::failed(a.layer, b.layer, name, &e), None)
                    }
                }
            })
            .collect();

        let (cells, reports) = outcomes.into_iter().unzip();
        let layers = |ds: &[Dataset], pick: &dyn Fn(&(usize, usize)) -> usize| {
            let used: BTreeSet<usize> = pairs.iter().map(pick).collect();
            used.into_iter().map(|k| ds[k].layer).collect::<Vec<_>>()
        };
        Ok(GridRun {
            result: GridResult {
                name: self.config.name.clone(),
                model_a: self.config.model_a.label.clone(),
                model_b: self.config.model_b.label.clone(),
                metric: self.config.metric,
                mode: self.config.cell.mode,
                seed,
                bootstrap,
                layers_a: layers(&self.datasets_a, &|p| p.0),
                layers_b: layers(&self.datasets_b, &|p| p.1),
                subspaces: self.subspaces.iter().map(|s| s.name.clone()).collect(),
                cells,
            },
            reports,
        })
    }

    /// Runs the grid once, or once per configured seed.
    pub fn run(&self) -> Result<Outcome> {
        if self.config.seeds.is_empty() {
            return Ok(Outcome {
                runs: vec![self.run_grid(self.config.cell.seed, false)?],
                seed_summary: None,
            });
        }
        let runs = self
            .config
            .seeds
            .iter()
            .map(|&s| self.run_grid(s, self.config.bootstrap))
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<GridResult> = runs.iter().map(|r| r.result.clone()).collect();
        let summary = SeedSummary::from_runs(&self.config.seeds, self.config.bootstrap, &results);
        Ok(Outcome {
            runs,
            seed_summary: Some(summary),
        })
    }

    /// Writes every output file under [`Self::output_dir`].
    pub fn write_outputs(&self, outcome: &Outcome) -> Result<PathBuf> {
        let dir = self.output_dir();
        fs::create_dir_all(&dir).at(&dir)?;
        write_json(dir.join("config.resolved.json"), &self.config)?;
        match &outcome.seed_summary {
            None => {
                for run in &outcome.runs {
                    write_run(&dir, run, self.config.svg)?;
                }
            }
            Some(summary) => {
                for run in &outcome.runs {
                    write_run(&dir.join(format!("seed_{}", run.result.seed)), run, self.config.svg)?;
                }
                write_seed_summary(&dir, summary, &outcome.runs[0].result)?;
            }
        }
        Ok(dir)
    }
}

fn resolve_subspace(s: &SubspaceConfig, base: &Path) -> Result<Subspace> {
    let spec = load_subspace(&s.keywords, base)?;
    let null_runs = s.null_runs.unwrap_or(SUBSPACE_NULL_RUNS);
    let (name, index, n_items) = match &s.compose {
        None => (spec.name.clone(), KeywordIndex::from(&spec), spec.len()),
        Some(c) => {
            let other = load_subspace(&c.with, base)?;
            let composed = compose(&spec, &other, c.kind, c.cap)?;
            (composed.name(), KeywordIndex::from(&composed), composed.items.len())
        }
    };
    Ok(Subspace {
        name: s.name.clone().unwrap_or(name),
        index,
        null_runs,
        n_items,
    })
}

/// Table of subspace cells, one row per (subspace, layer pair).
pub fn subspace_table(result: &GridResult) -> String {
    let mut out = String::from(
        "subspace,layer_a,layer_b,status,n_pairs,svcca,svcca_null_mean,svcca_p,rsa,rsa_null_mean,rsa_p\n",
    );
    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for c in result.cells.iter().filter(|c| c.subspace.is_some()) {
        let status = match c.status {
            CellStatus::Ok => "ok",
            CellStatus::Failed => "failed",
        };
        out.push_str(&format!(
            "{},{},{},{status},{},{},{},{},{},{},{}\n",
            c.subspace.as_deref().unwrap_or_default(),
            c.layer_a,
            c.layer_b,
            c.n_pairs,
            fmt(c.statistic("svcca")),
            fmt(c.statistic("svcca_null_mean")),
            fmt(c.statistic("svcca_p")),
            fmt(c.statistic("rsa")),
            fmt(c.statistic("rsa_null_mean")),
            fmt(c.statistic("rsa_p")),
        ));
    }
    out
}

fn write_heatmaps(dir: &Path, result: &GridResult, subspace: Option<&str>, svg: bool) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for stat in STATISTICS {
        let map = result.heatmap(stat, subspace);
        map.write(dir.join(format!("{stat}.csv")), Format::Csv)?;
        map.write(dir.join(format!("{stat}.json")), Format::Json)?;
        if svg {
            map.write(dir.join(format!("{stat}.svg")), Format::Svg)?;
        }
    }
    Ok(())
}

/// Writes one run's grid, scores, per-cell reports, tables and heatmaps.
pub fn write_run(dir: &Path, run: &GridRun, svg: bool) -> Result<()> {
    let result = &run.result;
    let cells_dir = dir.join("cells");
    fs::create_dir_all(&cells_dir).at(&cells_dir)?;
    write_json(dir.join("grid.json"), result)?;
    write_json(dir.join("scores.json"), &result.score_records())?;
    for (c, r) in result.cells.iter().zip(&run.reports) {
        if let Some(r) = r {
            write_json(cells_dir.join(format!("{}.json", c.file_stem())), r)?;
        }
    }
    write_heatmaps(&dir.join("heatmaps"), result, None, svg)?;
    if !result.subspaces.is_empty() {
        let path = dir.join("subspaces.csv");
        fs::write(&path, subspace_table(result)).at(&path)?;
        for s in &result.subspaces {
            write_heatmaps(&dir.join("heatmaps").join(sanitize(s)), result, Some(s), svg)?;
        }
    }
    Ok(())
}

fn write_seed_summary(dir: &Path, summary: &SeedSummary, shape: &GridResult) -> Result<()> {
    let sdir = dir.join("seeds");
    fs::create_dir_all(&sdir).at(&sdir)?;
    write_json(sdir.join("summary.json"), summary)?;
    let mut scopes: Vec<Option<&str>> = vec![None];
    scopes.extend(shape.subspaces.iter().map(|s| Some(s.as_str())));
    for scope in scopes {
        let prefix = scope.map_or(String::new(), |s| format!("{}_", sanitize(s)));
        for stat in STATISTICS {
            for (suffix, pick) in [("mean", 0), ("var", 1)] {
                let mut map = shape.heatmap(stat, scope);
                map.title = format!("{} {stat} {suffix} over {} seeds", shape.name, summary.seeds.len());
                if pick == 1 {
                    map.range = None;
                }
                for (i, &la) in shape.layers_a.iter().enumerate() {
                    for (j, &lb) in shape.layers_b.iter().enumerate() {
                        map.values[i][j] = summary
                            .get(la, lb, scope, stat)
                            .map(|s| if pick == 0 { s.mean } else { s.variance });
                    }
                }
                map.write(sdir.join(format!("{prefix}{stat}_{suffix}.csv")), Format::Csv)?;
            }
        }
    }
    Ok(())
}
