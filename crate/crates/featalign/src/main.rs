use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use featalign::axt::{AxtReader, Dtype};
use featalign::experiment::{ComposeSpec, Experiment, ExperimentConfig, ModelSpec, SubspaceConfig};
use featalign::formats::{read_match, write_pairs, write_score_matrix};
use featalign::heatmap::Format;
use featalign::manifest::{read_json, read_tokens, write_json, DatasetManifest, Loaded, SaeManifest};
use featalign::streaming::{encode_file, feature_stats_file};
use featalign::synth_io::write_synth;
use featalign::{Error, GridResult, Result};
use featalign_core::matching::MatchResult;
use featalign_core::pipeline::{CellConfig, SpaceMode};
use featalign_core::subspace::Composition;
use featalign_core::synth::SynthConfig;
use featalign_core::{MatchStrategy, Metric, RdmMeasure};
use log::{error, info};
use serde_json::json;

#[derive(Parser)]
#[command(name = "featalign", version, about = "Cross-model SAE feature alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode residual activations with an SAE.
    Encode {
        #[arg(long)]
        sae: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4096)]
        block_rows: usize,
        #[arg(long, default_value = "f32", value_parser = parse_dtype)]
        dtype: Dtype,
    },
    /// Top-token statistics of every feature of a dataset.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4096)]
        block_rows: usize,
    },
    /// Match features of two datasets by activation similarity.
    Match {
        #[command(flatten)]
        pair: PairArgs,
        /// Pair list; `.axm` selects the binary format, anything else JSON.
        #[arg(long)]
        output: PathBuf,
        /// Also store the full similarity matrix under this stem.
        #[arg(long)]
        scores_out: Option<PathBuf>,
    },
    /// Score a given pairing with SVCCA and RSA.
    Score {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a given pairing against a random-pairing baseline.
    Baseline {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Restrict both sides to a keyword subspace and score the matches.
    Subspace {
        #[command(flatten)]
        pair: PairArgs,
        /// `bundled:<name>` or a keyword file.
        #[arg(long)]
        keywords: String,
        #[arg(long)]
        compose_with: Option<String>,
        #[arg(long, default_value = "union", value_parser = parse_composition)]
        compose_kind: Composition,
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run an experiment grid from a JSON config.
    Grid {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic pair of models with planted shared features.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        layers: u32,
        #[arg(long, default_value_t = 2000)]
        n_tokens: usize,
        #[arg(long, default_value_t = 96)]
        features: usize,
        #[arg(long, default_value_t = 64)]
        shared: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        rotation: bool,
        #[arg(long, default_value_t = 16)]
        d_model: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render one statistic of a grid as CSV, JSON or SVG.
    Heatmap {
        /// A `grid.json`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "svcca")]
        stat: String,
        #[arg(long)]
        subspace: Option<String>,
        #[arg(long, default_value = "svg", value_parser = parse_format)]
        format: Format,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct PairArgs {
    /// Dataset manifest of model A.
    #[arg(long)]
    a: PathBuf,
    /// Dataset manifest of model B.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "pearson", value_parser = parse_metric)]
    metric: Metric,
    #[arg(long, default_value = "one_to_one", value_parser = parse_strategy)]
    strategy: MatchStrategy,
    #[arg(long, default_value = "weights", value_parser = parse_mode)]
    mode: SpaceMode,
    #[arg(long, default_value = "euclidean", value_parser = parse_measure)]
    rdm: RdmMeasure,
    #[arg(long)]
    no_svcca: bool,
    #[arg(long)]
    no_rsa: bool,
    /// Keep non-concept features.
    #[arg(long)]
    no_filter: bool,
    #[arg(long)]
    null_runs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    block_rows: usize,
}

fn parse_dtype(s: &str) -> std::result::Result<Dtype, String> {
    match s {
        "f32" => Ok(Dtype::F32),
        "f64" => Ok(Dtype::F64),
        _ => Err(format!("unknown dtype `{s}`")),
    }
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    s.parse().map_err(|e: featalign_core::Error| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<MatchStrategy, String> {
    s.replace('-', "_").parse().map_err(|e: featalign_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<SpaceMode, String> {
    s.parse().map_err(|e: featalign_core::Error| e.to_string())
}

fn parse_measure(s: &str) -> std::result::Result<RdmMeasure, String> {
    s.parse().map_err(|e: featalign_core::Error| e.to_string())
}

fn parse_composition(s: &str) -> std::result::Result<Composition, String> {
    s.parse().map_err(|e: featalign_core::Error| e.to_string())
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl PairArgs {
    /// A one-cell experiment over the two datasets.
    fn experiment(&self, default_null_runs: usize, subspaces: Vec<SubspaceConfig>) -> Result<Experiment> {
        let cwd = std::env::current_dir().map_err(|e| Error::Io {
            path: ".".into(),
            source: e,
        })?;
        let cfg = ExperimentConfig {
            name: "cell".into(),
            model_a: ModelSpec {
                label: "A".into(),
                manifests: vec![self.a.clone()],
            },
            model_b: ModelSpec {
                label: "B".into(),
                manifests: vec![self.b.clone()],
            },
            metric: self.metric,
            cell: CellConfig {
                strategy: self.strategy,
                mode: self.mode,
                svcca: (!self.no_svcca).then(Default::default),
                rsa: (!self.no_rsa).then_some(self.rdm),
                null_runs: self.null_runs.unwrap_or(default_null_runs),
                seed: self.seed,
                filter: !self.no_filter,
                ..CellConfig::default()
            },
            subspaces,
            block_rows: self.block_rows,
            cache_dir: self.cache_dir.clone(),
            svg: false,
            ..ExperimentConfig::default()
        };
        Experiment::new(cfg, &cwd)
    }
}

fn print_or_write(value: &serde_json::Value, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
            Ok(())
        }
    }
}

fn score_command(pair: &PairArgs, pairs: &Path, output: Option<&Path>, default_null_runs: usize) -> Result<()> {
    let exp = pair.experiment(default_null_runs, Vec::new())?;
    let m: MatchResult = read_match(pairs)?;
    let (svcca, rsa) = exp.score_pairs(0, 0, &m.pairs)?;
    let value = json!({
        "mode": pair.mode,
        "n_pairs": m.pairs.len(),
        "svcca": svcca,
        "rsa": rsa,
    });
    print_or_write(&value, output)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Encode {
            sae,
            input,
            output,
            block_rows,
            dtype,
        } => {
            let weights = Loaded::<SaeManifest>::load(&sae)?.weights()?;
            encode_file(&AxtReader::open(&input)?, &weights, &output, block_rows, dtype)?;
            info!("wrote {}", output.display());
        }
        Command::Stats {
            manifest,
            k,
            output,
            block_rows,
        } => {
            let m = Loaded::<DatasetManifest>::load(&manifest)?;
            let reader = m.validate()?;
            let tokens = read_tokens(m.token_table_path())?;
            write_json(&output, &feature_stats_file(&reader, &tokens, k, block_rows)?)?;
        }
        Command::Match {
            pair,
            output,
            scores_out,
        } => {
            let exp = pair.experiment(0, Vec::new())?;
            let scores = exp.cell_scores(0, 0)?;
            if let Some(stem) = &scores_out {
                write_score_matrix(stem, &scores)?;
            }
            let sel = exp.select(0, 0, None)?;
            let m = MatchResult {
                strategy: pair.strategy,
                metric: pair.metric,
                pairs: sel.pairs,
            };
            if output.extension().is_some_and(|e| e == "axm") {
                write_pairs(&output, &m)?;
            } else {
                write_json(&output, &m)?;
            }
            info!(
                "{} pairs kept of {} matched (mean correlation {:?} before filtering, {:?} after)",
                m.pairs.len(),
                sel.n_matched,
                sel.mean_corr_pre,
                sel.mean_corr_post
            );
        }
        Command::Score { pair, pairs, output } => score_command(&pair, &pairs, output.as_deref(), 0)?,
        Command::Baseline { pair, pairs, output } => score_command(&pair, &pairs, output.as_deref(), 100)?,
        Command::Subspace {
            pair,
            keywords,
            compose_with,
            compose_kind,
            cap,
            output,
        } => {
            let sub = SubspaceConfig {
                keywords,
                name: None,
                compose: compose_with.map(|with| ComposeSpec {
                    with,
                    kind: compose_kind,
                    cap,
                }),
                null_runs: pair.null_runs,
            };
            let exp = pair.experiment(0, vec![sub])?;
            let run = exp.run_grid(pair.seed, false)?;
            let cell = &run.result.cells[1];
            let value = json!({ "summary": cell, "report": run.reports[1] });
            print_or_write(&value, output.as_deref())?;
            if run.result.cells[1].error.is_some() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Grid { config } => {
            let exp = Experiment::from_file(&config)?;
            let outcome = exp.run()?;
            let dir = exp.write_outputs(&outcome)?;
            let failed = outcome.n_failed();
            info!("wrote {}", dir.display());
            if failed > 0 {
                error!("{failed} cell(s) failed; see grid.json");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Synth {
            out,
            layers,
            n_tokens,
            features,
            shared,
            noise,
            rotation,
            d_model,
            seed,
        } => {
            let cfg = SynthConfig {
                n_tokens,
                n_features_a: features,
                n_features_b: features,
                shared,
                noise_sigma: noise,
                rotation,
                seed,
                d_model,
                ..SynthConfig::default()
            };
            let layers: Vec<u32> = (0..layers).collect();
            let layout = write_synth(&out, &cfg, &layers, Dtype::F32)?;
            info!("wrote {} layer pairs, truth in {}", layers.len(), layout.truth_path.display());
        }
        Command::Heatmap {
            input,
            stat,
            subspace,
            format,
            output,
        } => {
            let grid: GridResult = read_json(&input)?;
            grid.heatmap(&stat, subspace.as_deref()).write(&output, format)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}

