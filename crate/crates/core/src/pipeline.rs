//! Scoring one cell: match features by activation correlation, drop
//! non-concept pairs, build aligned spaces and score them against
//! random-pairing baselines.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::baseline::{null_scores, BaselineReport, PairedScore, RunExecutor};
use crate::correlate::{Metric, ScoreMatrix};
use crate::error::{Error, Result};
use crate::filter::{filter_features, Stoplist};
use crate::matching::{match_subset, MatchStrategy, MatchedPair};
use crate::matrix::Matrix;
use crate::rng;
use crate::rsa::{RdmMeasure, Rsa};
use crate::sae::FeatureStats;
use crate::subspace::{restrict_features, KeywordIndex};
use crate::svcca::{Svcca, SvccaConfig, SvccaResult};

/// Fewest features or pairs a cell can be scored on.
pub const MIN_SUPPORT: usize = 3;

// Stream id for the RSA row subsample; null runs use ids 0..N.
const STREAM_RSA_SUBSAMPLE: u64 = u64::MAX;

/// What the rows of an aligned space are.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceMode {
    /// Rows are paired features, columns model dimensions (decoder rows).
    #[default]
    Weights,
    /// Rows are tokens, columns paired features.
    Activations,
}

impl SpaceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SpaceMode::Weights => "weights",
            SpaceMode::Activations => "activations",
        }
    }
}

impl core::str::FromStr for SpaceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weights" => Ok(SpaceMode::Weights),
            "activations" => Ok(SpaceMode::Activations),
            other => Err(Error::InvalidParameter(alloc::format!("unknown space mode `{other}`"))),
        }
    }
}

/// Whether non-concept features are dropped before or after matching.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOrder {
    #[default]
    MatchThenFilter,
    FilterThenMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellConfig {
    pub strategy: MatchStrategy,
    pub mode: SpaceMode,
    pub svcca: Option<SvccaConfig>,
    pub rsa: Option<RdmMeasure>,
    /// Random pairings per metric; 0 skips the baseline.
    pub null_runs: usize,
    pub seed: u64,
    pub filter: bool,
    pub filter_order: FilterOrder,
    pub alpha_required: bool,
    /// RSA on at most this many rows (deterministic subsample).
    pub rsa_max_items: Option<usize>,
    /// Top tokens consulted by subspace restriction.
    pub top_k: usize,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            strategy: MatchStrategy::OneToOne,
            mode: SpaceMode::Weights,
            svcca: Some(SvccaConfig::default()),
            rsa: Some(RdmMeasure::default()),
            null_runs: 100,
            seed: 0,
            filter: true,
            filter_order: FilterOrder::MatchThenFilter,
            alpha_required: true,
            rsa_max_items: Some(2000),
            top_k: 10,
        }
    }
}

/// One side of a cell.
#[derive(Debug, Clone, Copy)]
pub struct Side<'a> {
    /// Per-feature top-token statistics; required for filtering and
    /// subspace restriction.
    pub stats: Option<&'a [FeatureStats]>,
    /// `h × d` decoder rows (weights mode).
    pub decoder_rows: Option<&'a Matrix>,
    /// `n_tokens × h` activations (activations mode).
    pub activations: Option<&'a Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSpaces {
    pub x: Matrix,
    pub y: Matrix,
    pub mode: SpaceMode,
}

impl AlignedSpaces {
    pub fn from_pairs(a: &Side<'_>, b: &Side<'_>, pairs: &[MatchedPair], mode: SpaceMode) -> Result<Self> {
        let src: Vec<usize> = pairs.iter().map(|p| p.src).collect();
        let tgt: Vec<usize> = pairs.iter().map(|p| p.tgt).collect();
        let (x, y) = match mode {
            SpaceMode::Weights => {
                let (da, db) = a
                    .decoder_rows
                    .zip(b.decoder_rows)
                    .ok_or_else(|| Error::InvalidParameter("weights mode needs decoder rows on both sides".into()))?;
                (da.select_rows(&src), db.select_rows(&tgt))
            }
            SpaceMode::Activations => {
                let (aa, ab) = a
                    .activations
                    .zip(b.activations)
                    .ok_or_else(|| Error::InvalidParameter("activations mode needs activations on both sides".into()))?;
                if aa.rows() != ab.rows() {
                    return Err(Error::DimensionMismatch {
                        context: "token count",
                        expected: aa.rows(),
                        actual: ab.rows(),
                    });
                }
                (aa.select_cols(&src), ab.select_cols(&tgt))
            }
        };
        Ok(Self { x, y, mode })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvccaOutcome {
    pub result: SvccaResult,
    pub baseline: Option<BaselineReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsaOutcome {
    pub measure: RdmMeasure,
    pub score: f64,
    /// Rows the RDMs were built over.
    pub n_items: usize,
    pub baseline: Option<BaselineReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub strategy: MatchStrategy,
    pub metric: Metric,
    pub mode: SpaceMode,
    /// Features eligible for matching on each side.
    pub candidates: [usize; 2],
    /// Mean correlation of pairs matched over all eligible features.
    pub mean_corr_pre: Option<f64>,
    /// Mean correlation of the scored pairs.
    pub mean_corr_post: Option<f64>,
    pub n_matched: usize,
    pub pairs: Vec<MatchedPair>,
    pub svcca: Option<SvccaOutcome>,
    pub rsa: Option<RsaOutcome>,
}

impl SimilarityReport {
    pub fn new(
        metric: Metric,
        cfg: &CellConfig,
        sel: PairSelection,
        svcca: Option<SvccaOutcome>,
        rsa: Option<RsaOutcome>,
    ) -> Self {
        Self {
            strategy: cfg.strategy,
            metric,
            mode: cfg.mode,
            candidates: sel.candidates,
            mean_corr_pre: sel.mean_corr_pre,
            mean_corr_post: sel.mean_corr_post,
            n_matched: sel.n_matched,
            pairs: sel.pairs,
            svcca,
            rsa,
        }
    }
}

/// Restriction of both sides to a keyword subspace.
#[derive(Debug, Clone, Copy)]
pub struct Restriction<'a> {
    pub index_a: &'a KeywordIndex,
    pub index_b: &'a KeywordIndex,
}

fn need<'a>(stats: Option<&'a [FeatureStats]>, what: &str) -> Result<&'a [FeatureStats]> {
    stats.ok_or_else(|| Error::InvalidParameter(alloc::format!("{what} needs feature statistics")))
}

fn intersect(sorted: &[usize], keep: &[usize]) -> Vec<usize> {
    sorted.iter().copied().filter(|i| keep.binary_search(i).is_ok()).collect()
}

fn mean_score(pairs: &[MatchedPair]) -> Option<f64> {
    (!pairs.is_empty()).then(|| pairs.iter().map(|p| p.score).sum::<f64>() / pairs.len() as f64)
}

/// Matched pairs that survive subspace restriction and filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSelection {
    /// Features eligible for matching on each side.
    pub candidates: [usize; 2],
    pub n_matched: usize,
    /// Mean correlation of pairs matched over all eligible features.
    pub mean_corr_pre: Option<f64>,
    /// Mean correlation of the retained pairs.
    pub mean_corr_post: Option<f64>,
    pub pairs: Vec<MatchedPair>,
}

/// Matching and filtering half of [`score_cell`]. Features that `scores`
/// flags as degenerate are never matched. Fails when fewer than
/// [`MIN_SUPPORT`] pairs remain.
pub fn select_pairs(
    scores: &ScoreMatrix,
    stats_a: Option<&[FeatureStats]>,
    stats_b: Option<&[FeatureStats]>,
    cfg: &CellConfig,
    stoplist: &Stoplist,
    restriction: Option<Restriction<'_>>,
) -> Result<PairSelection> {
    let mut cand_a = scores.live_sources();
    let mut cand_b = scores.live_targets();
    if let Some(r) = restriction {
        let qa = restrict_features(need(stats_a, "subspace restriction")?, r.index_a, cfg.top_k);
        let qb = restrict_features(need(stats_b, "subspace restriction")?, r.index_b, cfg.top_k);
        for (side, q) in [("A", &qa), ("B", &qb)] {
            if q.len() < MIN_SUPPORT {
                return Err(Error::InsufficientSupport {
                    side,
                    found: q.len(),
                    required: MIN_SUPPORT,
                });
            }
        }
        cand_a = intersect(&cand_a, &qa);
        cand_b = intersect(&cand_b, &qb);
    }
    if cand_a.is_empty() || cand_b.is_empty() {
        return Err(Error::Empty("no matchable features"));
    }

    let matched = match_subset(&scores.scores, &cand_a, &cand_b, cfg.strategy)?;
    let pairs = if cfg.filter {
        let keep_a = filter_features(need(stats_a, "filtering")?, stoplist, cfg.alpha_required);
        let keep_b = filter_features(need(stats_b, "filtering")?, stoplist, cfg.alpha_required);
        match cfg.filter_order {
            FilterOrder::MatchThenFilter => matched
                .iter()
                .copied()
                .filter(|p| keep_a.binary_search(&p.src).is_ok() && keep_b.binary_search(&p.tgt).is_ok())
                .collect(),
            FilterOrder::FilterThenMatch => {
                let fa = intersect(&cand_a, &keep_a);
                let fb = intersect(&cand_b, &keep_b);
                if fa.is_empty() || fb.is_empty() {
                    Vec::new()
                } else {
                    match_subset(&scores.scores, &fa, &fb, cfg.strategy)?
                }
            }
        }
    } else {
        matched.clone()
    };
    if pairs.len() < MIN_SUPPORT {
        return Err(Error::InsufficientSupport {
            side: "pairs",
            found: pairs.len(),
            required: MIN_SUPPORT,
        });
    }
    Ok(PairSelection {
        candidates: [cand_a.len(), cand_b.len()],
        n_matched: matched.len(),
        mean_corr_pre: mean_score(&matched),
        mean_corr_post: mean_score(&pairs),
        pairs,
    })
}

/// Scores aligned spaces with every metric enabled in `cfg`.
pub fn score_spaces<E: RunExecutor + ?Sized>(
    spaces: &AlignedSpaces,
    cfg: &CellConfig,
    exec: &E,
) -> Result<(Option<SvccaOutcome>, Option<RsaOutcome>)> {
    let svcca = cfg
        .svcca
        .map(|c| score_svcca(spaces, c, cfg.null_runs, cfg.seed, exec))
        .transpose()?;
    let rsa = cfg
        .rsa
        .map(|m| score_rsa(spaces, m, cfg.rsa_max_items, cfg.null_runs, cfg.seed, exec))
        .transpose()?;
    Ok((svcca, rsa))
}

/// Scores one cell: [`select_pairs`], then [`score_spaces`] on the spaces
/// built from the retained pairs.
pub fn score_cell<E: RunExecutor + ?Sized>(
    scores: &ScoreMatrix,
    a: &Side<'_>,
    b: &Side<'_>,
    cfg: &CellConfig,
    stoplist: &Stoplist,
    restriction: Option<Restriction<'_>>,
    exec: &E,
) -> Result<SimilarityReport> {
    let sel = select_pairs(scores, a.stats, b.stats, cfg, stoplist, restriction)?;
    let spaces = AlignedSpaces::from_pairs(a, b, &sel.pairs, cfg.mode)?;
    let (svcca, rsa) = score_spaces(&spaces, cfg, exec)?;
    Ok(SimilarityReport::new(scores.metric, cfg, sel, svcca, rsa))
}

pub fn score_svcca<E: RunExecutor + ?Sized>(
    spaces: &AlignedSpaces,
    cfg: SvccaConfig,
    null_runs: usize,
    seed: u64,
    exec: &E,
) -> Result<SvccaOutcome> {
    let scorer = Svcca(cfg);
    let prepared = scorer.prepare(&spaces.x, &spaces.y)?;
    let result = prepared.result(None);
    let baseline = if null_runs > 0 {
        let nulls = null_scores(&scorer, &prepared, null_runs, seed, exec)?;
        Some(BaselineReport::from_scores(result.score, nulls, seed))
    } else {
        None
    };
    Ok(SvccaOutcome { result, baseline })
}

/// Sorted random subset of `0..n` of size `min(n, max)`.
pub fn subsample_rows(n: usize, max: Option<usize>, seed: u64) -> Option<Vec<usize>> {
    let max = max?;
    if n <= max {
        return None;
    }
    let mut idx = rng::permutation(n, &mut rng::stream(seed, STREAM_RSA_SUBSAMPLE));
    idx.truncate(max);
    idx.sort_unstable();
    Some(idx)
}

pub fn score_rsa<E: RunExecutor + ?Sized>(
    spaces: &AlignedSpaces,
    measure: RdmMeasure,
    max_items: Option<usize>,
    null_runs: usize,
    seed: u64,
    exec: &E,
) -> Result<RsaOutcome> {
    let scorer = Rsa(measure);
    let prepared = match subsample_rows(spaces.x.rows(), max_items, seed) {
        Some(rows) => scorer.prepare(&spaces.x.select_rows(&rows), &spaces.y.select_rows(&rows))?,
        None => scorer.prepare(&spaces.x, &spaces.y)?,
    };
    let score = scorer.score(&prepared, None)?;
    let baseline = if null_runs > 0 {
        let nulls = null_scores(&scorer, &prepared, null_runs, seed, exec)?;
        Some(BaselineReport::from_scores(score, nulls, seed))
    } else {
        None
    };
    Ok(RsaOutcome {
        measure,
        score,
        n_items: scorer.n_rows(&prepared),
        baseline,
    })
}

/// [`score_cell`] restricted on both sides to features whose top tokens hit
/// `index`. Fails with [`Error::InsufficientSupport`] when either side has
/// fewer than [`MIN_SUPPORT`] qualifying features.
pub fn subspace_experiment<E: RunExecutor + ?Sized>(
    scores: &ScoreMatrix,
    a: &Side<'_>,
    b: &Side<'_>,
    index: &KeywordIndex,
    cfg: &CellConfig,
    stoplist: &Stoplist,
    exec: &E,
) -> Result<SimilarityReport> {
    let restriction = Restriction {
        index_a: index,
        index_b: index,
    };
    score_cell(scores, a, b, cfg, stoplist, Some(restriction), exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::Sequential;
    use crate::correlate::correlation_matrix;
    use crate::sae::{feature_stats, TopToken};
    use crate::subspace::SubspaceSpec;
    use crate::synth::{generate, SynthConfig};
    use alloc::string::ToString;
    use alloc::vec;

    fn synth(sigma: f64, seed: u64) -> crate::synth::SynthData {
        generate(&SynthConfig {
            n_tokens: 800,
            noise_sigma: sigma,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn run(data: &crate::synth::SynthData, cfg: &CellConfig) -> Result<SimilarityReport> {
        let scores = correlation_matrix(&data.acts_a, &data.acts_b, Metric::Pearson).unwrap();
        let (ra, rb) = (data.weights_a.decoder_rows(), data.weights_b.decoder_rows());
        let sa = feature_stats(&data.acts_a, &data.tokens, 5).unwrap();
        let sb = feature_stats(&data.acts_b, &data.tokens, 5).unwrap();
        let a = Side {
            stats: Some(&sa),
            decoder_rows: Some(&ra),
            activations: Some(&data.acts_a),
        };
        let b = Side {
            stats: Some(&sb),
            decoder_rows: Some(&rb),
            activations: Some(&data.acts_b),
        };
        score_cell(&scores, &a, &b, cfg, &Stoplist::default(), None, &Sequential)
    }

    #[test]
    fn identical_sides_score_one_with_zero_p() {
        let data = synth(0.0, 1);
        let same = crate::synth::SynthData {
            acts_b: data.acts_a.clone(),
            weights_b: data.weights_a.clone(),
            ..data.clone()
        };
        let cfg = CellConfig {
            rsa_max_items: None,
            null_runs: 50,
            ..CellConfig::default()
        };
        let r = run(&same, &cfg).unwrap();
        let s = r.svcca.unwrap();
        assert!((s.result.score - 1.0).abs() < 1e-6);
        assert_eq!(s.baseline.unwrap().p_value, 0.0);
        let rsa = r.rsa.unwrap();
        assert!((rsa.score - 1.0).abs() < 1e-12);
        assert_eq!(r.pairs.len(), 96);
    }

    #[test]
    fn activations_mode_runs() {
        let data = synth(0.1, 2);
        let cfg = CellConfig {
            mode: SpaceMode::Activations,
            null_runs: 5,
            rsa_max_items: Some(200),
            ..CellConfig::default()
        };
        let r = run(&data, &cfg).unwrap();
        assert_eq!(r.rsa.unwrap().n_items, 200);
        assert!(r.svcca.unwrap().result.score > 0.0);
    }

    #[test]
    fn reruns_are_identical() {
        let data = synth(0.5, 4);
        let cfg = CellConfig {
            null_runs: 10,
            ..CellConfig::default()
        };
        assert_eq!(run(&data, &cfg).unwrap(), run(&data, &cfg).unwrap());
    }

    #[test]
    fn filtering_drops_punctuation_pairs() {
        let mut data = synth(0.0, 5);
        // rows 0..400 become punctuation; features that only fire there drop
        for t in 0..data.tokens.len() {
            if t % 2 == 0 {
                data.tokens[t] = ".".to_string();
            }
        }
        let cfg = CellConfig {
            null_runs: 0,
            ..CellConfig::default()
        };
        let r = run(&data, &cfg).unwrap();
        assert!(r.pairs.len() <= r.n_matched);
        let unfiltered = run(&data, &CellConfig { filter: false, ..cfg }).unwrap();
        assert_eq!(unfiltered.pairs.len(), unfiltered.n_matched);
    }

    fn concept_stats(h: usize, concept: &[usize], word: &str) -> Vec<FeatureStats> {
        (0..h)
            .map(|f| FeatureStats {
                max: 1.0,
                frequency: 0.2,
                top: vec![TopToken {
                    token: if concept.contains(&f) { word.to_string() } else { alloc::format!("w{f}") },
                    activation: 1.0,
                    row: 0,
                }],
            })
            .collect()
    }

    #[test]
    fn subspace_restriction_requires_support() {
        let data = synth(0.0, 6);
        let scores = correlation_matrix(&data.acts_a, &data.acts_b, Metric::Pearson).unwrap();
        let (ra, rb) = (data.weights_a.decoder_rows(), data.weights_b.decoder_rows());
        // more pairs than model dimensions, otherwise CCA saturates for any pairing
        let concept_a: Vec<usize> = data.truth.iter().take(40).map(|t| t.0).collect();
        let concept_b: Vec<usize> = data.truth.iter().take(40).map(|t| t.1).collect();
        let sa = concept_stats(96, &concept_a, "joy");
        let sb = concept_stats(96, &concept_b, "joy");
        let a = Side {
            stats: Some(&sa),
            decoder_rows: Some(&ra),
            activations: None,
        };
        let b = Side {
            stats: Some(&sb),
            decoder_rows: Some(&rb),
            activations: None,
        };
        let idx = KeywordIndex::from(&SubspaceSpec::new("e", ["joy"]).unwrap());
        let cfg = CellConfig {
            null_runs: 200,
            rsa: Some(RdmMeasure::Euclidean),
            ..CellConfig::default()
        };
        let r = score_cell(
            &scores,
            &a,
            &b,
            &cfg,
            &Stoplist::default(),
            Some(Restriction {
                index_a: &idx,
                index_b: &idx,
            }),
            &Sequential,
        )
        .unwrap();
        assert_eq!(r.pairs.len(), 40);
        assert!(r.pairs.iter().all(|p| data.truth.contains(&(p.src, p.tgt))));
        assert_eq!(r.svcca.unwrap().baseline.unwrap().p_value, 0.0);

        let other = KeywordIndex::from(&SubspaceSpec::new("t", ["monday"]).unwrap());
        let err = score_cell(
            &scores,
            &a,
            &b,
            &cfg,
            &Stoplist::default(),
            Some(Restriction {
                index_a: &other,
                index_b: &idx,
            }),
            &Sequential,
        );
        assert!(matches!(err, Err(Error::InsufficientSupport { side: "A", found: 0, .. })));
    }

    #[test]
    fn subsample_is_deterministic_and_sorted() {
        assert_eq!(subsample_rows(10, Some(20), 0), None);
        assert_eq!(subsample_rows(10, None, 0), None);
        let s = subsample_rows(100, Some(10), 3).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(Some(s), subsample_rows(100, Some(10), 3));
    }
}
