mod common;

use std::fs;

use common::{grid_config, snapshot, synth_config, synth_data};
use featalign::axt::{write_tensor, AxtReader, Dtype};
use featalign::experiment::{CellStatus, Experiment, SeedSummary, SubspaceConfig, STATISTICS};
use featalign::manifest::{write_json, ActivationKind, DatasetManifest, Loaded, SaeManifest};
use featalign::Error;
use featalign_core::sae::encode;
use featalign_core::Matrix;

#[test]
fn reruns_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let layout = synth_data(dir.path(), 2, &synth_config(500, 0.1, 1));
    let mut cfg = grid_config(&layout, 20);
    cfg.output_dir = dir.path().join("out");
    let exp = Experiment::new(cfg.clone(), dir.path()).unwrap();
    exp.write_outputs(&exp.run().unwrap()).unwrap();
    let first = snapshot(&cfg.output_dir);
    assert!(first.keys().any(|p| p.ends_with("heatmaps/svcca.csv")));
    assert!(first.keys().any(|p| p.ends_with("heatmaps/svcca_p.svg")));
    assert!(first.keys().any(|p| p.ends_with("cells/L1_L0.json")));

    fs::remove_dir_all(&cfg.output_dir).unwrap();
    let exp = Experiment::new(cfg.clone(), dir.path()).unwrap();
    exp.write_outputs(&exp.run().unwrap()).unwrap();
    assert_eq!(snapshot(&cfg.output_dir), first);
}

#[test]
fn warm_cache_equals_cold_cache_and_no_cache() {
    let dir = tempfile::tempdir().unwrap();
    let layout = synth_data(dir.path(), 2, &synth_config(400, 0.2, 2));
    let mut cfg = grid_config(&layout, 10);
    cfg.output_dir = dir.path().join("out");
    let run = |cfg: &featalign::ExperimentConfig| {
        let _ = fs::remove_dir_all(&cfg.output_dir);
        let exp = Experiment::new(cfg.clone(), dir.path()).unwrap();
        exp.write_outputs(&exp.run().unwrap()).unwrap();
        snapshot(&cfg.output_dir)
    };
    let uncached = run(&cfg);
    cfg.cache_dir = Some(dir.path().join("cache"));
    let cold = run(&cfg);
    let entries = fs::read_dir(dir.path().join("cache/scores")).unwrap().count();
    assert_eq!(entries, 2 * 4, "one matrix and one flag file per layer pair");
    let warm = run(&cfg);
    let drop_config = |m: std::collections::BTreeMap<_, _>| {
        m.into_iter()
            .filter(|(p, _): &(std::path::PathBuf, _)| !p.ends_with("config.resolved.json"))
            .collect::<Vec<_>>()
    };
    assert_eq!(warm, cold);
    assert_eq!(drop_config(cold), drop_config(uncached));
}

#[test]
fn matching_layers_score_highest() {
    let dir = tempfile::tempdir().unwrap();
    let layout = synth_data(dir.path(), 3, &synth_config(600, 0.1, 3));
    let exp = Experiment::new(grid_config(&layout, 50), dir.path()).unwrap();
    let grid = exp.run().unwrap().runs.remove(0).result;
    assert_eq!(grid.n_failed(), 0);
    assert_eq!(grid.layers_a, vec![0, 1, 2]);
    for stat in ["svcca", "rsa", "mean_corr_post"] {
        let m = grid.heatmap(stat, None);
        for (i, row) in m.values.iter().enumerate() {
            let diag = row[i].unwrap();
            for (j, v) in row.iter().enumerate().filter(|(j, _)| *j != i) {
                assert!(diag > v.unwrap(), "{stat}: ({i},{i}) = {diag} vs ({i},{j}) = {v:?}");
            }
        }
    }
    for l in 0..3 {
        assert_eq!(grid.cell(l, l, None).unwrap().statistic("svcca_p"), Some(0.0));
    }
}

#[test]
fn explicit_layer_pairs_limit_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let layout = synth_data(dir.path(), 3, &synth_config(300, 0.0, 4));
    let mut cfg = grid_config(&layout, 0);
    cfg.layer_pairs = Some(vec![(2, 0), (0, 0)]);
    let grid = Experiment::new(cfg.clone(), dir.path()).unwrap().run().unwrap().runs.remove(0).result;
    assert_eq!(grid.cells.len(), 2);
    assert_eq!((grid.layers_a.clone(), grid.layers_b.clone()), (vec![0, 2], vec![0]));
    let m = grid.heatmap("svcca", None);
    assert_eq!(m.values.len(), 2);
    cfg.layer_pairs = Some(vec![(7, 0)]);
    assert!(Experiment::new(cfg, dir.path()).unwrap().run().is_err());
}

#[test]
fn unsupported_subspace_fails_only_its_cells() {
    let dir = tempfile::tempdir().unwrap();
    let layout = synth_data(dir.path(), 2, &synth_config(300, 0.1, 5));
    let mut cfg = grid_config(&layout, 5);
    cfg.output_dir = dir.path().join("out");
    // synthetic tokens are `tok<i>`, which no emotion word matches
    cfg.subspaces = vec![SubspaceConfig {
        keywords: "bundled:emotions".into(),
        name: None,
        compose: None,
        null_runs: Some(5),
    }];
    let exp = Experiment::new(cfg.clone(), dir.path()).unwrap();
    let outcome = exp.run().unwrap();
    let grid = &outcome.runs[0].result;
    assert_eq!(grid.n_failed(), 4);
    for c in &grid.cells {
        match &c.subspace {
            Some(_) => {
                assert_eq!(c.status, CellStatus::Failed);
                assert!(c.error.as_deref().unwrap().contains("insufficient subspace support"));
            }
            None => assert_eq!(c.status, CellStatus::Ok),
        }
    }
    exp.write_outputs(&outcome).unwrap();
    let table = fs::read_to_string(cfg.output_dir.join("subspaces.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().nth(1).unwrap().starts_with("emotions,0,0,failed,0,"));
    let csv = fs::read_to_string(cfg.output_dir.join("heatmaps/emotions/svcca.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "L0,,");
}

#[test]
fn keyword_subspace_scores_planted_layers() {
    let dir = tempfile::tempdir().unwrap();
    let layout = synth_data(dir.path(), 2, &synth_config(600, 0.0, 6));
    let words: Vec<String> = (0..600).map(|i| format!("tok{i}")).collect();
    fs::write(dir.path().join("toks.txt"), words.join("\n")).unwrap();
    let mut cfg = grid_config(&layout, 0);
    cfg.subspaces = vec![SubspaceConfig {
        keywords: "toks.txt".into(),
        name: Some("all tokens".into()),
        compose: None,
        null_runs: Some(200),
    }];
    let grid = Experiment::new(cfg, dir.path()).unwrap().run().unwrap().runs.remove(0).result;
    assert_eq!(grid.subspaces, vec!["all tokens".to_string()]);
    let diag = grid.cell(0, 0, Some("all tokens")).unwrap();
    assert_eq!(diag.status, CellStatus::Ok);
    assert_eq!(diag.svcca.as_ref().unwrap().n_runs, 200);
    assert_eq!(diag.statistic("svcca_p"), Some(0.0));
    // the whole-dictionary cell ran without a baseline
    assert_eq!(grid.cell(0, 0, None).unwrap().statistic("svcca_p"), None);
}

#[test]
fn seed_repeats_report_low_variance() {
    let dir = tempfile::tempdir().unwrap();
    let layout = synth_data(dir.path(), 2, &synth_config(500, 0.3, 7));
    let mut cfg = grid_config(&layout, 20);
    cfg.output_dir = dir.path().join("out");
    cfg.seeds = vec![1, 2, 3, 4, 5];
    cfg.bootstrap = true;
    let exp = Experiment::new(cfg.clone(), dir.path()).unwrap();
    let outcome = exp.run().unwrap();
    assert_eq!(outcome.runs.len(), 5);
    let summary = outcome.seed_summary.clone().unwrap();
    assert!(summary.varied.contains("resample"));
    for stat in ["svcca", "rsa"] {
        let s = summary.get(0, 0, None, stat).unwrap();
        assert_eq!(s.n, 5);
        assert!(s.variance < 0.02, "{stat} variance {}", s.variance);
        assert!(s.variance > 0.0, "bootstrap should move {stat}");
    }
    exp.write_outputs(&outcome).unwrap();
    let back: SeedSummary =
        serde_json::from_str(&fs::read_to_string(cfg.output_dir.join("seeds/summary.json")).unwrap()).unwrap();
    assert_eq!(back, summary);
    for stat in STATISTICS {
        assert!(cfg.output_dir.join(format!("seeds/{stat}_var.csv")).exists());
    }
    assert!(cfg.output_dir.join("seed_3/grid.json").exists());
}

#[test]
fn residual_datasets_are_encoded_before_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let layout = synth_data(dir.path(), 1, &synth_config(300, 0.0, 8));
    let x = Matrix::from_fn(300, 16, |i, j| ((i * 16 + j) as f64 * 0.37).sin());
    let data_dir = dir.path().join("data");
    write_tensor(data_dir.join("resid.axt"), &x, Dtype::F32).unwrap();
    let m = DatasetManifest {
        model_id: "synthetic-a".into(),
        layer: 0,
        n_tokens: 300,
        n_features: 16,
        activation_path: "resid.axt".into(),
        token_table_path: "tokens.jsonl".into(),
        notes: String::new(),
        kind: ActivationKind::Residual,
        sae_path: Some("a_L0.sae.json".into()),
    };
    let resid_manifest = data_dir.join("resid.json");
    write_json(&resid_manifest, &m).unwrap();
    let mut cfg = grid_config(&layout, 0);
    cfg.model_a.manifests = vec![resid_manifest];
    cfg.output_dir = dir.path().join("out");
    let exp = Experiment::new(cfg.clone(), dir.path()).unwrap();
    let encoded = AxtReader::open(cfg.output_dir.join("encoded/A_L0.axt")).unwrap().read_all().unwrap();
    let x32 = x.map(|v| v as f32 as f64);
    // the SAE as stored, narrowed to f32
    let weights = Loaded::<SaeManifest>::load(data_dir.join("a_L0.sae.json")).unwrap().weights().unwrap();
    let expected = encode(&x32, &weights).unwrap().map(|v| v as f32 as f64);
    assert_eq!(encoded, expected);
    assert_eq!(exp.datasets_a[0].features.cols(), 96);
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let layout = synth_data(dir.path(), 2, &synth_config(200, 0.0, 9));
    let base = grid_config(&layout, 0);
    let cases: Vec<(&str, Box<dyn Fn(&mut featalign::ExperimentConfig)>)> = vec![
        ("no manifests", Box::new(|c| c.model_b.manifests.clear())),
        ("zero block rows", Box::new(|c| c.block_rows = 0)),
        ("bootstrap without seeds", Box::new(|c| c.bootstrap = true)),
        ("no metrics", Box::new(|c| {
            c.cell.svcca = None;
            c.cell.rsa = None;
        })),
        ("duplicate layer", Box::new(|c| {
            let first = c.model_a.manifests[0].clone();
            c.model_a.manifests.push(first);
        })),
        ("unknown keyword list", Box::new(|c| {
            c.subspaces = vec![SubspaceConfig {
                keywords: "bundled:nope".into(),
                name: None,
                compose: None,
                null_runs: None,
            }];
        })),
    ];
    for (what, edit) in cases {
        let mut cfg = base.clone();
        edit(&mut cfg);
        assert!(Experiment::new(cfg, dir.path()).is_err(), "{what}");
    }
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"model_a": {"label": "A", "manifests": []}, "colour": "red"}"#).unwrap();
    assert!(matches!(Experiment::from_file(&path), Err(Error::Json { .. })));
}
