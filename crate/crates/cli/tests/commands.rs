//! End-to-end command behaviour: golden ingest output, exit codes and
//! artifact layout.

use std::path::{Path, PathBuf};

use servecurve::data::split_train_test;
use servecurve::simulate::{simulate, SyntheticConfig};
use servecurve::{ChainConfig, ModelConfig, Variant};
use servecurve_cli::{cmd_compare, cmd_fit, cmd_ingest, cmd_predict, cmd_report, CliError, RunConfig};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn tiny_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.input = Some(fixture("tiny.csv"));
    cfg.paths.out = out.to_path_buf();
    cfg.data.min_matches = 1;
    cfg.data.test_servers = 0;
    cfg
}

#[test]
fn ingest_matches_golden_files() {
    let tmp = TempDir::new().unwrap();
    let o = cmd_ingest(&tiny_config(tmp.path())).unwrap();
    for f in ["points.csv", "points_players.json", "summary.json"] {
        let got = std::fs::read(o.dir.join(f)).unwrap();
        let want = std::fs::read(fixture("golden").join(f)).unwrap();
        assert_eq!(got, want, "{f} differs from the golden copy");
    }
    // train equals the full set when nothing is held out
    assert_eq!(
        std::fs::read(o.dir.join("train.csv")).unwrap(),
        std::fs::read(o.dir.join("points.csv")).unwrap()
    );
    assert_eq!(std::fs::read_to_string(o.dir.join("test.csv")).unwrap().lines().count(), 1);
}

#[test]
fn ingest_is_idempotent_including_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let dir = cmd_ingest(&cfg).unwrap().dir;
    let first: Vec<Vec<u8>> = ["manifest.json", "summary.json", "train.csv"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect();
    cmd_ingest(&cfg).unwrap();
    for (i, f) in ["manifest.json", "summary.json", "train.csv"].iter().enumerate() {
        assert_eq!(std::fs::read(dir.join(f)).unwrap(), first[i]);
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "ingest");
    assert_eq!(manifest["config"]["data"]["min_matches"], 1);
    assert!(manifest["outputs"]["points.csv"].as_str().unwrap().len() == 64);
}

#[test]
fn missing_column_exits_2_and_names_it() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("bad.csv");
    std::fs::write(&csv, "match_id,tournament,server,receiver,point_winner\nm,Wimbledon,A,B,server\n").unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.paths.input = Some(csv);
    let err = cmd_ingest(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("rally_count"), "{err}");
}

#[test]
fn empty_after_filters_exits_3() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.data.min_matches = 5;
    let err = cmd_ingest(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let mut cfg = tiny_config(tmp.path());
    cfg.paths.out = tmp.path().join("nothing");
    assert_eq!(cmd_fit(&cfg, false).unwrap_err().exit_code(), 3);
}

#[test]
fn exit_code_table() {
    let e = |x: CliError| x.exit_code();
    assert_eq!(e(CliError::SamplerInit(servecurve::Error::Sampler("x".into()))), 4);
    assert_eq!(e(servecurve::Error::DatasetMismatch("a".into(), "b".into()).into()), 5);
    assert_eq!(e(CliError::NotConverged(1.5)), 7);
    assert_eq!(e(CliError::Config("x".into())), 1);
}

/// Writes a synthetic train/test split under `<out>/data`, as ingest would.
fn stage_synthetic(out: &Path, seed: u64, n_test: usize) {
    let sim = simulate(
        &ModelConfig::tennis_default(),
        &SyntheticConfig {
            n_players: 8,
            n_points: 4000,
            seed,
            ..SyntheticConfig::default()
        },
    )
    .unwrap();
    let (train, test, _) = split_train_test(&sim.dataset, n_test, 1).unwrap();
    let dir = out.join("data");
    std::fs::create_dir_all(&dir).unwrap();
    for (stem, d) in [("train", &train), ("test", &test)] {
        let mut buf = Vec::new();
        d.write_canonical_csv(&mut buf).unwrap();
        std::fs::write(dir.join(format!("{stem}.csv")), buf).unwrap();
        std::fs::write(
            dir.join(format!("{stem}_players.json")),
            serde_json::to_vec(&d.index()).unwrap(),
        )
        .unwrap();
    }
}

fn short_chain(out: &Path, variant: Variant) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.out = out.to_path_buf();
    cfg.model.variant = variant;
    cfg.chain = ChainConfig {
        n_iter: 300,
        burn_in: 100,
        thin: 4,
        adapt_window: 100,
        ..ChainConfig::default()
    };
    cfg.report.grid_step = 1.0;
    cfg
}

#[test]
fn fit_compare_predict_report_pipeline() {
    let tmp = TempDir::new().unwrap();
    stage_synthetic(tmp.path(), 3, 2);
    let partial = short_chain(tmp.path(), Variant::Partial);
    let unc = short_chain(tmp.path(), Variant::Unconstrained);
    let a = cmd_fit(&partial, false).unwrap();
    let b = cmd_fit(&unc, false).unwrap();
    assert_eq!(a.report.draws_per_chain, 50);
    for f in ["draws.bin", "draws.json", "report.json", "manifest.json"] {
        assert!(a.dir.join(f).is_file(), "{f}");
    }

    let reports = [a.dir.join("report.json"), b.dir.join("report.json")];
    let table = cmd_compare(&partial, &reports).unwrap();
    assert_eq!(table.rows.len(), 2);
    let csv = std::fs::read_to_string(tmp.path().join("compare/compare.csv")).unwrap();
    assert!(csv.starts_with("model,LPML,WAIC,DIC,RMSE,best"), "{csv}");

    // a duplicated report ties with itself on every criterion
    let dup = cmd_compare(&partial, &[reports[0].clone(), reports[0].clone()]).unwrap();
    assert_eq!(dup.rows[0].lpml, dup.rows[1].lpml);
    assert!(dup.rows[0].marks.iter().all(|m| format!("{m:?}") == "Tie"));
    assert!(cmd_compare(&partial, &reports[..1]).is_err());

    let pdir = cmd_predict(&partial).unwrap();
    let curves = std::fs::read_to_string(pdir.join("curves.csv")).unwrap();
    // two held-out servers, 15 grid points each, plus the header
    assert_eq!(curves.lines().count(), 1 + 2 * 15);

    let rdir = cmd_report(&partial).unwrap();
    for f in ["curves.csv", "scatter.csv", "ranking.csv", "ability.csv", "manifest.json"] {
        assert!(rdir.join(f).is_file(), "{f}");
    }
}

#[test]
fn court_report_adds_per_court_tables() {
    let tmp = TempDir::new().unwrap();
    stage_synthetic(tmp.path(), 4, 0);
    let plain = short_chain(tmp.path(), Variant::Partial);
    let mut court = plain.clone();
    court.model.court_effect = true;
    cmd_fit(&plain, false).unwrap();
    cmd_fit(&court, false).unwrap();
    let rdir = cmd_report(&court).unwrap();
    for f in ["ranking-clay.csv", "ranking-grass.csv", "ranking-hard.csv"] {
        assert!(rdir.join(f).is_file(), "{f}");
    }
    let ability = std::fs::read_to_string(rdir.join("ability.csv")).unwrap();
    assert!(ability.lines().next().unwrap().contains("clay"), "{ability}");
    assert_eq!(ability.lines().count(), 1 + 8);

    // nothing held out: header-only predictive curves
    let pdir = cmd_predict(&plain).unwrap();
    assert_eq!(std::fs::read_to_string(pdir.join("curves.csv")).unwrap().lines().count(), 1);
}

#[test]
fn mismatched_and_missing_inputs() {
    let t1 = TempDir::new().unwrap();
    let t2 = TempDir::new().unwrap();
    stage_synthetic(t1.path(), 5, 1);
    stage_synthetic(t2.path(), 6, 1);
    let c1 = short_chain(t1.path(), Variant::Partial);
    let c2 = short_chain(t2.path(), Variant::Partial);

    assert_eq!(cmd_predict(&c1).unwrap_err().exit_code(), 6);
    assert_eq!(cmd_report(&c1).unwrap_err().exit_code(), 6);

    let a = cmd_fit(&c1, false).unwrap();
    let b = cmd_fit(&c2, false).unwrap();
    let err = cmd_compare(&c1, &[a.dir.join("report.json"), b.dir.join("report.json")]).unwrap_err();
    assert_eq!(err.exit_code(), 5);

    // draws from one dataset, training set from another
    std::fs::copy(b.dir.join("draws.bin"), a.dir.join("draws.bin")).unwrap();
    std::fs::copy(b.dir.join("draws.json"), a.dir.join("draws.json")).unwrap();
    assert_eq!(cmd_predict(&c1).unwrap_err().exit_code(), 5);
}

#[test]
fn strict_fit_fails_on_unconverged_chains() {
    let tmp = TempDir::new().unwrap();
    stage_synthetic(tmp.path(), 7, 0);
    let mut cfg = short_chain(tmp.path(), Variant::Partial);
    cfg.chain = ChainConfig {
        n_iter: 30,
        burn_in: 10,
        thin: 1,
        n_chains: 2,
        adapt_window: 10,
        ..ChainConfig::default()
    };
    let relaxed = cmd_fit(&cfg, false).unwrap();
    assert!(relaxed.report.max_rhat.unwrap() > 1.1);
    let err = cmd_fit(&cfg, true).unwrap_err();
    assert_eq!(err.exit_code(), 7);
    assert!(cfg.fit_dir().join("draws.bin").is_file());
}
