use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use servecurve::data::{
    filter_players, filter_rallies, filter_tour, parse_points_csv, split_train_test, summarize, DropTally,
    PlayerIndex, SplitSummary, Summary,
};
use servecurve::metrics::{compare, fit_report, CompareTable, FitReport};
use servecurve::report::{
    ability_table, curve_summary, default_grid, predict_new_server, rank_rally_ability, scatter,
    write_ability_csv, write_curves_csv, write_ranking_csv, write_scatter_csv,
};
use servecurve::{run_chain, Court, Dataset, Error, PosteriorDraws};

use crate::artifacts::{read, sha256_hex, ArtifactDir};
use crate::{CliError, RunConfig};

/// Contents of `data/summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub rows: usize,
    pub dropped: DropTally,
    /// After the tour and rally-length filters.
    pub after_rally_filter: Summary,
    /// After every filter; this is what the dataset holds.
    pub after_player_filter: Summary,
    pub players: usize,
    pub servers: usize,
    pub points: usize,
    pub split: SplitSummary,
    pub dataset_hash: String,
    pub train_hash: String,
    pub test_hash: String,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub dir: PathBuf,
    pub summary: IngestSummary,
}

fn schema_error(e: Error) -> CliError {
    match e {
        Error::Io(source) => CliError::Io {
            path: PathBuf::from("input"),
            source,
        },
        other => CliError::Schema(other),
    }
}

fn nonempty_summary(records: &[servecurve::data::RawPointRecord], stage: &str) -> Result<Summary, CliError> {
    if records.is_empty() {
        return Err(CliError::Empty(format!("no points left after the {stage} filter")));
    }
    Ok(summarize(records)?)
}

/// Parses the input CSV, filters it, aggregates rally lengths and splits off
/// the held-out servers. Writes under `<out>/data`.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestOutcome, CliError> {
    cfg.validate()?;
    let input = cfg.input()?;
    let parsed = parse_points_csv(input, &cfg.schema).map_err(schema_error)?;
    let mut records = parsed.records;
    if let Some(t) = cfg.data.tour {
        records = filter_tour(records, t);
    }
    let records = filter_rallies(records, cfg.data.max_rally);
    let after_rally = nonempty_summary(&records, "rally-length")?;
    let records = filter_players(records, cfg.data.min_matches);
    let after_players = nonempty_summary(&records, "minimum-matches")?;

    let dataset = Dataset::from_records(&records);
    let (train, test, split) = split_train_test(&dataset, cfg.data.test_servers, cfg.data.split_seed)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut out = ArtifactDir::create(cfg.data_dir())?;
    out.input_file(input)?;
    for (stem, d) in [("points", &dataset), ("train", &train), ("test", &test)] {
        out.write_with(&format!("{stem}.csv"), |b| d.write_canonical_csv(b))?;
        out.write_json(&format!("{stem}_players.json"), &d.index())?;
    }
    let summary = IngestSummary {
        rows: parsed.rows,
        dropped: parsed.dropped,
        after_rally_filter: after_rally,
        after_player_filter: after_players,
        players: dataset.n_players(),
        servers: dataset.n_servers(),
        points: dataset.points().len(),
        split,
        dataset_hash: dataset.content_hash(),
        train_hash: train.content_hash(),
        test_hash: test.content_hash(),
    };
    out.write_json("summary.json", &summary)?;
    let dir = out.finish("ingest", cfg)?;
    log::info!(
        "ingested {} points ({} players, {} servers) into {}",
        summary.points,
        summary.players,
        summary.servers,
        dir.display()
    );
    Ok(IngestOutcome { dir, summary })
}

/// Reads `<stem>.csv` and `<stem>_players.json` written by ingest.
pub(crate) fn load_dataset(dir: &Path, stem: &str) -> Result<Dataset, CliError> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let idx_path = dir.join(format!("{stem}_players.json"));
    if !csv_path.is_file() || !idx_path.is_file() {
        return Err(CliError::Empty(format!(
            "no aggregated `{stem}` dataset in {}; run ingest first",
            dir.display()
        )));
    }
    let index: PlayerIndex =
        serde_json::from_slice(&read(&idx_path)?).map_err(|e| CliError::Core(Error::Json(e)))?;
    Ok(Dataset::read_canonical_csv(read(&csv_path)?.as_slice(), index)?)
}

fn load_draws(dir: &Path) -> Result<PosteriorDraws, CliError> {
    if !dir.join("draws.bin").is_file() || !dir.join("draws.json").is_file() {
        return Err(CliError::MissingDraws {
            dir: dir.to_path_buf(),
            reason: "draws.bin or draws.json not found; run fit first".into(),
        });
    }
    PosteriorDraws::load(dir).map_err(|e| CliError::MissingDraws {
        dir: dir.to_path_buf(),
        reason: e.to_string(),
    })
}

fn check_same_data(draws: &PosteriorDraws, train: &Dataset) -> Result<(), CliError> {
    let h = train.content_hash();
    if draws.dataset_hash != h {
        return Err(CliError::Mismatch(format!(
            "draws were fitted to {} but the training set is {h}",
            draws.dataset_hash
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub dir: PathBuf,
    pub report: FitReport,
}

/// Runs the chains on the training set and writes the draws and the fit
/// report under `<out>/fit-<variant>[-court]`. With `strict`, a maximum
/// split R-hat above 1.1 is an error after the artifacts are written.
pub fn cmd_fit(cfg: &RunConfig, strict: bool) -> Result<FitOutcome, CliError> {
    cfg.validate()?;
    let train = load_dataset(&cfg.data_dir(), "train")?;
    if train.is_empty() {
        return Err(CliError::Empty("training set has no points".into()));
    }
    let model = cfg.model.model();
    let draws = run_chain(&cfg.chain, &train, &model).map_err(|e| match e {
        Error::Sampler(_) => CliError::SamplerInit(e),
        other => CliError::from(other),
    })?;
    let report = fit_report(&draws, &train)?;

    let mut out = ArtifactDir::create(cfg.fit_dir())?;
    out.input("train", draws.dataset_hash.clone());
    out.write_with("draws.bin", |b| draws.write_binary(b))?;
    out.write_json("draws.json", &draws.manifest())?;
    out.write_json("report.json", &report)?;
    let dir = out.finish("fit", cfg)?;
    log::info!(
        "{}: LPML {:.2}, WAIC {:.2}, DIC {:.2}, RMSE {:.3}",
        report.label(),
        report.lpml,
        report.waic,
        report.dic,
        report.rmse
    );
    if let Some(r) = report.max_rhat {
        if r > 1.1 {
            log::warn!("max split R-hat {r:.3} exceeds 1.1");
            if strict {
                return Err(CliError::NotConverged(r));
            }
        }
    }
    Ok(FitOutcome { dir, report })
}

/// `report.json` files under `<out>/fit-*`, in name order.
pub fn discover_reports(out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(out).map_err(|e| CliError::io(out, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("fit-"))
        .map(|e| e.path().join("report.json"))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    Ok(found)
}

/// Builds the comparison table from fit reports and writes
/// `<out>/compare/{compare.csv, compare.json}`.
pub fn cmd_compare(cfg: &RunConfig, reports: &[PathBuf]) -> Result<CompareTable, CliError> {
    if reports.len() < 2 {
        return Err(CliError::Config(format!(
            "compare needs at least two fit reports, got {}",
            reports.len()
        )));
    }
    let mut out = ArtifactDir::create(cfg.paths.out.join("compare"))?;
    let mut parsed = Vec::with_capacity(reports.len());
    for p in reports {
        let bytes = read(p)?;
        out.input(p.display().to_string(), sha256_hex(&bytes));
        let r: FitReport = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("{}: not a fit report: {e}", p.display())))?;
        parsed.push(r);
    }
    let table = compare(&parsed)?;
    out.write_with("compare.csv", |b| table.write_csv(b))?;
    out.write_json("compare.json", &table)?;
    out.finish("compare", cfg)?;
    Ok(table)
}

/// Predictive curves for the held-out servers, written to
/// `<out>/predict-<label>/curves.csv`. An empty test set gives a header-only
/// file.
pub fn cmd_predict(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let draws = load_draws(&cfg.fit_dir())?;
    let train = load_dataset(&cfg.data_dir(), "train")?;
    check_same_data(&draws, &train)?;
    let test = load_dataset(&cfg.data_dir(), "test")?;
    let grid = default_grid(&draws, cfg.report.grid_step);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.report.seed);
    let curves = predict_new_server(&draws, &test, &grid, &mut rng)?;

    let mut out = ArtifactDir::create(cfg.paths.out.join(format!("predict-{}", cfg.model.label())))?;
    out.input("train", draws.dataset_hash.clone());
    out.input("test", test.content_hash());
    out.write_with("curves.csv", |b| write_curves_csv(&curves, b))?;
    out.finish("predict", cfg)
}

/// Draws of the same variant with the court effect toggled, when they were
/// fitted to the same training set.
fn companion_draws(cfg: &RunConfig, draws: &PosteriorDraws) -> Option<PosteriorDraws> {
    let mut other = cfg.clone();
    other.model.court_effect = !cfg.model.court_effect;
    let dir = other.fit_dir();
    let d = load_draws(&dir).ok()?;
    if d.dataset_hash != draws.dataset_hash || d.players != draws.players {
        log::warn!("ignoring {}: fitted to a different dataset", dir.display());
        return None;
    }
    Some(d)
}

/// In-sample curves, the serve-advantage scatter, ability rankings and, when
/// both the plain and the court fit exist, the per-court ability table.
pub fn cmd_report(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let draws = load_draws(&cfg.fit_dir())?;
    let train = load_dataset(&cfg.data_dir(), "train")?;
    check_same_data(&draws, &train)?;

    let grid = default_grid(&draws, cfg.report.grid_step);
    let players: Vec<String> = if cfg.report.players.is_empty() {
        draws.servers.iter().map(|&j| draws.players[j].clone()).collect()
    } else {
        cfg.report.players.clone()
    };
    let curves = players
        .iter()
        .map(|p| curve_summary(&draws, p, &grid, None))
        .collect::<servecurve::Result<Vec<_>>>()?;

    let mut out = ArtifactDir::create(cfg.paths.out.join(format!("report-{}", cfg.model.label())))?;
    out.input("train", draws.dataset_hash.clone());
    out.write_with("curves.csv", |b| write_curves_csv(&curves, b))?;
    let sc = scatter(&draws, cfg.report.significant_only)?;
    out.write_with("scatter.csv", |b| write_scatter_csv(&sc, b))?;
    let rank = rank_rally_ability(&draws, None)?;
    out.write_with("ranking.csv", |b| write_ranking_csv(&rank, b))?;
    if draws.model.court_effect {
        for c in Court::ALL {
            let r = rank_rally_ability(&draws, Some(c))?;
            let name = format!("ranking-{}.csv", format!("{c:?}").to_lowercase());
            out.write_with(&name, |b| write_ranking_csv(&r, b))?;
        }
    }
    let companion = companion_draws(cfg, &draws);
    let (baseline, courts) = match (&companion, draws.model.court_effect) {
        (Some(c), true) => (Some(c), Some(&draws)),
        (Some(c), false) => (Some(&draws), Some(c)),
        (None, false) => (Some(&draws), None),
        (None, true) => (None, None),
    };
    if let Some(b) = baseline {
        let table = ability_table(b, courts)?;
        out.write_with("ability.csv", |buf| write_ability_csv(&table, buf))?;
    }
    out.finish("report", cfg)
}
