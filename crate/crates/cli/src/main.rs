use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use servecurve::data::Tour;
use servecurve::Variant;
use servecurve_cli::{
    cmd_compare, cmd_fit, cmd_ingest, cmd_predict, cmd_report, discover_reports, CliError, RunConfig,
};

#[derive(Parser)]
#[command(name = "servecurve", version, about = "Serve-advantage curves for tennis point data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root (overrides paths.out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Fit the per-court ability model.
    #[arg(long, global = true)]
    court: bool,
    #[arg(long, global = true, value_parser = parse_tour)]
    tour: Option<Tour>,
    /// Split seed for ingest, chain seed for fit, predictive seed for predict.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit with code 7 when any split R-hat exceeds 1.1.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and aggregate the point CSV, then split train/test.
    Ingest,
    /// Run the sampler on the training set.
    Fit,
    /// Tabulate LPML, WAIC, DIC and RMSE across fits.
    Compare {
        /// Fit reports; defaults to every `fit-*/report.json` under the output root.
        reports: Vec<PathBuf>,
    },
    /// Predictive curves for the held-out servers.
    Predict,
    /// Curves, serve-advantage scatter and ability rankings.
    Report,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: servecurve::Error| e.to_string())
}

fn parse_tour(s: &str) -> Result<Tour, String> {
    Tour::parse(s).ok_or_else(|| format!("unknown tour `{s}` (expected atp or wta)"))
}

fn build_config(c: &Common, command: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &c.out {
        cfg.paths.out = o.clone();
    }
    if let Some(v) = c.variant {
        cfg.model.variant = v;
    }
    if c.court {
        cfg.model.court_effect = true;
    }
    if let Some(t) = c.tour {
        cfg.data.tour = Some(t);
    }
    if let Some(s) = c.seed {
        match command {
            Command::Ingest => cfg.data.split_seed = s,
            Command::Fit => cfg.chain.seed = s,
            Command::Predict => cfg.report.seed = s,
            Command::Compare { .. } | Command::Report => {}
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli.common, &cli.command)?;
    match cli.command {
        Command::Ingest => {
            let o = cmd_ingest(&cfg)?;
            println!("{}", o.dir.display());
        }
        Command::Fit => {
            let o = cmd_fit(&cfg, cli.common.strict)?;
            println!("{}", o.dir.display());
        }
        Command::Compare { reports } => {
            let reports = if reports.is_empty() {
                discover_reports(&cfg.paths.out)?
            } else {
                reports
            };
            let table = cmd_compare(&cfg, &reports)?;
            let mut stdout = std::io::stdout().lock();
            table.write_csv(&mut stdout)?;
        }
        Command::Predict => println!("{}", cmd_predict(&cfg)?.display()),
        Command::Report => println!("{}", cmd_report(&cfg)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
