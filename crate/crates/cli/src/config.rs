use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use servecurve::data::{SchemaConfig, Tour, MAX_RALLY};
use servecurve::{ChainConfig, ModelConfig, SplineSpec, Variant};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Point-by-point CSV read by `ingest`.
    pub input: Option<PathBuf>,
    /// Root of every artifact; `--out` overrides it.
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            input: None,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataOptions {
    /// Keep one tour only; `None` keeps every row.
    pub tour: Option<Tour>,
    pub min_matches: usize,
    pub max_rally: u32,
    pub test_servers: usize,
    pub split_seed: u64,
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            tour: None,
            min_matches: 3,
            max_rally: MAX_RALLY,
            test_servers: 50,
            split_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    pub variant: Variant,
    pub court_effect: bool,
    /// Knots, order and `l0`; validated on load.
    pub spline: SplineSpec,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            variant: Variant::Partial,
            court_effect: false,
            spline: SplineSpec::tennis_default(),
        }
    }
}

impl ModelOptions {
    pub fn model(&self) -> ModelConfig {
        ModelConfig::new(self.spline.clone(), self.variant, self.court_effect)
    }

    /// Directory name of the fit for these options.
    pub fn label(&self) -> String {
        let mut s = self.variant.name().to_string();
        if self.court_effect {
            s.push_str("-court");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    /// Spacing of the curve grid over the spline domain.
    pub grid_step: f64,
    /// Players to draw curves for; empty means every server.
    pub players: Vec<String>,
    pub significant_only: bool,
    /// Seed of the predictive draws for held-out servers.
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            grid_step: 0.1,
            players: Vec::new(),
            significant_only: false,
            seed: 1,
        }
    }
}

/// Everything a run needs, loaded from one JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub schema: SchemaConfig,
    pub data: DataOptions,
    pub model: ModelOptions,
    pub chain: ChainConfig,
    pub report: ReportOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.data.min_matches == 0 {
            return Err(CliError::Config("min_matches must be at least 1".into()));
        }
        if !(self.report.grid_step > 0.0 && self.report.grid_step.is_finite()) {
            return Err(CliError::Config("grid_step must be positive".into()));
        }
        self.chain.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    /// Ingest additionally needs a readable input file.
    pub fn input(&self) -> Result<&Path, CliError> {
        let p = self
            .paths
            .input
            .as_deref()
            .ok_or_else(|| CliError::Config("paths.input is not set".into()))?;
        if !p.is_file() {
            return Err(CliError::Config(format!("input {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.paths.out.join("data")
    }

    pub fn fit_dir(&self) -> PathBuf {
        self.paths.out.join(format!("fit-{}", self.model.label()))
    }
}
