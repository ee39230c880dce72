//! Run configuration: a JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use multitreat::pipeline::PipelineConfig;
use multitreat::simulation::{Allocation, SimulationDesign, TruthMode};
use multitreat::{CsvSchema, Method};

use crate::args::{Cli, Command, DataArgs, FitArgs, Format, Truth};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub treatment: Option<String>,
    pub outcome: Option<String>,
    pub covariates: Vec<String>,
    pub intercept_column: Option<String>,
    pub levels: Option<Vec<String>>,
    pub delimiter: char,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            treatment: None,
            outcome: None,
            covariates: Vec::new(),
            intercept_column: None,
            levels: None,
            delimiter: ',',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Built-in design name or path to a JSON design.
    pub design: String,
    pub reps: usize,
    pub truth: TruthMode,
    /// Total sample size under multinomial allocation; quotas otherwise.
    pub multinomial: Option<usize>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            design: "design1".into(),
            reps: 1000,
            truth: TruthMode::default(),
            multinomial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub schema: SchemaConfig,
    /// Estimators, intervals, trimming and the seed.
    pub pipeline: PipelineConfig,
    pub simulation: SimulationConfig,
    pub workers: usize,
    pub bins: usize,
    pub format: Format,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            schema: SchemaConfig::default(),
            pipeline: PipelineConfig::default(),
            simulation: SimulationConfig::default(),
            workers: 0,
            bins: 10,
            format: Format::Both,
            output_dir: None,
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_methods(tags: &[String]) -> Result<Vec<Method>, CliError> {
    tags.iter().map(|t| t.parse::<Method>().map_err(CliError::from)).collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }

    /// Config file (if any) with every flag given on the command line applied.
    pub fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let mut cfg = match &cli.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        set(&mut cfg.workers, cli.workers);
        if cli.out.is_some() {
            cfg.output_dir = cli.out.clone();
        }
        match &cli.command {
            Command::Estimate(a) => {
                cfg.apply_data(&a.data);
                cfg.apply_fit(&a.fit);
                if let Some(m) = &a.methods {
                    cfg.pipeline.methods = parse_methods(m)?;
                }
                set(&mut cfg.pipeline.ci_level, a.ci_level);
                set(&mut cfg.pipeline.bootstrap_reps, a.bootstrap_reps);
                set(&mut cfg.pipeline.seed, a.seed);
                set(&mut cfg.pipeline.subclasses, a.subclasses);
                if a.clip.is_some() {
                    cfg.pipeline.weighting.clip = a.clip;
                }
                cfg.pipeline.gpsm_bootstrap |= a.gpsm_bootstrap;
                cfg.pipeline.trim |= a.trim.trim;
                if a.trim.no_refit {
                    cfg.pipeline.refit_after_trim = false;
                }
                set(&mut cfg.format, a.format);
            }
            Command::Trim(a) => {
                cfg.apply_data(&a.data);
                cfg.apply_fit(&a.fit);
                cfg.pipeline.trim = true;
                if a.no_refit {
                    cfg.pipeline.refit_after_trim = false;
                }
            }
            Command::Balance(a) => {
                cfg.apply_data(&a.data);
                cfg.apply_fit(&a.fit);
                cfg.pipeline.trim |= a.trim;
                if a.no_refit {
                    cfg.pipeline.refit_after_trim = false;
                }
                set(&mut cfg.bins, a.bins);
            }
            Command::Simulate(a) => {
                set(&mut cfg.simulation.design, a.design.clone());
                set(&mut cfg.simulation.reps, a.reps);
                set(&mut cfg.pipeline.seed, a.seed);
                set(&mut cfg.pipeline.bootstrap_reps, a.bootstrap_reps);
                if let Some(m) = &a.methods {
                    cfg.pipeline.methods = parse_methods(m)?;
                }
                if let Some(t) = a.truth {
                    cfg.simulation.truth = match t {
                        Truth::Superpopulation => TruthMode::Superpopulation,
                        Truth::ArmMixture => TruthMode::ArmMixture,
                        Truth::Sample => TruthMode::Sample,
                    };
                }
                if a.multinomial.is_some() {
                    cfg.simulation.multinomial = a.multinomial;
                }
                cfg.apply_fit(&a.fit);
                cfg.pipeline.gpsm_bootstrap |= a.gpsm_bootstrap;
            }
            Command::Generate(a) => {
                set(&mut cfg.simulation.design, a.design.clone());
                set(&mut cfg.pipeline.seed, a.seed);
                if a.multinomial.is_some() {
                    cfg.simulation.multinomial = a.multinomial;
                }
            }
        }
        Ok(cfg)
    }

    fn apply_data(&mut self, a: &DataArgs) {
        if a.input.is_some() {
            self.input = a.input.clone();
        }
        let s = &mut self.schema;
        if a.treatment.is_some() {
            s.treatment = a.treatment.clone();
        }
        if a.outcome.is_some() {
            s.outcome = a.outcome.clone();
        }
        set(&mut s.covariates, a.covariates.clone());
        if a.intercept_column.is_some() {
            s.intercept_column = a.intercept_column.clone();
        }
        if a.levels.is_some() {
            s.levels = a.levels.clone();
        }
        set(&mut s.delimiter, a.delimiter);
    }

    fn apply_fit(&mut self, a: &FitArgs) {
        set(&mut self.pipeline.fit.ridge, a.ridge);
        set(&mut self.pipeline.fit.max_iter, a.max_iter);
    }

    pub fn csv_schema(&self) -> Result<CsvSchema, CliError> {
        let s = &self.schema;
        let treatment = s.treatment.as_deref().ok_or_else(|| CliError::config("no treatment column given"))?;
        let outcome = s.outcome.as_deref().ok_or_else(|| CliError::config("no outcome column given"))?;
        if !s.delimiter.is_ascii() {
            return Err(CliError::config(format!("delimiter `{}` is not ASCII", s.delimiter)));
        }
        let covariates: Vec<&str> = s.covariates.iter().map(String::as_str).collect();
        let mut schema = CsvSchema::new(treatment, outcome, &covariates);
        schema.intercept_column = s.intercept_column.clone();
        schema.levels = s.levels.clone();
        schema.delimiter = s.delimiter as u8;
        Ok(schema)
    }

    pub fn input_path(&self) -> Result<&Path, CliError> {
        self.input.as_deref().ok_or_else(|| CliError::config("no input file given"))
    }

    pub fn design(&self) -> Result<SimulationDesign, CliError> {
        let name = &self.simulation.design;
        let mut design = if name.ends_with(".json") {
            let text = std::fs::read_to_string(name)
                .map_err(|e| CliError::config(format!("cannot read design {name}: {e}")))?;
            serde_json::from_str::<SimulationDesign>(&text)
                .map_err(|e| CliError::config(format!("design {name}: {e}")))?
        } else {
            SimulationDesign::by_name(name)?
        };
        if let Some(total) = self.simulation.multinomial {
            design.allocation = Allocation::Multinomial { total };
        }
        design.validate()?;
        Ok(design)
    }
}

/// The configuration as recorded in outputs: file locations are left out,
/// the input is identified by its digest instead.
pub fn echo(cfg: &RunConfig) -> RunConfig {
    RunConfig { input: None, output_dir: None, ..cfg.clone() }
}

/// Digest identifying a run: command, effective configuration, input file
/// contents and program version.
pub fn config_hash(command: &str, cfg: &RunConfig, input_sha256: Option<&str>) -> String {
    let echo = echo(cfg);
    let text = serde_json::json!({
        "command": command,
        "config": echo,
        "input_sha256": input_sha256,
        "version": env!("CARGO_PKG_VERSION"),
    })
    .to_string();
    hex(&Sha256::digest(text.as_bytes()))
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
