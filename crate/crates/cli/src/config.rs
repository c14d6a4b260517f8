//! Run configuration: preset defaults, overlaid by a TOML file, overlaid by flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use jenn_core::dataset::PerturbationMode;
use jenn_core::experiment::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const OUT_DIR_ENV: &str = "JENN_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// n = 40, widths 256/256, 80,000 pairs
    Paper,
    /// n = 8, widths 64/64, 4,000 training pairs
    Desk,
}

impl Preset {
    pub fn base(self) -> ExperimentConfig {
        match self {
            Preset::Paper => ExperimentConfig::default(),
            Preset::Desk => ExperimentConfig::desk(),
        }
    }
}

/// Everything a command needs: the experiment plus file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Flags shared by every command that builds a configuration.
#[derive(Debug, Clone, Args, Default)]
pub struct ModelArgs {
    /// TOML run configuration; flags override it
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base defaults before the config file is applied
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub forcing: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_name = "TIME")]
    pub spinup_time: Option<f64>,
    #[arg(long, value_name = "TIME")]
    pub sample_time: Option<f64>,
    /// Trajectory seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of phase-2 sensitivity records
    #[arg(long)]
    pub sens_count: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub perturbation: Option<PerturbationMode>,
    #[arg(long)]
    pub rel_scale: Option<f64>,
    #[arg(long)]
    pub sens_seed: Option<u64>,
    #[arg(long)]
    pub eval_seed: Option<u64>,
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    /// Directory with a previously generated trajectory.l96
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output directory [default: $JENN_OUT_DIR]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<PerturbationMode, String> {
    s.parse().map_err(|e: jenn_core::Error| e.to_string())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ModelArgs {
    /// Preset, then config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, UsageError> {
        let mut file_table = match &self.config {
            Some(path) => read_table(path)?,
            None => toml::Table::new(),
        };
        let preset = match (self.preset, file_table.remove("preset")) {
            (Some(p), _) => p,
            (None, Some(v)) => v
                .try_into()
                .map_err(|e| UsageError(format!("config preset: {e}")))?,
            (None, None) => Preset::Paper,
        };
        let base = RunConfig {
            experiment: preset.base(),
            data_dir: None,
            out_dir: None,
        };
        let mut table = match toml::Value::try_from(&base).map_err(|e| UsageError(e.to_string()))? {
            toml::Value::Table(t) => t,
            _ => unreachable!("a struct serialises to a table"),
        };
        merge(&mut table, file_table);
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| UsageError(format!("invalid configuration: {e}")))?;

        let e = &mut cfg.experiment;
        if let Some(v) = self.n {
            e.model.n = v;
        }
        if let Some(v) = self.forcing {
            e.model.forcing = v;
        }
        if let Some(v) = self.dt {
            e.model.dt = v;
        }
        if let Some(v) = self.spinup_time {
            e.spinup_time = v;
        }
        if let Some(v) = self.sample_time {
            e.sample_time = v;
        }
        if let Some(v) = self.seed {
            e.seeds.data = v;
        }
        if let Some(v) = self.sens_count {
            e.sensitivity_count = v;
        }
        if let Some(v) = self.perturbation {
            e.perturbation = v;
        }
        if let Some(v) = self.rel_scale {
            e.rel_scale = v;
        }
        if let Some(v) = self.sens_seed {
            e.seeds.sensitivity = v;
        }
        if let Some(v) = self.eval_seed {
            e.seeds.eval = v;
        }
        if let Some(v) = self.holdout_fraction {
            e.holdout_fraction = v;
        }
        if self.data.is_some() {
            cfg.data_dir = self.data.clone();
        }
        if self.out.is_some() {
            cfg.out_dir = self.out.clone();
        }
        if cfg.out_dir.is_none() {
            cfg.out_dir = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        }
        Ok(cfg)
    }
}

fn read_table(path: &Path) -> Result<toml::Table, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| UsageError(format!("config {}: {e}", path.display())))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), UsageError> {
        self.experiment.validate().map_err(|e| UsageError(e.to_string()))?;
        if let (Some(d), Some(o)) = (&self.data_dir, &self.out_dir) {
            if d == o {
                return Err(UsageError(format!(
                    "data and output directories must differ ({})",
                    d.display()
                )));
            }
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path, UsageError> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| UsageError(format!("missing --out (or set {OUT_DIR_ENV})")))
    }
}
