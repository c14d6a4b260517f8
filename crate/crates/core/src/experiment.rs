//! End-to-end JENN experiment: data, both training phases, evaluation of the
//! phase-1 (standard) and phase-2 (Jacobian-enforced) networks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_sensitivity_set, generate_trajectory, PerturbationMode, SensitivitySet, TrajectoryDataset};
use crate::emulator::{MlpArchitecture, MlpParams};
use crate::error::{Error, Result};
use crate::lorenz96::Lorenz96Config;
use crate::optimizer::{LbfgsConfig, OptimizeReport};
use crate::state::StateVector;
use crate::training::{evaluate, evaluation_states, forecast_subset, train_phase1, train_phase2, LossWeights, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    /// Recorded with the trajectory; the spin-up start itself is fixed.
    pub data: u64,
    /// Network initialisation and forecast subset.
    pub init: u64,
    pub sensitivity: u64,
    /// Held-out sensitivity records and Jacobian evaluation states.
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 0,
            init: 1,
            sensitivity: 2,
            eval: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: Lorenz96Config,
    pub hidden_dims: Vec<usize>,
    pub spinup_time: f64,
    pub sample_time: f64,
    /// Trailing fraction of the trajectory kept for evaluation.
    pub holdout_fraction: f64,
    pub subset_size: usize,
    pub sensitivity_count: usize,
    pub eval_sensitivity_count: usize,
    pub eval_jacobian_states: usize,
    pub perturbation: PerturbationMode,
    pub rel_scale: f64,
    pub weights: LossWeights,
    pub phase1: LbfgsConfig,
    pub phase2: LbfgsConfig,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: Lorenz96Config::default(),
            hidden_dims: vec![256, 256],
            spinup_time: 1000.0,
            sample_time: 1000.0,
            holdout_fraction: 0.1,
            subset_size: 8192,
            sensitivity_count: 2048,
            eval_sensitivity_count: 100,
            eval_jacobian_states: 20,
            perturbation: PerturbationMode::DenseProportional,
            rel_scale: 0.01,
            weights: LossWeights::default(),
            phase1: LbfgsConfig::default(),
            phase2: LbfgsConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl ExperimentConfig {
    /// n = 8, two hidden layers of 64, 4,000 training and 1,000 held-out pairs.
    pub fn desk() -> Self {
        ExperimentConfig {
            model: Lorenz96Config::new(8, 8.0, 0.0125).expect("valid"),
            hidden_dims: vec![64, 64],
            spinup_time: 100.0,
            sample_time: 62.5,
            holdout_fraction: 0.2,
            subset_size: 4000,
            sensitivity_count: 1024,
            ..Default::default()
        }
    }

    pub fn architecture(&self) -> MlpArchitecture {
        MlpArchitecture::state_map(self.model.n, self.hidden_dims.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.architecture().validate()?;
        self.weights.validate()?;
        self.phase1.validate()?;
        self.phase2.validate()?;
        if !(self.rel_scale.is_finite() && self.rel_scale > 0.0) {
            return Err(Error::Config(format!("rel_scale must be positive, got {}", self.rel_scale)));
        }
        for (name, v) in [
            ("subset_size", self.subset_size),
            ("sensitivity_count", self.sensitivity_count),
            ("eval_sensitivity_count", self.eval_sensitivity_count),
            ("eval_jacobian_states", self.eval_jacobian_states),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Everything the two phases and the evaluation consume.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: TrajectoryDataset,
    pub holdout: TrajectoryDataset,
    pub sens_train: SensitivitySet,
    pub sens_holdout: SensitivitySet,
    pub eval_states: Vec<StateVector>,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    cfg.validate()?;
    let traj = generate_trajectory(&cfg.model, cfg.spinup_time, cfg.sample_time, cfg.seeds.data)?;
    split_data(cfg, &traj)
}

/// Splits an existing trajectory and draws the sensitivity records.
pub fn split_data(cfg: &ExperimentConfig, traj: &TrajectoryDataset) -> Result<ExperimentData> {
    let (train, holdout) = traj.split_holdout(cfg.holdout_fraction)?;
    let sens_train = generate_sensitivity_set(
        &train,
        cfg.sensitivity_count.min(train.len()),
        cfg.perturbation,
        cfg.rel_scale,
        cfg.seeds.sensitivity,
    )?;
    let sens_holdout = generate_sensitivity_set(
        &holdout,
        cfg.eval_sensitivity_count.min(holdout.len()),
        cfg.perturbation,
        cfg.rel_scale,
        cfg.seeds.eval,
    )?;
    let eval_states = evaluation_states(&holdout, cfg.eval_jacobian_states, cfg.seeds.eval)?;
    Ok(ExperimentData {
        train,
        holdout,
        sens_train,
        sens_holdout,
        eval_states,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub nn: MlpParams,
    pub jenn: MlpParams,
    pub phase1: OptimizeReport,
    pub phase2: OptimizeReport,
    pub metrics_nn: MetricsReport,
    pub metrics_jenn: MetricsReport,
}

pub fn run_phase1(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<(MlpParams, OptimizeReport)> {
    train_phase1(&cfg.architecture(), &data.train, &cfg.phase1, cfg.subset_size, cfg.seeds.init)
}

pub fn run_phase2(cfg: &ExperimentConfig, data: &ExperimentData, nn: &MlpParams) -> Result<(MlpParams, OptimizeReport)> {
    let batch = forecast_subset(&data.train, cfg.subset_size, cfg.seeds.init)?;
    train_phase2(nn, &batch, &data.sens_train, &cfg.weights, &cfg.phase2)
}

pub fn run_experiment(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (nn, phase1) = run_phase1(cfg, data)?;
    let (jenn, phase2) = run_phase2(cfg, data, &nn)?;
    let metrics_nn = evaluate(&nn, &data.holdout, &data.sens_holdout, &data.eval_states)?;
    let metrics_jenn = evaluate(&jenn, &data.holdout, &data.sens_holdout, &data.eval_states)?;
    Ok(ExperimentOutcome {
        nn,
        jenn,
        phase1,
        phase2,
        metrics_nn,
        metrics_jenn,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub termination: String,
}

impl From<&OptimizeReport> for PhaseSummary {
    fn from(r: &OptimizeReport) -> Self {
        PhaseSummary {
            iterations: r.iterations,
            evaluations: r.evaluations,
            initial_loss: r.loss_history.first().copied().unwrap_or(r.final_loss),
            final_loss: r.final_loss,
            final_grad_norm: r.final_grad_norm,
            termination: r.termination.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub nn: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jenn: Option<f64>,
}

/// Run report: configuration, per-phase optimiser summaries and the metric
/// table, rendered as TOML. Floats print in shortest round-trip form so equal
/// runs give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub train_pairs: usize,
    pub holdout_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase1: Option<PhaseSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase2: Option<PhaseSummary>,
    /// Keyed by metric name.
    #[serde(default)]
    pub metrics: BTreeMap<String, MetricPair>,
    #[serde(default)]
    pub checkpoints: BTreeMap<String, String>,
}

impl RunReport {
    pub fn new(cfg: &ExperimentConfig, data: &ExperimentData) -> Self {
        RunReport {
            config: cfg.clone(),
            train_pairs: data.train.len(),
            holdout_pairs: data.holdout.len(),
            phase1: None,
            phase2: None,
            metrics: BTreeMap::new(),
            checkpoints: BTreeMap::new(),
        }
    }

    pub fn from_outcome(cfg: &ExperimentConfig, data: &ExperimentData, out: &ExperimentOutcome) -> Self {
        let mut r = RunReport::new(cfg, data);
        r.phase1 = Some((&out.phase1).into());
        r.phase2 = Some((&out.phase2).into());
        r.set_metrics(&out.metrics_nn, Some(&out.metrics_jenn));
        r
    }

    pub fn set_metrics(&mut self, nn: &MetricsReport, jenn: Option<&MetricsReport>) {
        for (k, name) in MetricsReport::NAMES.iter().enumerate() {
            let pair = MetricPair {
                nn: nn.values()[k],
                jenn: jenn.map(|m| m.values()[k]),
            };
            self.metrics.insert((*name).to_owned(), pair);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot render report: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("cannot parse report: {e}")))
    }
}
