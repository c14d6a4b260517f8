//! Two-phase training: forecast-only L-BFGS, then L-BFGS on the weighted sum
//! of forecast, tangent linear and adjoint losses starting from the phase-1
//! weights. Also the held-out evaluation used to compare the two.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{SensitivitySet, TrajectoryDataset};
use crate::emulator::loss::{self, ForecastBatch};
use crate::emulator::{init_params, Emulator, MlpArchitecture, MlpParams};
use crate::error::{Error, Result};
use crate::lorenz96;
use crate::optimizer::{minimize, LbfgsConfig, OptimizeReport};
use crate::state::{rmse, StateVector};

const SUBSET_SALT: u64 = 0x5b5e_7a11_0000_0001;

/// Weights of the forecast, tangent linear and adjoint terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub const FORECAST_ONLY: LossWeights = LossWeights {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be nonnegative, got {w:?}")));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// The forecast batch both phases train on: `subset_size` pairs drawn with a
/// seed derived from `seed`, or every pair when the trajectory is not larger.
pub fn forecast_subset(traj: &TrajectoryDataset, subset_size: usize, seed: u64) -> Result<ForecastBatch> {
    if traj.is_empty() {
        return Err(Error::EmptyBatch("training trajectory"));
    }
    if subset_size == 0 {
        return Err(Error::Config("subset size must be positive".into()));
    }
    if subset_size >= traj.len() {
        return traj.full_batch();
    }
    let indices = traj.sample_indices(subset_size, seed ^ SUBSET_SALT)?;
    traj.forecast_batch(&indices)
}

/// Phase 1: minimise the forecast RMSE from `init_params(arch, seed)`.
pub fn train_phase1(
    arch: &MlpArchitecture,
    traj: &TrajectoryDataset,
    lbfgs: &LbfgsConfig,
    subset_size: usize,
    seed: u64,
) -> Result<(MlpParams, OptimizeReport)> {
    let batch = forecast_subset(traj, subset_size, seed)?;
    let params0 = init_params(arch, seed)?;
    train_forecast(params0, &batch, lbfgs)
}

/// Forecast-only L-BFGS from given parameters.
pub fn train_forecast(
    params0: MlpParams,
    batch: &ForecastBatch,
    lbfgs: &LbfgsConfig,
) -> Result<(MlpParams, OptimizeReport)> {
    let arch = params0.architecture().clone();
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let p = MlpParams::from_flat(arch.clone(), theta.to_vec())?;
        let lg = loss::grad_forecast_loss(&p, batch)?;
        Ok((lg.loss, lg.grad))
    };
    let (theta, report) = minimize(objective, params0.into_flat(), lbfgs)?;
    Ok((MlpParams::from_flat(arch, theta)?, report))
}

/// Phase-2 objective value and its three terms.
pub fn total_loss(
    params: &MlpParams,
    forecast: &ForecastBatch,
    sens: &SensitivitySet,
    weights: &LossWeights,
) -> Result<loss::TotalLossGradient> {
    loss::grad_total_loss(
        params,
        forecast,
        &sens.tangent_batch()?,
        &sens.adjoint_batch()?,
        weights,
    )
}

/// Phase 2: minimise `alpha L_forecast + beta L_tlm + gamma L_adj` from `params0`.
///
/// `forecast` should be the phase-1 batch; the sensitivity records stay fixed
/// for the whole phase.
pub fn train_phase2(
    params0: &MlpParams,
    forecast: &ForecastBatch,
    sens: &SensitivitySet,
    weights: &LossWeights,
    lbfgs: &LbfgsConfig,
) -> Result<(MlpParams, OptimizeReport)> {
    weights.validate()?;
    if sens.config.n != params0.architecture().input_dim {
        return Err(Error::Shape {
            context: "sensitivity set dimension",
            expected: params0.architecture().input_dim,
            got: sens.config.n,
        });
    }
    let tangent = sens.tangent_batch()?;
    let adjoint = sens.adjoint_batch()?;
    let arch = params0.architecture().clone();
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let p = MlpParams::from_flat(arch.clone(), theta.to_vec())?;
        let t = loss::grad_total_loss(&p, forecast, &tangent, &adjoint, weights)?;
        Ok((t.loss, t.grad))
    };
    let (theta, report) = minimize(objective, params0.flat().to_vec(), lbfgs)?;
    Ok((MlpParams::from_flat(arch, theta)?, report))
}

/// Held-out error metrics of one emulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean per-sample RMSE of the one-step forecast.
    pub forecast_rmse: f64,
    /// Mean per-sample RMSE of the tangent linear response.
    pub tlm_rmse: f64,
    /// Mean per-sample RMSE of the adjoint response.
    pub adj_rmse: f64,
    /// Mean of `||J_emulator - J_true||_F / n` over the evaluation states.
    pub jacobian_frob_rmse: f64,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 4] = ["forecast_rmse", "tlm_rmse", "adj_rmse", "jacobian_frob_rmse"];

    pub fn values(&self) -> [f64; 4] {
        [self.forecast_rmse, self.tlm_rmse, self.adj_rmse, self.jacobian_frob_rmse]
    }
}

fn ordered_mean(values: Vec<f64>) -> f64 {
    let n = values.len() as f64;
    values.into_iter().sum::<f64>() / n
}

/// `||J_emulator(x) - J_true(x)||_F / n`
pub fn jacobian_frob_rmse(emulator: &dyn Emulator, cfg: &lorenz96::Lorenz96Config, x: &[f64]) -> Result<f64> {
    let j = emulator.jacobian(x)?;
    let truth = lorenz96::reference_jacobian(cfg, x)?;
    Ok(j.sub(&truth)?.frobenius_norm() / cfg.n as f64)
}

/// Error metrics of `emulator` on held-out pairs, held-out sensitivity
/// records, and the given Jacobian evaluation states.
pub fn evaluate(
    emulator: &dyn Emulator,
    holdout: &TrajectoryDataset,
    sens_holdout: &SensitivitySet,
    jacobian_states: &[StateVector],
) -> Result<MetricsReport> {
    if holdout.is_empty() || sens_holdout.is_empty() || jacobian_states.is_empty() {
        return Err(Error::EmptyBatch("evaluate"));
    }
    let cfg = holdout.config;
    let forecast: Vec<f64> = holdout
        .pairs
        .par_iter()
        .map(|(x, y)| Ok(rmse(&emulator.predict(x)?, y)))
        .collect::<Result<_>>()?;
    let tlm: Vec<f64> = sens_holdout
        .records
        .par_iter()
        .map(|r| Ok(rmse(&emulator.tangent(&r.x, &r.dx)?, &r.dy_true)))
        .collect::<Result<_>>()?;
    let adj: Vec<f64> = sens_holdout
        .records
        .par_iter()
        .map(|r| Ok(rmse(&emulator.adjoint(&r.x, &r.yhat)?, &r.xhat_true)))
        .collect::<Result<_>>()?;
    let jac: Vec<f64> = jacobian_states
        .par_iter()
        .map(|x| jacobian_frob_rmse(emulator, &cfg, x))
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        forecast_rmse: ordered_mean(forecast),
        tlm_rmse: ordered_mean(tlm),
        adj_rmse: ordered_mean(adj),
        jacobian_frob_rmse: ordered_mean(jac),
    })
}

/// Seeded choice of `count` input states from `traj`.
pub fn evaluation_states(traj: &TrajectoryDataset, count: usize, seed: u64) -> Result<Vec<StateVector>> {
    let idx = traj.sample_indices(count.min(traj.len()), seed)?;
    Ok(idx.into_iter().map(|i| traj.pairs[i].0.clone()).collect())
}
