#![allow(dead_code)]

use jenn_core::dataset::{generate_sensitivity_set, generate_trajectory, PerturbationMode};
use jenn_core::emulator::loss::{AdjointBatch, ForecastBatch, TangentBatch};
use jenn_core::emulator::{init_params, MlpArchitecture, MlpParams};
use jenn_core::lorenz96::Lorenz96Config;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Width-32 network at n = 8 with forecast, tangent and adjoint batches
/// drawn from a short attractor trajectory.
pub struct GradientCase {
    pub params: MlpParams,
    pub forecast: ForecastBatch,
    pub tangent: TangentBatch,
    pub adjoint: AdjointBatch,
}

pub fn gradient_case(samples: usize, seed: u64) -> GradientCase {
    let cfg = Lorenz96Config::new(8, 8.0, 0.0125).unwrap();
    let traj = generate_trajectory(&cfg, 20.0, 5.0, seed).unwrap();
    let idx = traj.sample_indices(samples, seed).unwrap();
    let forecast = traj.forecast_batch(&idx).unwrap();
    let sens = generate_sensitivity_set(&traj, samples, PerturbationMode::DenseProportional, 0.01, seed).unwrap();
    let params = init_params(&MlpArchitecture::state_map(8, vec![32, 32]), seed).unwrap();
    GradientCase {
        params,
        forecast,
        tangent: sens.tangent_batch().unwrap(),
        adjoint: sens.adjoint_batch().unwrap(),
    }
}

/// Central differences of `f` on `count` distinct seeded coordinates;
/// returns the coordinates and the estimates.
pub fn fd_coordinates(params: &MlpParams, count: usize, seed: u64, f: impl Fn(&MlpParams) -> f64) -> (Vec<usize>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = rand::seq::index::sample(&mut rng, params.len(), count).into_vec();
    coords.sort_unstable();
    let arch = params.architecture().clone();
    let fd = coords
        .iter()
        .map(|&k| {
            let mut plus = params.flat().to_vec();
            let mut minus = plus.clone();
            plus[k] += FD_STEP;
            minus[k] -= FD_STEP;
            let fp = f(&MlpParams::from_flat(arch.clone(), plus).unwrap());
            let fm = f(&MlpParams::from_flat(arch.clone(), minus).unwrap());
            (fp - fm) / (2.0 * FD_STEP)
        })
        .collect();
    (coords, fd)
}

/// `|a - b| / |b|` over the selected coordinates.
pub fn relative_error(grad: &[f64], coords: &[usize], fd: &[f64]) -> f64 {
    let num: f64 = coords.iter().zip(fd).map(|(&k, d)| (grad[k] - d).powi(2)).sum();
    let den: f64 = fd.iter().map(|d| d * d).sum();
    (num / den).sqrt()
}
