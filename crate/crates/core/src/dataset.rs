//! Training data: trajectory pairs `(x(t), x(t + dt))` and tangent linear /
//! adjoint sensitivity records, with their on-disk container format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::emulator::loss::{AdjointBatch, ForecastBatch, TangentBatch};
use crate::error::{Error, Result};
use crate::lorenz96::{self, Lorenz96Config};
use crate::state::StateVector;

pub const SCHEMA_VERSION: u32 = 1;
/// Offset added to component 0 of the equilibrium to start the spin-up.
pub const SPINUP_KICK: f64 = 1e-3;

/// Number of `dt` steps covering `time`, which must be a whole multiple of `dt`.
pub fn steps_for(time: f64, dt: f64) -> Result<usize> {
    if !(time > 0.0 && time.is_finite()) {
        return Err(Error::Config(format!("integration time must be positive, got {time}")));
    }
    let steps = (time / dt).round();
    if (steps * dt - time).abs() > 1e-9 * time.max(1.0) {
        return Err(Error::Config(format!(
            "time {time} is not a multiple of dt {dt}"
        )));
    }
    Ok(steps as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub config: Lorenz96Config,
    /// `(x_t, x_next)` with `x_next = step_rk4(x_t)`.
    pub pairs: Vec<(StateVector, StateVector)>,
    /// Recorded for provenance; the trajectory itself starts from a fixed state.
    pub seed: u64,
    pub spinup_steps: usize,
    pub sample_steps: usize,
    /// Index of the first pair within the sampled segment (non-zero after a split).
    pub start_step: usize,
}

/// Spins up from the perturbed equilibrium, then records consecutive pairs.
pub fn generate_trajectory(
    cfg: &Lorenz96Config,
    spinup_time: f64,
    sample_time: f64,
    seed: u64,
) -> Result<TrajectoryDataset> {
    cfg.validate()?;
    let spinup_steps = steps_for(spinup_time, cfg.dt)?;
    let sample_steps = steps_for(sample_time, cfg.dt)?;
    let mut x = cfg.equilibrium();
    x[0] += SPINUP_KICK;
    x = lorenz96::integrate(cfg, &x, spinup_steps)?;
    let mut pairs = Vec::with_capacity(sample_steps);
    for _ in 0..sample_steps {
        let next = lorenz96::step_rk4(cfg, &x)?;
        pairs.push((x, next.clone()));
        x = next;
    }
    Ok(TrajectoryDataset {
        config: *cfg,
        pairs,
        seed,
        spinup_steps,
        sample_steps,
        start_step: 0,
    })
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Splits off the final `fraction` of pairs as a holdout set.
    pub fn split_holdout(&self, fraction: f64) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
        if !(0.0 < fraction && fraction < 1.0) {
            return Err(Error::Config(format!("holdout fraction must be in (0, 1), got {fraction}")));
        }
        let held = ((self.len() as f64) * fraction).round() as usize;
        let cut = self.len() - held;
        if cut == 0 || held == 0 {
            return Err(Error::Config("trajectory too short to split".into()));
        }
        let part = |range: std::ops::Range<usize>| TrajectoryDataset {
            config: self.config,
            pairs: self.pairs[range.clone()].to_vec(),
            seed: self.seed,
            spinup_steps: self.spinup_steps,
            sample_steps: range.len(),
            start_step: self.start_step + range.start,
        };
        Ok((part(0..cut), part(cut..self.len())))
    }

    /// Seeded uniform sample of `count` pair indices without replacement.
    pub fn sample_indices(&self, count: usize, seed: u64) -> Result<Vec<usize>> {
        if count > self.len() {
            return Err(Error::Config(format!(
                "requested {count} samples from {} pairs",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(index::sample(&mut rng, self.len(), count).into_vec())
    }

    pub fn forecast_batch(&self, indices: &[usize]) -> Result<ForecastBatch> {
        ForecastBatch::from_pairs(
            self.config.n,
            indices.iter().map(|&i| (self.pairs[i].0.as_slice(), self.pairs[i].1.as_slice())),
        )
    }

    pub fn full_batch(&self) -> Result<ForecastBatch> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.forecast_batch(&all)
    }

    /// Time mean of every component over the stored inputs.
    pub fn component_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.config.n];
        for (x, _) in &self.pairs {
            for (mi, xi) in m.iter_mut().zip(x.iter()) {
                *mi += xi;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.len() as f64);
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// Every component perturbed by `±rel_scale |x_i|`.
    DenseProportional,
    /// One random site perturbed by `±rel_scale |x_site|`.
    SparseSite,
}

impl fmt::Display for PerturbationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerturbationMode::DenseProportional => "dense_proportional",
            PerturbationMode::SparseSite => "sparse_site",
        })
    }
}

impl FromStr for PerturbationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense_proportional" | "dense" => Ok(PerturbationMode::DenseProportional),
            "sparse_site" | "sparse" => Ok(PerturbationMode::SparseSite),
            other => Err(Error::Config(format!("unknown perturbation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRecord {
    pub x: StateVector,
    pub dx: StateVector,
    /// `step_tlm(x, dx)`
    pub dy_true: StateVector,
    pub yhat: StateVector,
    /// `step_adj(x, yhat)`
    pub xhat_true: StateVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySet {
    pub config: Lorenz96Config,
    pub records: Vec<SensitivityRecord>,
    pub mode: PerturbationMode,
    pub rel_scale: f64,
    pub seed: u64,
    /// Index of each record's state in the source trajectory.
    pub source_indices: Vec<usize>,
}

fn draw_perturbation(rng: &mut ChaCha8Rng, x: &[f64], mode: PerturbationMode, rel_scale: f64) -> StateVector {
    let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    match mode {
        PerturbationMode::DenseProportional => {
            StateVector::new(x.iter().map(|xi| sign(rng) * rel_scale * xi.abs()).collect())
        }
        PerturbationMode::SparseSite => {
            let mut v = StateVector::zeros(x.len());
            let site = rng.random_range(0..x.len());
            v[site] = sign(rng) * rel_scale * x[site].abs();
            v
        }
    }
}

/// Samples `count` trajectory states and attaches physics tangent linear and
/// adjoint labels to seeded random perturbations of each.
pub fn generate_sensitivity_set(
    traj: &TrajectoryDataset,
    count: usize,
    mode: PerturbationMode,
    rel_scale: f64,
    seed: u64,
) -> Result<SensitivitySet> {
    if !(rel_scale > 0.0 && rel_scale.is_finite()) {
        return Err(Error::Config(format!("rel_scale must be positive, got {rel_scale}")));
    }
    let indices = traj.sample_indices(count, seed)?;
    // Indices and perturbations come from one stream; labels are pure and computed in parallel.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let draws: Vec<(usize, StateVector, StateVector)> = indices
        .iter()
        .map(|&i| {
            let x = &traj.pairs[i].0;
            let dx = draw_perturbation(&mut rng, x, mode, rel_scale);
            let yhat = draw_perturbation(&mut rng, x, mode, rel_scale);
            (i, dx, yhat)
        })
        .collect();
    let cfg = traj.config;
    let records = draws
        .into_par_iter()
        .map(|(i, dx, yhat)| {
            let x = traj.pairs[i].0.clone();
            let dy_true = lorenz96::step_tlm(&cfg, &x, &dx)?;
            let xhat_true = lorenz96::step_adj(&cfg, &x, &yhat)?;
            Ok(SensitivityRecord {
                x,
                dx,
                dy_true,
                yhat,
                xhat_true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivitySet {
        config: cfg,
        records,
        mode,
        rel_scale,
        seed,
        source_indices: indices,
    })
}

impl SensitivitySet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tangent_batch(&self) -> Result<TangentBatch> {
        TangentBatch::from_triples(
            self.config.n,
            self.records
                .iter()
                .map(|r| (r.x.as_slice(), r.dx.as_slice(), r.dy_true.as_slice())),
        )
    }

    pub fn adjoint_batch(&self) -> Result<AdjointBatch> {
        AdjointBatch::from_triples(
            self.config.n,
            self.records
                .iter()
                .map(|r| (r.x.as_slice(), r.yhat.as_slice(), r.xhat_true.as_slice())),
        )
    }

    /// The first `count` records.
    pub fn truncated(&self, count: usize) -> SensitivitySet {
        let count = count.min(self.len());
        SensitivitySet {
            records: self.records[..count].to_vec(),
            source_indices: self.source_indices[..count].to_vec(),
            ..self.clone()
        }
    }
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DatasetManifest {
    Trajectory {
        schema_version: u32,
        n: usize,
        forcing: f64,
        dt: f64,
        seed: u64,
        spinup_steps: usize,
        sample_steps: usize,
        start_step: usize,
        pair_count: usize,
    },
    Sensitivity {
        schema_version: u32,
        n: usize,
        forcing: f64,
        dt: f64,
        seed: u64,
        mode: PerturbationMode,
        rel_scale: f64,
        record_count: usize,
    },
}

/// Either kind of dataset, as found in a container file.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Trajectory(TrajectoryDataset),
    Sensitivity(SensitivitySet),
}

impl From<TrajectoryDataset> for Dataset {
    fn from(d: TrajectoryDataset) -> Self {
        Dataset::Trajectory(d)
    }
}

impl From<SensitivitySet> for Dataset {
    fn from(d: SensitivitySet) -> Self {
        Dataset::Sensitivity(d)
    }
}

fn push_rows<'a>(payload: &mut Vec<f64>, rows: impl Iterator<Item = &'a StateVector>) {
    for r in rows {
        payload.extend_from_slice(r);
    }
}

fn encode_dataset(data: &Dataset) -> Result<(String, Vec<f64>)> {
    let (manifest, payload) = match data {
        Dataset::Trajectory(t) => {
            let m = DatasetManifest::Trajectory {
                schema_version: SCHEMA_VERSION,
                n: t.config.n,
                forcing: t.config.forcing,
                dt: t.config.dt,
                seed: t.seed,
                spinup_steps: t.spinup_steps,
                sample_steps: t.sample_steps,
                start_step: t.start_step,
                pair_count: t.len(),
            };
            let mut p = Vec::with_capacity(2 * t.len() * t.config.n);
            push_rows(&mut p, t.pairs.iter().map(|(x, _)| x));
            push_rows(&mut p, t.pairs.iter().map(|(_, y)| y));
            (m, p)
        }
        Dataset::Sensitivity(s) => {
            let m = DatasetManifest::Sensitivity {
                schema_version: SCHEMA_VERSION,
                n: s.config.n,
                forcing: s.config.forcing,
                dt: s.config.dt,
                seed: s.seed,
                mode: s.mode,
                rel_scale: s.rel_scale,
                record_count: s.len(),
            };
            let mut p = Vec::with_capacity((5 * s.config.n + 1) * s.len());
            push_rows(&mut p, s.records.iter().map(|r| &r.x));
            push_rows(&mut p, s.records.iter().map(|r| &r.dx));
            push_rows(&mut p, s.records.iter().map(|r| &r.dy_true));
            push_rows(&mut p, s.records.iter().map(|r| &r.yhat));
            push_rows(&mut p, s.records.iter().map(|r| &r.xhat_true));
            p.extend(s.source_indices.iter().map(|&i| i as f64));
            (m, p)
        }
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Config(format!("cannot serialise manifest: {e}")))?;
    Ok((text, payload))
}

fn decode_dataset(path: &Path, manifest: &str, payload: Vec<f64>) -> Result<Dataset> {
    let m: DatasetManifest =
        toml::from_str(manifest).map_err(|e| Error::format(path, format!("manifest: {e}")))?;
    let check_schema = |v: u32| {
        if v == SCHEMA_VERSION {
            Ok(())
        } else {
            Err(Error::Version {
                path: path.into(),
                found: v,
                expected: SCHEMA_VERSION,
            })
        }
    };
    let check_payload = |expected: usize| {
        if payload.len() == expected {
            Ok(())
        } else {
            Err(Error::format(
                path,
                format!(
                    "manifest implies {expected} payload values, found {}",
                    payload.len()
                ),
            ))
        }
    };
    let rows = |block: usize, n: usize, count: usize| -> Vec<StateVector> {
        (0..count)
            .map(|i| {
                let start = (block * count + i) * n;
                StateVector::new(payload[start..start + n].to_vec())
            })
            .collect()
    };
    match m {
        DatasetManifest::Trajectory {
            schema_version,
            n,
            forcing,
            dt,
            seed,
            spinup_steps,
            sample_steps,
            start_step,
            pair_count,
        } => {
            check_schema(schema_version)?;
            let config = Lorenz96Config::new(n, forcing, dt)?;
            if sample_steps != pair_count {
                return Err(Error::format(
                    path,
                    format!("sample_steps {sample_steps} disagrees with pair_count {pair_count}"),
                ));
            }
            check_payload(2 * pair_count * n)?;
            let xs = rows(0, n, pair_count);
            let ys = rows(1, n, pair_count);
            Ok(Dataset::Trajectory(TrajectoryDataset {
                config,
                pairs: xs.into_iter().zip(ys).collect(),
                seed,
                spinup_steps,
                sample_steps,
                start_step,
            }))
        }
        DatasetManifest::Sensitivity {
            schema_version,
            n,
            forcing,
            dt,
            seed,
            mode,
            rel_scale,
            record_count,
        } => {
            check_schema(schema_version)?;
            let config = Lorenz96Config::new(n, forcing, dt)?;
            check_payload((5 * n + 1) * record_count)?;
            let blocks: Vec<Vec<StateVector>> = (0..5).map(|b| rows(b, n, record_count)).collect();
            let mut it = blocks.into_iter();
            let (x, dx, dy, yh, xh) = (
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
            );
            let records = x
                .into_iter()
                .zip(dx)
                .zip(dy)
                .zip(yh)
                .zip(xh)
                .map(|((((x, dx), dy_true), yhat), xhat_true)| SensitivityRecord {
                    x,
                    dx,
                    dy_true,
                    yhat,
                    xhat_true,
                })
                .collect();
            let source_indices = payload[5 * n * record_count..]
                .iter()
                .map(|&v| v as usize)
                .collect();
            Ok(Dataset::Sensitivity(SensitivitySet {
                config,
                records,
                mode,
                rel_scale,
                seed,
                source_indices,
            }))
        }
    }
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let (manifest, payload) = encode_dataset(data)?;
    container::write(path, &manifest, &payload)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (manifest, payload) = container::read(path)?;
    decode_dataset(path, &manifest, payload)
}

pub fn load_trajectory(path: &Path) -> Result<TrajectoryDataset> {
    match load_dataset(path)? {
        Dataset::Trajectory(t) => Ok(t),
        Dataset::Sensitivity(_) => Err(Error::format(path, "expected a trajectory dataset")),
    }
}

pub fn load_sensitivity(path: &Path) -> Result<SensitivitySet> {
    match load_dataset(path)? {
        Dataset::Sensitivity(s) => Ok(s),
        Dataset::Trajectory(_) => Err(Error::format(path, "expected a sensitivity dataset")),
    }
}

/// Stacks trajectory inputs row-wise.
pub fn stack_states(states: &[&StateVector], n: usize) -> Array2<f64> {
    let mut flat = Vec::with_capacity(states.len() * n);
    for s in states {
        flat.extend_from_slice(s);
    }
    Array2::from_shape_vec((states.len(), n), flat).expect("rows of length n")
}
