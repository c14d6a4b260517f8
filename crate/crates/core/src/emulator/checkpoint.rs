//! Emulator checkpoints: a TOML manifest next to a raw parameter payload.
//!
//! A checkpoint with stem `dir/phase1` consists of
//!
//! * `dir/phase1.toml`: manifest with `format_version`, `kind`, the
//!   architecture (`input_dim`, `hidden_dims`, `output_dim`, `activation`),
//!   `seed`, `phase`, the loss weights used, `param_count`, `payload_file`
//!   and `payload_crc32` (CRC-32/IEEE of the payload bytes);
//! * `dir/phase1.bin`: `param_count` little-endian IEEE-754 f64 values in the
//!   canonical flat parameter order, nothing else.
//!
//! A manifest of `kind = "physics"` carries a Lorenz 96 configuration and no
//! payload; loading it yields the physics model as a reference emulator.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Activation, Emulator, MlpArchitecture, MlpParams, PhysicsEmulator};
use crate::container::{f64s_to_le_bytes, le_bytes_to_f64s};
use crate::error::{Error, Result};
use crate::lorenz96::Lorenz96Config;
use crate::training::LossWeights;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Phase1,
    Phase2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointManifest {
    Mlp {
        format_version: u32,
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        seed: u64,
        phase: Phase,
        alpha: f64,
        beta: f64,
        gamma: f64,
        param_count: usize,
        payload_file: String,
        payload_crc32: u32,
    },
    Physics {
        format_version: u32,
        n: usize,
        forcing: f64,
        dt: f64,
    },
}

/// Paths of the manifest and payload for a checkpoint stem or manifest path.
pub fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = if path.extension().is_some_and(|e| e == "toml" || e == "bin") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    (stem.with_extension("toml"), stem.with_extension("bin"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `params` as a checkpoint, returning the manifest path.
pub fn save_checkpoint(
    path: &Path,
    params: &MlpParams,
    seed: u64,
    phase: Phase,
    weights: &LossWeights,
) -> Result<PathBuf> {
    let (manifest_path, payload_path) = checkpoint_paths(path);
    let payload = f64s_to_le_bytes(params.flat());
    let arch = params.architecture();
    let manifest = CheckpointManifest::Mlp {
        format_version: CHECKPOINT_VERSION,
        input_dim: arch.input_dim,
        hidden_dims: arch.hidden_dims.clone(),
        output_dim: arch.output_dim,
        activation: arch.hidden_activation,
        seed,
        phase,
        alpha: weights.alpha,
        beta: weights.beta,
        gamma: weights.gamma,
        param_count: params.len(),
        payload_file: payload_path
            .file_name()
            .expect("stem has a file name")
            .to_string_lossy()
            .into_owned(),
        payload_crc32: crc32fast::hash(&payload),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Config(format!("cannot serialise manifest: {e}")))?;
    write_file(&payload_path, &payload)?;
    write_file(&manifest_path, text.as_bytes())?;
    Ok(manifest_path)
}

/// Writes a payload-free checkpoint that stands for the physics model.
pub fn save_physics_checkpoint(path: &Path, cfg: &Lorenz96Config) -> Result<PathBuf> {
    let (manifest_path, _) = checkpoint_paths(path);
    let manifest = CheckpointManifest::Physics {
        format_version: CHECKPOINT_VERSION,
        n: cfg.n,
        forcing: cfg.forcing,
        dt: cfg.dt,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Config(format!("cannot serialise manifest: {e}")))?;
    write_file(&manifest_path, text.as_bytes())?;
    Ok(manifest_path)
}

pub fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let (manifest_path, _) = checkpoint_paths(path);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: CheckpointManifest = toml::from_str(&text)
        .map_err(|e| Error::format(&manifest_path, format!("manifest: {e}")))?;
    let version = match &m {
        CheckpointManifest::Mlp { format_version, .. }
        | CheckpointManifest::Physics { format_version, .. } => *format_version,
    };
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: manifest_path,
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(m)
}

/// A loaded network checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub seed: u64,
    pub phase: Phase,
    pub weights: LossWeights,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (manifest_path, _) = checkpoint_paths(path);
    match read_manifest(path)? {
        CheckpointManifest::Physics { .. } => Err(Error::format(
            &manifest_path,
            "physics checkpoint has no network parameters",
        )),
        CheckpointManifest::Mlp {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
            seed,
            phase,
            alpha,
            beta,
            gamma,
            param_count,
            payload_file,
            payload_crc32,
            ..
        } => {
            let arch = MlpArchitecture {
                input_dim,
                hidden_dims,
                output_dim,
                hidden_activation: activation,
            };
            if arch.param_count() != param_count {
                return Err(Error::format(
                    &manifest_path,
                    format!(
                        "param_count {param_count} disagrees with architecture ({})",
                        arch.param_count()
                    ),
                ));
            }
            let payload_path = manifest_path.with_file_name(&payload_file);
            let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
            if bytes.len() != 8 * param_count {
                return Err(Error::format(
                    &payload_path,
                    format!("expected {} bytes, found {}", 8 * param_count, bytes.len()),
                ));
            }
            let computed = crc32fast::hash(&bytes);
            if computed != payload_crc32 {
                return Err(Error::Checksum {
                    path: payload_path,
                    stored: payload_crc32,
                    computed,
                });
            }
            let params = MlpParams::from_flat(arch, le_bytes_to_f64s(&bytes))?;
            Ok(Checkpoint {
                params,
                seed,
                phase,
                weights: LossWeights { alpha, beta, gamma },
            })
        }
    }
}

/// Loads either kind of checkpoint as an [`Emulator`].
pub fn load_emulator(path: &Path) -> Result<Box<dyn Emulator + Send>> {
    match read_manifest(path)? {
        CheckpointManifest::Physics { n, forcing, dt, .. } => {
            Ok(Box::new(PhysicsEmulator(Lorenz96Config::new(n, forcing, dt)?)))
        }
        CheckpointManifest::Mlp { .. } => Ok(Box::new(load_checkpoint(path)?.params)),
    }
}
