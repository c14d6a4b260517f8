//! Multilayer perceptron emulator of a one-step state map.
//!
//! The network is `y = W_L tanh(... tanh(W_1 x + b_1) ...) + b_L`: tanh on
//! every hidden layer and a linear output layer. Besides the forward map it
//! exposes its tangent linear (JVP) and adjoint (VJP) maps, the dense
//! Jacobian, and in [`loss`] the parameter gradients of RMSE losses on all
//! three.
//!
//! # Parameter layout
//!
//! Parameters live in one flat `Vec<f64>`. Layers are stored in order from
//! input to output; each layer contributes its weight matrix (`out x in`,
//! row-major, so `W[i][j]` multiplies input `j` into output `i`) followed by
//! its bias vector (`out` entries). The same ordering is used for gradients
//! and for the checkpoint payload.

pub mod checkpoint;
pub mod loss;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lorenz96::{self, Lorenz96Config};
use crate::state::{JacobianMatrix, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => f.write_str("tanh"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
}

impl MlpArchitecture {
    /// State-to-state emulator for an `n`-point system.
    pub fn state_map(n: usize, hidden_dims: Vec<usize>) -> Self {
        MlpArchitecture {
            input_dim: n,
            hidden_dims,
            output_dim: n,
            hidden_activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::Config("at least one hidden layer is required".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// `(out, in)` of every affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden_dims);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// Location of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub rows: usize,
    pub cols: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerLayout {
    pub fn weight_len(&self) -> usize {
        self.rows * self.cols
    }
}

pub(crate) fn layouts(arch: &MlpArchitecture) -> Vec<LayerLayout> {
    let mut offset = 0;
    arch.layer_shapes()
        .into_iter()
        .map(|(rows, cols)| {
            let l = LayerLayout {
                rows,
                cols,
                weight_offset: offset,
                bias_offset: offset + rows * cols,
            };
            offset += rows * cols + rows;
            l
        })
        .collect()
}

/// Borrowed weights and bias of a single layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerRef<'a> {
    pub rows: usize,
    pub cols: usize,
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

/// Trainable parameters. Immutable once built; training produces new values.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    arch: MlpArchitecture,
    layout: Vec<LayerLayout>,
    flat: Vec<f64>,
    fingerprint: u32,
}

fn fingerprint(flat: &[f64]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for v in flat {
        h.update(&v.to_le_bytes());
    }
    h.finalize()
}

impl MlpParams {
    pub fn from_flat(arch: MlpArchitecture, flat: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        check_len("flat parameter vector", arch.param_count(), flat.len())?;
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", flat[i])));
        }
        let layout = layouts(&arch);
        let fingerprint = fingerprint(&flat);
        Ok(MlpParams {
            arch,
            layout,
            flat,
            fingerprint,
        })
    }

    pub fn zeros(arch: MlpArchitecture) -> Result<Self> {
        let len = arch.param_count();
        MlpParams::from_flat(arch, vec![0.0; len])
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.layout.len()
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn layer(&self, l: usize) -> LayerRef<'_> {
        let lay = self.layout[l];
        LayerRef {
            rows: lay.rows,
            cols: lay.cols,
            weights: &self.flat[lay.weight_offset..lay.bias_offset],
            bias: &self.flat[lay.bias_offset..lay.bias_offset + lay.rows],
        }
    }
}

/// Glorot-uniform weights, `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`,
/// and zero biases. Weights are drawn layer by layer in flat order.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> Result<MlpParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(arch.param_count());
    for (rows, cols) in arch.layer_shapes() {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        flat.extend((0..rows * cols).map(|_| rng.random_range(-bound..bound)));
        flat.extend(std::iter::repeat_n(0.0, rows));
    }
    MlpParams::from_flat(arch.clone(), flat)
}

/// Intermediates of one forward pass, needed by [`jvp`] and [`vjp`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    input: Vec<f64>,
    /// Pre-activations `z_l` of every layer (the last one is the output).
    pre_activations: Vec<Vec<f64>>,
    /// `tanh(z_l)` for the hidden layers.
    activations: Vec<Vec<f64>>,
    param_fingerprint: u32,
}

impl ForwardTrace {
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn output(&self) -> &[f64] {
        self.pre_activations.last().expect("at least one layer")
    }

    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre_activations
    }

    pub fn activations(&self) -> &[Vec<f64>] {
        &self.activations
    }

    fn check(&self, params: &MlpParams) -> Result<()> {
        if self.pre_activations.len() != params.num_layers() {
            return Err(Error::StaleTrace(format!(
                "trace has {} layers, network has {}",
                self.pre_activations.len(),
                params.num_layers()
            )));
        }
        for (z, lay) in self.pre_activations.iter().zip(params.layout()) {
            check_len("trace layer width", lay.rows, z.len())?;
        }
        if self.param_fingerprint != params.fingerprint {
            return Err(Error::StaleTrace(
                "trace was recorded with different parameters".into(),
            ));
        }
        Ok(())
    }
}

// `out = W v` for a row-major `rows x cols` matrix.
fn matvec(layer: &LayerRef<'_>, v: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        layer
            .weights
            .chunks_exact(layer.cols)
            .map(|row| row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>()),
    );
}

// `out = W^T u`
fn matvec_t(layer: &LayerRef<'_>, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; layer.cols];
    for (row, ui) in layer.weights.chunks_exact(layer.cols).zip(u) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * ui;
        }
    }
    out
}

/// Network prediction plus the trace of its intermediates.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<(StateVector, ForwardTrace)> {
    check_len("emulator input", params.arch.input_dim, x.len())?;
    let last = params.num_layers() - 1;
    let mut pre_activations = Vec::with_capacity(last + 1);
    let mut activations = Vec::with_capacity(last);
    let mut current = x.to_vec();
    for l in 0..=last {
        let layer = params.layer(l);
        let mut z = Vec::with_capacity(layer.rows);
        matvec(&layer, &current, &mut z);
        for (zi, bi) in z.iter_mut().zip(layer.bias) {
            *zi += bi;
        }
        if l < last {
            current = z.iter().map(|v| v.tanh()).collect();
            activations.push(current.clone());
        }
        pre_activations.push(z);
    }
    let y = StateVector::new(pre_activations[last].clone());
    Ok((
        y,
        ForwardTrace {
            input: x.to_vec(),
            pre_activations,
            activations,
            param_fingerprint: params.fingerprint,
        },
    ))
}

/// Tangent linear emulation: `J(x) dx`, with `J` the network Jacobian at the traced input.
pub fn jvp(params: &MlpParams, trace: &ForwardTrace, dx: &[f64]) -> Result<StateVector> {
    trace.check(params)?;
    check_len("jvp perturbation", params.arch.input_dim, dx.len())?;
    let last = params.num_layers() - 1;
    let mut d = dx.to_vec();
    let mut dz = Vec::new();
    for l in 0..=last {
        matvec(&params.layer(l), &d, &mut dz);
        if l < last {
            // tanh'(z) = 1 - tanh(z)^2
            d = dz
                .iter()
                .zip(&trace.activations[l])
                .map(|(v, a)| v * (1.0 - a * a))
                .collect();
        }
    }
    Ok(StateVector::new(dz))
}

/// Adjoint emulation: `J(x)^T yhat`, a reverse sweep over the trace.
pub fn vjp(params: &MlpParams, trace: &ForwardTrace, yhat: &[f64]) -> Result<StateVector> {
    trace.check(params)?;
    check_len("vjp cotangent", params.arch.output_dim, yhat.len())?;
    let last = params.num_layers() - 1;
    let mut u = yhat.to_vec();
    for l in (0..=last).rev() {
        let v = matvec_t(&params.layer(l), &u);
        if l == 0 {
            return Ok(StateVector::new(v));
        }
        u = v
            .iter()
            .zip(&trace.activations[l - 1])
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
    }
    unreachable!("network has at least one layer")
}

/// Network Jacobian at `x`, assembled column by column from JVPs.
pub fn extract_jacobian(params: &MlpParams, x: &[f64]) -> Result<JacobianMatrix> {
    let (_, trace) = forward(params, x)?;
    let n_in = params.arch.input_dim;
    JacobianMatrix::from_columns(params.arch.output_dim, n_in, |j| {
        Ok(jvp(params, &trace, &StateVector::basis(n_in, j))?.into_inner())
    })
}

/// Network Jacobian at `x`, assembled row by row from VJPs.
pub fn extract_jacobian_by_vjp(params: &MlpParams, x: &[f64]) -> Result<JacobianMatrix> {
    let (_, trace) = forward(params, x)?;
    let n_out = params.arch.output_dim;
    JacobianMatrix::from_rows(n_out, params.arch.input_dim, |i| {
        Ok(vjp(params, &trace, &StateVector::basis(n_out, i))?.into_inner())
    })
}

/// Anything that maps a state one step forward and exposes its linearisation.
///
/// Implemented by the trained network and by the physics model itself, which
/// serves as a perfect reference emulator in diagnostics.
pub trait Emulator: Sync {
    fn state_dim(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<StateVector>;
    fn tangent(&self, x: &[f64], dx: &[f64]) -> Result<StateVector>;
    fn adjoint(&self, x: &[f64], yhat: &[f64]) -> Result<StateVector>;
    fn jacobian(&self, x: &[f64]) -> Result<JacobianMatrix>;
}

impl Emulator for MlpParams {
    fn state_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn predict(&self, x: &[f64]) -> Result<StateVector> {
        Ok(forward(self, x)?.0)
    }

    fn tangent(&self, x: &[f64], dx: &[f64]) -> Result<StateVector> {
        let (_, trace) = forward(self, x)?;
        jvp(self, &trace, dx)
    }

    fn adjoint(&self, x: &[f64], yhat: &[f64]) -> Result<StateVector> {
        let (_, trace) = forward(self, x)?;
        vjp(self, &trace, yhat)
    }

    fn jacobian(&self, x: &[f64]) -> Result<JacobianMatrix> {
        extract_jacobian(self, x)
    }
}

/// The RK4 physics step wrapped as an emulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsEmulator(pub Lorenz96Config);

impl Emulator for PhysicsEmulator {
    fn state_dim(&self) -> usize {
        self.0.n
    }

    fn predict(&self, x: &[f64]) -> Result<StateVector> {
        lorenz96::step_rk4(&self.0, x)
    }

    fn tangent(&self, x: &[f64], dx: &[f64]) -> Result<StateVector> {
        lorenz96::step_tlm(&self.0, x, dx)
    }

    fn adjoint(&self, x: &[f64], yhat: &[f64]) -> Result<StateVector> {
        lorenz96::step_adj(&self.0, x, yhat)
    }

    fn jacobian(&self, x: &[f64]) -> Result<JacobianMatrix> {
        lorenz96::reference_jacobian(&self.0, x)
    }
}
