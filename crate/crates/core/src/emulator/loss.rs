//! Batched RMSE losses of the emulator and their exact parameter gradients.
//!
//! Every loss is the batch mean of per-sample RMSE,
//! `mean_b sqrt(mean_i r_{b,i}^2)`, where the residual `r` is taken on the
//! forecast (`forward`), on the tangent response (`jvp`) or on the adjoint
//! response (`vjp`). The JVP and VJP losses depend on the parameters both
//! directly through the weights and through the tanh derivatives evaluated at
//! the primal pre-activations, so their gradients need a second-order sweep:
//! the tangent (or adjoint) chain is reversed first, which deposits extra
//! cotangents on the hidden pre-activations through `tanh''`, and then the
//! primal network is backpropagated with those extra cotangents.
//!
//! Samples are stacked as rows (`batch x dim`) so each layer is a single
//! matrix product. Reductions run in a fixed order; results are bit-identical
//! between runs.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};

use super::MlpParams;
use crate::error::{check_len, Error, Result};
use crate::training::LossWeights;

/// Per-sample RMSE below this is treated as exactly zero for the gradient.
pub const RMSE_GRAD_FLOOR: f64 = 1e-15;

fn stack_rows<'a>(
    context: &'static str,
    dim: usize,
    rows: impl ExactSizeIterator<Item = &'a [f64]>,
) -> Result<Array2<f64>> {
    let count = rows.len();
    let mut flat = Vec::with_capacity(count * dim);
    for r in rows {
        check_len(context, dim, r.len())?;
        flat.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((count, dim), flat).expect("shape checked per row"))
}

fn check_same_shape(context: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    check_len(context, a.nrows(), b.nrows())?;
    check_len(context, a.ncols(), b.ncols())
}

/// `(x, y_true)` pairs stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBatch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl ForecastBatch {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        check_same_shape("forecast batch", &inputs, &targets)?;
        Ok(ForecastBatch { inputs, targets })
    }

    pub fn from_pairs<'a, I>(dim: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    {
        let (xs, ys): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        ForecastBatch::new(
            stack_rows("forecast input", dim, xs.into_iter())?,
            stack_rows("forecast target", dim, ys.into_iter())?,
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(x, dx, dy_true)` triples for the tangent linear loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBatch {
    pub states: Array2<f64>,
    pub perturbations: Array2<f64>,
    pub targets: Array2<f64>,
}

impl TangentBatch {
    pub fn new(states: Array2<f64>, perturbations: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        check_same_shape("tangent batch", &states, &perturbations)?;
        check_same_shape("tangent batch", &states, &targets)?;
        Ok(TangentBatch {
            states,
            perturbations,
            targets,
        })
    }

    pub fn from_triples<'a, I>(dim: usize, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64], &'a [f64])>,
    {
        let v: Vec<_> = triples.into_iter().collect();
        TangentBatch::new(
            stack_rows("tangent state", dim, v.iter().map(|t| t.0))?,
            stack_rows("tangent perturbation", dim, v.iter().map(|t| t.1))?,
            stack_rows("tangent target", dim, v.iter().map(|t| t.2))?,
        )
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(x, yhat, xhat_true)` triples for the adjoint loss.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointBatch {
    pub states: Array2<f64>,
    pub cotangents: Array2<f64>,
    pub targets: Array2<f64>,
}

impl AdjointBatch {
    pub fn new(states: Array2<f64>, cotangents: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        check_same_shape("adjoint batch", &states, &cotangents)?;
        check_same_shape("adjoint batch", &states, &targets)?;
        Ok(AdjointBatch {
            states,
            cotangents,
            targets,
        })
    }

    pub fn from_triples<'a, I>(dim: usize, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64], &'a [f64])>,
    {
        let v: Vec<_> = triples.into_iter().collect();
        AdjointBatch::new(
            stack_rows("adjoint state", dim, v.iter().map(|t| t.0))?,
            stack_rows("adjoint cotangent", dim, v.iter().map(|t| t.1))?,
            stack_rows("adjoint target", dim, v.iter().map(|t| t.2))?,
        )
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    /// Gradient in the canonical flat parameter order.
    pub grad: Vec<f64>,
}

/// Weighted sum of the three losses plus the individual terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLossGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub forecast: f64,
    pub tlm: f64,
    pub adj: f64,
}

fn weights(params: &MlpParams, l: usize) -> ArrayView2<'_, f64> {
    let layer = params.layer(l);
    ArrayView2::from_shape((layer.rows, layer.cols), layer.weights).expect("layout consistent")
}

struct BatchForward {
    /// Input of each layer; `layer_inputs[0]` is the batch, `layer_inputs[l]`
    /// for `l > 0` is `tanh(z_{l-1})`.
    layer_inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl BatchForward {
    /// `tanh'(z_h) = 1 - a_h^2` for hidden layer `h`.
    fn slope(&self, h: usize) -> Array2<f64> {
        self.layer_inputs[h + 1].mapv(|a| 1.0 - a * a)
    }

    /// `tanh''(z_h) = -2 a_h (1 - a_h^2)` for hidden layer `h`.
    fn curvature(&self, h: usize) -> Array2<f64> {
        self.layer_inputs[h + 1].mapv(|a| -2.0 * a * (1.0 - a * a))
    }
}

fn forward_batch(params: &MlpParams, x: &Array2<f64>) -> Result<BatchForward> {
    check_len("batch input width", params.architecture().input_dim, x.ncols())?;
    let last = params.num_layers() - 1;
    let mut layer_inputs = vec![x.clone()];
    for l in 0..=last {
        let mut z = layer_inputs[l].dot(&weights(params, l).t());
        let bias = params.layer(l).bias;
        for mut row in z.axis_iter_mut(Axis(0)) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        if l < last {
            z.mapv_inplace(f64::tanh);
            layer_inputs.push(z);
        } else {
            return Ok(BatchForward {
                layer_inputs,
                output: z,
            });
        }
    }
    unreachable!("network has at least one layer")
}

/// Mean per-sample RMSE of `residual` and, in place, its cotangent scaled by `weight`.
fn rmse_cotangent(residual: &mut Array2<f64>, weight: f64) -> f64 {
    let batch = residual.nrows() as f64;
    let dim = residual.ncols() as f64;
    let mut total = 0.0;
    for mut row in residual.axis_iter_mut(Axis(0)) {
        let ss: f64 = row.iter().map(|r| r * r).sum();
        let rmse = (ss / dim).sqrt();
        total += rmse;
        let scale = if rmse < RMSE_GRAD_FLOOR {
            0.0
        } else {
            weight / (dim * rmse * batch)
        };
        row.mapv_inplace(|r| r * scale);
    }
    total / batch
}

fn mean_rmse(residual: &Array2<f64>) -> f64 {
    let dim = residual.ncols() as f64;
    let total: f64 = residual
        .axis_iter(Axis(0))
        .map(|row| (row.iter().map(|r| r * r).sum::<f64>() / dim).sqrt())
        .sum();
    total / residual.nrows() as f64
}

/// `grad_W += g^T input`, `grad_b += colsum(g)` (bias only when `with_bias`).
fn accumulate_layer(
    params: &MlpParams,
    l: usize,
    g: &Array2<f64>,
    input: &Array2<f64>,
    with_bias: bool,
    grad: &mut [f64],
) {
    let lay = params.layout()[l];
    {
        let mut gw = ArrayViewMut2::from_shape(
            (lay.rows, lay.cols),
            &mut grad[lay.weight_offset..lay.bias_offset],
        )
        .expect("layout consistent");
        general_mat_mul(1.0, &g.t(), input, 1.0, &mut gw);
    }
    if with_bias {
        let gb = &mut grad[lay.bias_offset..lay.bias_offset + lay.rows];
        for row in g.axis_iter(Axis(0)) {
            for (b, v) in gb.iter_mut().zip(row) {
                *b += v;
            }
        }
    }
}

fn add_extra(extras: &mut [Option<Array2<f64>>], h: usize, term: Array2<f64>) {
    match &mut extras[h] {
        Some(e) => *e += &term,
        slot @ None => *slot = Some(term),
    }
}

/// Reverse sweep through the primal network.
///
/// `g_output` is the cotangent of the network output (if any) and `extras[h]`
/// an additional cotangent on the pre-activation of hidden layer `h`.
fn backprop_primal(
    params: &MlpParams,
    fwd: &BatchForward,
    g_output: Option<Array2<f64>>,
    mut extras: Vec<Option<Array2<f64>>>,
    grad: &mut [f64],
) {
    let last = params.num_layers() - 1;
    // Cotangent on z_l; for l < last it is assembled from the layer above.
    let mut gz = g_output;
    for l in (0..=last).rev() {
        if let Some(g) = &gz {
            accumulate_layer(params, l, g, &fwd.layer_inputs[l], true, grad);
        }
        if l == 0 {
            break;
        }
        let h = l - 1;
        let from_above = gz.take().map(|g| g.dot(&weights(params, l)) * &fwd.slope(h));
        gz = match (from_above, extras[h].take()) {
            (Some(a), Some(e)) => Some(a + e),
            (a, e) => a.or(e),
        };
    }
}

struct TangentSweep {
    /// Input tangent of every layer.
    layer_inputs: Vec<Array2<f64>>,
    /// Tangent of each hidden pre-activation.
    hidden_pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

fn tangent_sweep(params: &MlpParams, fwd: &BatchForward, dx: &Array2<f64>) -> TangentSweep {
    let last = params.num_layers() - 1;
    let mut layer_inputs = vec![dx.clone()];
    let mut hidden_pre = Vec::with_capacity(last);
    for l in 0..=last {
        let dz = layer_inputs[l].dot(&weights(params, l).t());
        if l < last {
            layer_inputs.push(&dz * &fwd.slope(l));
            hidden_pre.push(dz);
        } else {
            return TangentSweep {
                layer_inputs,
                hidden_pre,
                output: dz,
            };
        }
    }
    unreachable!("network has at least one layer")
}

/// Adds `weight * dL_tlm/dtheta` from the direct weight dependence into
/// `grad`, deposits the `tanh''` terms into `extras`, and returns the loss.
fn accumulate_tlm(
    params: &MlpParams,
    fwd: &BatchForward,
    batch: &TangentBatch,
    weight: f64,
    grad: &mut [f64],
    extras: &mut [Option<Array2<f64>>],
) -> f64 {
    let sweep = tangent_sweep(params, fwd, &batch.perturbations);
    let mut g = sweep.output - &batch.targets;
    let loss = rmse_cotangent(&mut g, weight);
    let mut g_dz = g;
    for l in (0..params.num_layers()).rev() {
        accumulate_layer(params, l, &g_dz, &sweep.layer_inputs[l], false, grad);
        if l == 0 {
            break;
        }
        let h = l - 1;
        let g_da = g_dz.dot(&weights(params, l));
        let mut extra = &sweep.hidden_pre[h] * &g_da;
        extra *= &fwd.curvature(h);
        add_extra(extras, h, extra);
        g_dz = g_da * &fwd.slope(h);
    }
    loss
}

struct AdjointSweep {
    /// Cotangent on each pre-activation `z_l`.
    pre: Vec<Array2<f64>>,
    /// Cotangent on each layer input (`post[0]` is the adjoint output).
    post: Vec<Array2<f64>>,
}

fn adjoint_sweep(params: &MlpParams, fwd: &BatchForward, yhat: &Array2<f64>) -> AdjointSweep {
    let layers = params.num_layers();
    let mut pre: Vec<Option<Array2<f64>>> = vec![None; layers];
    let mut post: Vec<Option<Array2<f64>>> = vec![None; layers];
    let mut u = yhat.clone();
    for l in (0..layers).rev() {
        let v = u.dot(&weights(params, l));
        pre[l] = Some(u);
        if l == 0 {
            post[0] = Some(v);
            break;
        }
        u = &v * &fwd.slope(l - 1);
        post[l] = Some(v);
    }
    AdjointSweep {
        pre: pre.into_iter().map(|v| v.expect("filled")).collect(),
        post: post.into_iter().map(|v| v.expect("filled")).collect(),
    }
}

/// Adjoint counterpart of [`accumulate_tlm`].
fn accumulate_adj(
    params: &MlpParams,
    fwd: &BatchForward,
    batch: &AdjointBatch,
    weight: f64,
    grad: &mut [f64],
    extras: &mut [Option<Array2<f64>>],
) -> f64 {
    let mut sweep = adjoint_sweep(params, fwd, &batch.cotangents);
    let mut g = std::mem::take(&mut sweep.post[0]) - &batch.targets;
    let loss = rmse_cotangent(&mut g, weight);
    let last = params.num_layers() - 1;
    // g_v: cotangent of the adjoint quantity on the input of layer l.
    let mut g_v = g;
    for l in 0..=last {
        // post_l = W_l^T pre_l  =>  dW_l += pre_l^T g_v
        accumulate_layer(params, l, &sweep.pre[l], &g_v, false, grad);
        if l == last {
            break;
        }
        let g_u = g_v.dot(&weights(params, l).t());
        let mut extra = &sweep.post[l + 1] * &g_u;
        extra *= &fwd.curvature(l);
        add_extra(extras, l, extra);
        g_v = g_u * &fwd.slope(l);
    }
    loss
}

fn accumulate_forecast(
    params: &MlpParams,
    batch: &ForecastBatch,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let fwd = forward_batch(params, &batch.inputs)?;
    let mut g = &fwd.output - &batch.targets;
    let loss = rmse_cotangent(&mut g, weight);
    backprop_primal(params, &fwd, Some(g), vec![None; params.num_layers() - 1], grad);
    Ok(loss)
}

fn check_width(params: &MlpParams, context: &'static str, a: &Array2<f64>) -> Result<()> {
    check_len(context, params.architecture().input_dim, a.ncols())
}

/// Mean per-sample forecast RMSE and its exact parameter gradient.
pub fn grad_forecast_loss(params: &MlpParams, batch: &ForecastBatch) -> Result<LossGradient> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("grad_forecast_loss"));
    }
    check_width(params, "forecast batch width", &batch.targets)?;
    let mut grad = vec![0.0; params.len()];
    let loss = accumulate_forecast(params, batch, 1.0, &mut grad)?;
    Ok(LossGradient { loss, grad })
}

/// Mean per-sample RMSE between `jvp` and the true tangent response, with gradient.
pub fn grad_tlm_loss(params: &MlpParams, batch: &TangentBatch) -> Result<LossGradient> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("grad_tlm_loss"));
    }
    check_width(params, "tangent batch width", &batch.states)?;
    let fwd = forward_batch(params, &batch.states)?;
    let mut grad = vec![0.0; params.len()];
    let mut extras = vec![None; params.num_layers() - 1];
    let loss = accumulate_tlm(params, &fwd, batch, 1.0, &mut grad, &mut extras);
    backprop_primal(params, &fwd, None, extras, &mut grad);
    Ok(LossGradient { loss, grad })
}

/// Mean per-sample RMSE between `vjp` and the true adjoint response, with gradient.
pub fn grad_adj_loss(params: &MlpParams, batch: &AdjointBatch) -> Result<LossGradient> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("grad_adj_loss"));
    }
    check_width(params, "adjoint batch width", &batch.states)?;
    let fwd = forward_batch(params, &batch.states)?;
    let mut grad = vec![0.0; params.len()];
    let mut extras = vec![None; params.num_layers() - 1];
    let loss = accumulate_adj(params, &fwd, batch, 1.0, &mut grad, &mut extras);
    backprop_primal(params, &fwd, None, extras, &mut grad);
    Ok(LossGradient { loss, grad })
}

/// `alpha L_forecast + beta L_tlm + gamma L_adj` with its gradient.
///
/// Terms with zero weight are skipped entirely. When the tangent and adjoint
/// batches share their states the primal pass over them is done once.
pub fn grad_total_loss(
    params: &MlpParams,
    forecast: &ForecastBatch,
    tangent: &TangentBatch,
    adjoint: &AdjointBatch,
    w: &LossWeights,
) -> Result<TotalLossGradient> {
    w.validate()?;
    let mut grad = vec![0.0; params.len()];
    let mut out = TotalLossGradient {
        loss: 0.0,
        grad: Vec::new(),
        forecast: 0.0,
        tlm: 0.0,
        adj: 0.0,
    };
    if w.alpha > 0.0 {
        if forecast.is_empty() {
            return Err(Error::EmptyBatch("forecast term"));
        }
        check_width(params, "forecast batch width", &forecast.targets)?;
        out.forecast = accumulate_forecast(params, forecast, w.alpha, &mut grad)?;
    }
    let hidden = params.num_layers() - 1;
    if w.beta > 0.0 && w.gamma > 0.0 && tangent.states == adjoint.states {
        if tangent.is_empty() {
            return Err(Error::EmptyBatch("sensitivity terms"));
        }
        check_width(params, "tangent batch width", &tangent.targets)?;
        check_width(params, "adjoint batch width", &adjoint.targets)?;
        let fwd = forward_batch(params, &tangent.states)?;
        let mut extras = vec![None; hidden];
        out.tlm = accumulate_tlm(params, &fwd, tangent, w.beta, &mut grad, &mut extras);
        out.adj = accumulate_adj(params, &fwd, adjoint, w.gamma, &mut grad, &mut extras);
        backprop_primal(params, &fwd, None, extras, &mut grad);
    } else {
        if w.beta > 0.0 {
            if tangent.is_empty() {
                return Err(Error::EmptyBatch("tlm term"));
            }
            check_width(params, "tangent batch width", &tangent.targets)?;
            let fwd = forward_batch(params, &tangent.states)?;
            let mut extras = vec![None; hidden];
            out.tlm = accumulate_tlm(params, &fwd, tangent, w.beta, &mut grad, &mut extras);
            backprop_primal(params, &fwd, None, extras, &mut grad);
        }
        if w.gamma > 0.0 {
            if adjoint.is_empty() {
                return Err(Error::EmptyBatch("adj term"));
            }
            check_width(params, "adjoint batch width", &adjoint.targets)?;
            let fwd = forward_batch(params, &adjoint.states)?;
            let mut extras = vec![None; hidden];
            out.adj = accumulate_adj(params, &fwd, adjoint, w.gamma, &mut grad, &mut extras);
            backprop_primal(params, &fwd, None, extras, &mut grad);
        }
    }
    out.loss = w.alpha * out.forecast + w.beta * out.tlm + w.gamma * out.adj;
    out.grad = grad;
    Ok(out)
}

/// Forecast loss without the gradient.
pub fn forecast_loss(params: &MlpParams, batch: &ForecastBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("forecast_loss"));
    }
    let fwd = forward_batch(params, &batch.inputs)?;
    Ok(mean_rmse(&(fwd.output - &batch.targets)))
}

/// Tangent linear loss without the gradient.
pub fn tlm_loss(params: &MlpParams, batch: &TangentBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("tlm_loss"));
    }
    let fwd = forward_batch(params, &batch.states)?;
    let sweep = tangent_sweep(params, &fwd, &batch.perturbations);
    Ok(mean_rmse(&(sweep.output - &batch.targets)))
}

/// Adjoint loss without the gradient.
pub fn adj_loss(params: &MlpParams, batch: &AdjointBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("adj_loss"));
    }
    let fwd = forward_batch(params, &batch.states)?;
    let mut sweep = adjoint_sweep(params, &fwd, &batch.cotangents);
    Ok(mean_rmse(&(std::mem::take(&mut sweep.post[0]) - &batch.targets)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{forward, jvp, vjp, MlpArchitecture};
    use crate::state::rmse;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn setup(seed: u64) -> (MlpParams, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let arch = MlpArchitecture::state_map(6, vec![10, 12]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = MlpParams::from_flat(arch.clone(), normal(&mut rng, arch.param_count(), 0.4)).unwrap();
        let xs = (0..5).map(|_| normal(&mut rng, 6, 2.0)).collect();
        let ds = (0..5).map(|_| normal(&mut rng, 6, 0.1)).collect();
        let ts = (0..5).map(|_| normal(&mut rng, 6, 0.5)).collect();
        (p, xs, ds, ts)
    }

    // Per-sample reference losses built only from forward/jvp/vjp.
    fn ref_forecast(p: &MlpParams, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
        xs.iter().zip(ys).map(|(x, y)| rmse(&forward(p, x).unwrap().0, y)).sum::<f64>() / xs.len() as f64
    }

    fn ref_tlm(p: &MlpParams, xs: &[Vec<f64>], ds: &[Vec<f64>], ts: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for ((x, d), t) in xs.iter().zip(ds).zip(ts) {
            let (_, tr) = forward(p, x).unwrap();
            total += rmse(&jvp(p, &tr, d).unwrap(), t);
        }
        total / xs.len() as f64
    }

    fn ref_adj(p: &MlpParams, xs: &[Vec<f64>], ds: &[Vec<f64>], ts: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for ((x, d), t) in xs.iter().zip(ds).zip(ts) {
            let (_, tr) = forward(p, x).unwrap();
            total += rmse(&vjp(p, &tr, d).unwrap(), t);
        }
        total / xs.len() as f64
    }

    fn fd_grad(p: &MlpParams, f: impl Fn(&MlpParams) -> f64) -> Vec<f64> {
        let eps = 1e-6;
        (0..p.len())
            .map(|k| {
                let mut plus = p.flat().to_vec();
                let mut minus = p.flat().to_vec();
                plus[k] += eps;
                minus[k] -= eps;
                let arch = p.architecture().clone();
                let fp = f(&MlpParams::from_flat(arch.clone(), plus).unwrap());
                let fm = f(&MlpParams::from_flat(arch, minus).unwrap());
                (fp - fm) / (2.0 * eps)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn forecast_gradient_matches_all_coordinates() {
        let (p, xs, _, ts) = setup(1);
        let batch = ForecastBatch::from_pairs(6, refs(&xs).into_iter().zip(refs(&ts))).unwrap();
        let lg = grad_forecast_loss(&p, &batch).unwrap();
        assert!((lg.loss - ref_forecast(&p, &xs, &ts)).abs() < 1e-13);
        let fd = fd_grad(&p, |q| ref_forecast(q, &xs, &ts));
        assert!(rel_err(&lg.grad, &fd) < 1e-6);
    }

    #[test]
    fn tlm_gradient_matches_all_coordinates() {
        let (p, xs, ds, ts) = setup(2);
        let ts: Vec<Vec<f64>> = ts.iter().map(|t| t.iter().map(|v| 0.1 * v).collect()).collect();
        let batch = TangentBatch::from_triples(
            6,
            xs.iter().zip(&ds).zip(&ts).map(|((x, d), t)| (x.as_slice(), d.as_slice(), t.as_slice())),
        )
        .unwrap();
        let lg = grad_tlm_loss(&p, &batch).unwrap();
        assert!((lg.loss - ref_tlm(&p, &xs, &ds, &ts)).abs() < 1e-13);
        let fd = fd_grad(&p, |q| ref_tlm(q, &xs, &ds, &ts));
        assert!(rel_err(&lg.grad, &fd) < 1e-5, "{}", rel_err(&lg.grad, &fd));
    }

    #[test]
    fn adj_gradient_matches_all_coordinates() {
        let (p, xs, ds, ts) = setup(3);
        let batch = AdjointBatch::from_triples(
            6,
            xs.iter().zip(&ds).zip(&ts).map(|((x, d), t)| (x.as_slice(), d.as_slice(), t.as_slice())),
        )
        .unwrap();
        let lg = grad_adj_loss(&p, &batch).unwrap();
        assert!((lg.loss - ref_adj(&p, &xs, &ds, &ts)).abs() < 1e-13);
        let fd = fd_grad(&p, |q| ref_adj(q, &xs, &ds, &ts));
        assert!(rel_err(&lg.grad, &fd) < 1e-5, "{}", rel_err(&lg.grad, &fd));
    }

    #[test]
    fn exact_labels_give_zero_loss_and_gradient() {
        let (p, xs, ds, _) = setup(4);
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| forward(&p, x).unwrap().0.into_inner()).collect();
        let fb = ForecastBatch::from_pairs(6, refs(&xs).into_iter().zip(refs(&ys))).unwrap();
        let lg = grad_forecast_loss(&p, &fb).unwrap();
        // batched and per-sample forwards differ only by rounding
        assert!(lg.loss < 1e-15);
        assert!(lg.grad.iter().all(|&g| g == 0.0));

        let dys: Vec<Vec<f64>> = xs
            .iter()
            .zip(&ds)
            .map(|(x, d)| {
                let (_, tr) = forward(&p, x).unwrap();
                jvp(&p, &tr, d).unwrap().into_inner()
            })
            .collect();
        let tb = TangentBatch::from_triples(
            6,
            xs.iter().zip(&ds).zip(&dys).map(|((x, d), t)| (x.as_slice(), d.as_slice(), t.as_slice())),
        )
        .unwrap();
        let lg = grad_tlm_loss(&p, &tb).unwrap();
        assert!(lg.loss < 1e-15);
        assert!(lg.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn doubling_residuals_doubles_forecast_loss() {
        let (p, xs, _, _) = setup(5);
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| forward(&p, x).unwrap().0.into_inner()).collect();
        let off1: Vec<Vec<f64>> = ys.iter().map(|y| y.iter().map(|v| v + 0.3).collect()).collect();
        let off2: Vec<Vec<f64>> = ys.iter().map(|y| y.iter().map(|v| v + 0.6).collect()).collect();
        let l1 = forecast_loss(&p, &ForecastBatch::from_pairs(6, refs(&xs).into_iter().zip(refs(&off1))).unwrap()).unwrap();
        let l2 = forecast_loss(&p, &ForecastBatch::from_pairs(6, refs(&xs).into_iter().zip(refs(&off2))).unwrap()).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn zero_cotangents_reduce_adj_loss_to_target_norm() {
        let (p, xs, _, ts) = setup(6);
        let zeros = vec![vec![0.0; 6]; xs.len()];
        let batch = AdjointBatch::from_triples(
            6,
            xs.iter().zip(&zeros).zip(&ts).map(|((x, d), t)| (x.as_slice(), d.as_slice(), t.as_slice())),
        )
        .unwrap();
        let expected = ts.iter().map(|t| t.iter().map(|v| v * v).sum::<f64>().sqrt() / 6f64.sqrt()).sum::<f64>() / 5.0;
        let lg = grad_adj_loss(&p, &batch).unwrap();
        assert!((lg.loss - expected).abs() < 1e-14);

        let zero_targets = AdjointBatch::new(batch.states.clone(), batch.cotangents.clone(), Array2::zeros((5, 6))).unwrap();
        let lg = grad_adj_loss(&p, &zero_targets).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn total_matches_sum_of_terms() {
        let (p, xs, ds, ts) = setup(7);
        let fb = ForecastBatch::from_pairs(6, refs(&xs).into_iter().zip(refs(&ts))).unwrap();
        let trip = || xs.iter().zip(&ds).zip(&ts).map(|((x, d), t)| (x.as_slice(), d.as_slice(), t.as_slice()));
        let tb = TangentBatch::from_triples(6, trip()).unwrap();
        let ab = AdjointBatch::from_triples(6, trip()).unwrap();
        let w = LossWeights { alpha: 0.7, beta: 1.3, gamma: 2.1 };
        let total = grad_total_loss(&p, &fb, &tb, &ab, &w).unwrap();
        let f = grad_forecast_loss(&p, &fb).unwrap();
        let t = grad_tlm_loss(&p, &tb).unwrap();
        let a = grad_adj_loss(&p, &ab).unwrap();
        assert!((total.loss - (0.7 * f.loss + 1.3 * t.loss + 2.1 * a.loss)).abs() < 1e-13);
        for k in 0..p.len() {
            let expect = 0.7 * f.grad[k] + 1.3 * t.grad[k] + 2.1 * a.grad[k];
            assert!((total.grad[k] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn empty_batches_are_rejected() {
        let (p, _, _, _) = setup(8);
        let empty = ForecastBatch::new(Array2::zeros((0, 6)), Array2::zeros((0, 6))).unwrap();
        assert!(matches!(grad_forecast_loss(&p, &empty), Err(Error::EmptyBatch(_))));
        let e3 = TangentBatch::new(Array2::zeros((0, 6)), Array2::zeros((0, 6)), Array2::zeros((0, 6))).unwrap();
        assert!(matches!(grad_tlm_loss(&p, &e3), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn mismatched_batch_shapes_are_rejected() {
        assert!(ForecastBatch::new(Array2::zeros((3, 6)), Array2::zeros((2, 6))).is_err());
        let (p, _, _, _) = setup(9);
        let wrong = ForecastBatch::new(Array2::zeros((3, 5)), Array2::zeros((3, 5))).unwrap();
        assert!(matches!(grad_forecast_loss(&p, &wrong), Err(Error::Shape { .. })));
    }
}
