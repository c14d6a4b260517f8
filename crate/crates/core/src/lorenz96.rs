//! The Lorenz 96 model, its classical RK4 one-step map and the exact
//! tangent linear and adjoint models of that discrete map.
//!
//! The tangent linear model differentiates every RK4 stage, so `step_tlm`
//! applies exactly the Jacobian `M` of `step_rk4`. `step_adj` runs the same
//! stage operations in reverse with transposed coefficients and applies `M^T`
//! without ever forming the matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::state::{JacobianMatrix, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lorenz96Config {
    /// Number of grid points.
    pub n: usize,
    /// Constant forcing `F`.
    pub forcing: f64,
    /// RK4 time step in model time units.
    pub dt: f64,
}

impl Default for Lorenz96Config {
    fn default() -> Self {
        Lorenz96Config {
            n: 40,
            forcing: 8.0,
            dt: 0.0125,
        }
    }
}

impl Lorenz96Config {
    pub fn new(n: usize, forcing: f64, dt: f64) -> Result<Self> {
        let cfg = Lorenz96Config { n, forcing, dt };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::Config(format!(
                "Lorenz 96 needs at least 4 grid points, got {}",
                self.n
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !self.forcing.is_finite() {
            return Err(Error::Config("forcing must be finite".into()));
        }
        Ok(())
    }

    /// The uniform equilibrium `x_i = F`.
    pub fn equilibrium(&self) -> StateVector {
        StateVector::filled(self.n, self.forcing)
    }
}

// Slice kernels. All assume `len == n`, checked by the public wrappers.

fn tendency_into(forcing: f64, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let ip1 = (i + 1) % n;
        let im1 = (i + n - 1) % n;
        let im2 = (i + n - 2) % n;
        out[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + forcing;
    }
}

/// Linearised tendency at `u` applied to `du`.
fn tendency_tl_into(u: &[f64], du: &[f64], out: &mut [f64]) {
    let n = u.len();
    for i in 0..n {
        let ip1 = (i + 1) % n;
        let im1 = (i + n - 1) % n;
        let im2 = (i + n - 2) % n;
        out[i] = (du[ip1] - du[im2]) * u[im1] + (u[ip1] - u[im2]) * du[im1] - du[i];
    }
}

/// Transposed linearised tendency at `u`: accumulates `Df(u)^T g` into `acc`.
fn tendency_ad_accumulate(u: &[f64], g: &[f64], acc: &mut [f64]) {
    let n = u.len();
    for i in 0..n {
        let ip1 = (i + 1) % n;
        let im1 = (i + n - 1) % n;
        let im2 = (i + n - 2) % n;
        acc[ip1] += g[i] * u[im1];
        acc[im2] -= g[i] * u[im1];
        acc[im1] += g[i] * (u[ip1] - u[im2]);
        acc[i] -= g[i];
    }
}

/// The four RK4 stage points and tendencies of one step.
struct Rk4Stages {
    points: [Vec<f64>; 4],
    slopes: [Vec<f64>; 4],
}

fn rk4_stages(cfg: &Lorenz96Config, x: &[f64]) -> Rk4Stages {
    let n = x.len();
    let dt = cfg.dt;
    let mut points: [Vec<f64>; 4] = Default::default();
    let mut slopes: [Vec<f64>; 4] = Default::default();
    let offsets = [0.0, 0.5 * dt, 0.5 * dt, dt];
    for s in 0..4 {
        let p: Vec<f64> = if s == 0 {
            x.to_vec()
        } else {
            x.iter()
                .zip(&slopes[s - 1])
                .map(|(xi, ki)| xi + offsets[s] * ki)
                .collect()
        };
        let mut k = vec![0.0; n];
        tendency_into(cfg.forcing, &p, &mut k);
        points[s] = p;
        slopes[s] = k;
    }
    Rk4Stages { points, slopes }
}

fn rk4_combine(dt: f64, x: &[f64], k: &[Vec<f64>; 4]) -> Vec<f64> {
    (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
        .collect()
}

fn check_state(cfg: &Lorenz96Config, context: &'static str, v: &[f64]) -> Result<()> {
    check_len(context, cfg.n, v.len())
}

/// Right-hand side `dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F` with cyclic indices.
pub fn tendency(cfg: &Lorenz96Config, x: &[f64]) -> Result<StateVector> {
    check_state(cfg, "tendency state", x)?;
    let mut out = vec![0.0; cfg.n];
    tendency_into(cfg.forcing, x, &mut out);
    Ok(out.into())
}

/// One classical fourth-order Runge-Kutta step of length `cfg.dt`.
pub fn step_rk4(cfg: &Lorenz96Config, x: &[f64]) -> Result<StateVector> {
    check_state(cfg, "rk4 state", x)?;
    let stages = rk4_stages(cfg, x);
    let next = StateVector::new(rk4_combine(cfg.dt, x, &stages.slopes));
    if stages.slopes.iter().flatten().any(|v| !v.is_finite()) || !next.is_finite() {
        return Err(Error::NonFinite("rk4 step overflowed".into()));
    }
    Ok(next)
}

/// Tangent linear model: `M dx` with `M` the Jacobian of `step_rk4` at `x`.
pub fn step_tlm(cfg: &Lorenz96Config, x: &[f64], dx: &[f64]) -> Result<StateVector> {
    check_state(cfg, "tlm state", x)?;
    check_state(cfg, "tlm perturbation", dx)?;
    let n = cfg.n;
    let dt = cfg.dt;
    let stages = rk4_stages(cfg, x);
    let offsets = [0.0, 0.5 * dt, 0.5 * dt, dt];
    let mut dk: [Vec<f64>; 4] = Default::default();
    for s in 0..4 {
        let dp: Vec<f64> = if s == 0 {
            dx.to_vec()
        } else {
            dx.iter()
                .zip(&dk[s - 1])
                .map(|(d, k)| d + offsets[s] * k)
                .collect()
        };
        let mut out = vec![0.0; n];
        tendency_tl_into(&stages.points[s], &dp, &mut out);
        dk[s] = out;
    }
    Ok(rk4_combine(dt, dx, &dk).into())
}

/// Adjoint model: `M^T yhat`, the exact transpose of [`step_tlm`] at `x`.
pub fn step_adj(cfg: &Lorenz96Config, x: &[f64], yhat: &[f64]) -> Result<StateVector> {
    check_state(cfg, "adjoint state", x)?;
    check_state(cfg, "adjoint input", yhat)?;
    let n = cfg.n;
    let dt = cfg.dt;
    let stages = rk4_stages(cfg, x);
    let offsets = [0.0, 0.5 * dt, 0.5 * dt, dt];
    let weights = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];

    // Cotangents of the stage slopes from the final combination.
    let mut gk: [Vec<f64>; 4] = Default::default();
    for s in 0..4 {
        gk[s] = yhat.iter().map(|v| weights[s] * v).collect();
    }
    let mut xhat = yhat.to_vec();
    for s in (0..4).rev() {
        let mut gp = vec![0.0; n];
        tendency_ad_accumulate(&stages.points[s], &gk[s], &mut gp);
        for i in 0..n {
            xhat[i] += gp[i];
        }
        if s > 0 {
            let (before, _) = gk.split_at_mut(s);
            for (g, p) in before[s - 1].iter_mut().zip(&gp) {
                *g += offsets[s] * p;
            }
        }
    }
    Ok(xhat.into())
}

/// Dense Jacobian of `step_rk4` at `x`, one `step_tlm` call per column.
pub fn reference_jacobian(cfg: &Lorenz96Config, x: &[f64]) -> Result<JacobianMatrix> {
    check_state(cfg, "jacobian state", x)?;
    let n = cfg.n;
    JacobianMatrix::from_columns(n, n, |j| {
        Ok(step_tlm(cfg, x, &StateVector::basis(n, j))?.into_inner())
    })
}

/// Integrates `steps` RK4 steps from `x`.
pub fn integrate(cfg: &Lorenz96Config, x: &[f64], steps: usize) -> Result<StateVector> {
    let mut state = StateVector::new(x.to_vec());
    for _ in 0..steps {
        state = step_rk4(cfg, &state)?;
    }
    Ok(state)
}

/// Seeded states on the attractor: a perturbed equilibrium is spun up for
/// 20 model time units, then `count` states are taken 0.5 time units apart.
pub fn attractor_states(cfg: &Lorenz96Config, count: usize, seed: u64) -> Result<Vec<StateVector>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<f64> = (0..cfg.n)
        .map(|_| cfg.forcing + rng.random_range(-0.5..0.5))
        .collect();
    let spin = (20.0 / cfg.dt).round() as usize;
    let gap = ((0.5 / cfg.dt).round() as usize).max(1);
    let mut x = integrate(cfg, &start, spin)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(x.clone());
        x = integrate(cfg, &x, gap)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn cfg40() -> Lorenz96Config {
        Lorenz96Config::default()
    }

    fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Straight transcription of the ODE with explicit wrap-around cases.
    fn naive_tendency(forcing: f64, x: &[f64]) -> Vec<f64> {
        let n = x.len() as isize;
        let at = |i: isize| -> f64 {
            let mut j = i;
            if j < 0 {
                j += n;
            }
            if j >= n {
                j -= n;
            }
            x[j as usize]
        };
        (0..n)
            .map(|i| (at(i + 1) - at(i - 2)) * at(i - 1) - at(i) + forcing)
            .collect()
    }

    #[test]
    fn equilibrium_has_zero_tendency_and_is_fixed_by_rk4() {
        let cfg = cfg40();
        let eq = cfg.equilibrium();
        assert!(tendency(&cfg, &eq).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(step_rk4(&cfg, &eq).unwrap(), eq);
    }

    #[test]
    fn tendency_small_hand_case() {
        let cfg = Lorenz96Config::new(4, 0.0, 0.01).unwrap();
        let f = tendency(&cfg, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f[0], -5.0);
    }

    #[test]
    fn tendency_matches_naive_transcription() {
        let cfg = cfg40();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: Vec<f64> = normal_vec(&mut rng, 40).iter().map(|v| 8.0 + 4.0 * v).collect();
            let a = tendency(&cfg, &x).unwrap();
            let b = naive_tendency(8.0, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }

    fn richardson_gap(cfg: &Lorenz96Config, x: &[f64]) -> f64 {
        let half = Lorenz96Config {
            dt: cfg.dt / 2.0,
            ..*cfg
        };
        let full = step_rk4(cfg, x).unwrap();
        let two = integrate(&half, x, 2).unwrap();
        full.iter().zip(two.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    #[test]
    fn rk4_local_error_is_fifth_order() {
        let cfg = cfg40();
        for x in attractor_states(&cfg, 10, 11).unwrap() {
            let gaps: Vec<f64> = [1.0, 0.5, 0.25]
                .iter()
                .map(|f| richardson_gap(&Lorenz96Config { dt: cfg.dt * f, ..cfg }, &x))
                .collect();
            // local error O(dt^5): halving dt shrinks the gap 32x
            for w in gaps.windows(2) {
                let ratio = w[0] / w[1];
                assert!((28.0..36.0).contains(&ratio), "gaps {gaps:?}");
            }
            assert!(gaps[0] < 1e-4);
            assert!(step_rk4(&cfg, &x).unwrap().is_finite());
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let cfg = cfg40();
        assert!(matches!(tendency(&cfg, &[1.0; 39]), Err(Error::Shape { .. })));
        assert!(matches!(step_tlm(&cfg, &[1.0; 40], &[1.0; 3]), Err(Error::Shape { .. })));
        assert!(matches!(step_adj(&cfg, &[1.0; 41], &[1.0; 40]), Err(Error::Shape { .. })));
    }

    #[test]
    fn overflow_is_reported() {
        let cfg = cfg40();
        let x: Vec<f64> = (0..40).map(|i| if i % 3 == 0 { 1e160 } else { -1e160 }).collect();
        assert!(matches!(step_rk4(&cfg, &x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(Lorenz96Config::new(3, 8.0, 0.01).is_err());
        assert!(Lorenz96Config::new(40, 8.0, 0.0).is_err());
        assert!(Lorenz96Config::new(40, 8.0, -0.1).is_err());
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let cfg = cfg40();
        let x = &attractor_states(&cfg, 1, 5).unwrap()[0];
        let z = vec![0.0; 40];
        assert!(step_tlm(&cfg, x, &z).unwrap().iter().all(|&v| v == 0.0));
        assert!(step_adj(&cfg, x, &z).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tlm_is_additive() {
        let cfg = cfg40();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = &attractor_states(&cfg, 1, 6).unwrap()[0];
        let a = normal_vec(&mut rng, 40);
        let b = normal_vec(&mut rng, 40);
        let ab: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u + v).collect();
        let ta = step_tlm(&cfg, x, &a).unwrap();
        let tb = step_tlm(&cfg, x, &b).unwrap();
        let tab = step_tlm(&cfg, x, &ab).unwrap();
        for i in 0..40 {
            assert!((tab[i] - ta[i] - tb[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn materialised_adjoint_is_transpose_of_tlm() {
        let cfg = cfg40();
        let x = &attractor_states(&cfg, 1, 9).unwrap()[0];
        let m = reference_jacobian(&cfg, x).unwrap();
        let mt = JacobianMatrix::from_columns(40, 40, |k| {
            Ok(step_adj(&cfg, x, &StateVector::basis(40, k))?.into_inner())
        })
        .unwrap();
        // column k of M^T is row k of M
        assert!(mt.max_abs_diff(&m.transpose()) < 1e-14);
    }

    #[test]
    fn jacobian_products_reproduce_tlm_and_adjoint() {
        let cfg = cfg40();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = &attractor_states(&cfg, 1, 13).unwrap()[0];
        let j = reference_jacobian(&cfg, x).unwrap();
        let dx = normal_vec(&mut rng, 40);
        let yh = normal_vec(&mut rng, 40);
        let tl = step_tlm(&cfg, x, &dx).unwrap();
        let ad = step_adj(&cfg, x, &yh).unwrap();
        for (a, b) in j.mul_vec(&dx).iter().zip(tl.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
        for (a, b) in j.tmul_vec(&yh).iter().zip(ad.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    fn fd_jacobian(cfg: &Lorenz96Config, x: &[f64], eps: f64) -> JacobianMatrix {
        JacobianMatrix::from_columns(cfg.n, cfg.n, |j| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += eps;
            xm[j] -= eps;
            let p = step_rk4(cfg, &xp)?;
            let m = step_rk4(cfg, &xm)?;
            Ok(p.iter().zip(m.iter()).map(|(a, b)| (a - b) / (2.0 * eps)).collect())
        })
        .unwrap()
    }

    #[test]
    fn jacobian_at_equilibrium_matches_finite_differences() {
        let cfg = cfg40();
        let eq = cfg.equilibrium();
        let j = reference_jacobian(&cfg, &eq).unwrap();
        assert!(j.max_abs_diff(&fd_jacobian(&cfg, &eq, 1e-6)) < 1e-7);
    }

    #[test]
    fn jacobian_on_attractor_matches_finite_differences() {
        let cfg = cfg40();
        for x in attractor_states(&cfg, 10, 21).unwrap() {
            let j = reference_jacobian(&cfg, &x).unwrap();
            assert!(j.max_abs_diff(&fd_jacobian(&cfg, &x, 1e-6)) < 1e-6);
        }
    }

    #[test]
    fn taylor_residual_is_second_order() {
        let cfg = cfg40();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = &attractor_states(&cfg, 1, 2).unwrap()[0];
        let dx = normal_vec(&mut rng, 40);
        let base = step_rk4(&cfg, x).unwrap();
        let tl = step_tlm(&cfg, x, &dx).unwrap();
        let residual = |eps: f64| {
            let p = step_rk4(&cfg, &x.axpy(eps, &dx)).unwrap();
            let r: Vec<f64> = (0..40).map(|i| p[i] - base[i] - eps * tl[i]).collect();
            r.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let mut eps = 1e-2;
        for _ in 0..3 {
            let ratio = residual(eps) / residual(eps / 2.0);
            assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
            eps /= 2.0;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn adjoint_dot_product_identity(seed in any::<u64>(), scale in 0.1f64..10.0) {
            let cfg = cfg40();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = normal_vec(&mut rng, 40).iter().map(|v| 2.3 + 3.6 * v).collect();
            let dx: Vec<f64> = normal_vec(&mut rng, 40).iter().map(|v| scale * v).collect();
            let yh = normal_vec(&mut rng, 40);
            let mdx = step_tlm(&cfg, &x, &dx).unwrap();
            let mty = step_adj(&cfg, &x, &yh).unwrap();
            let lhs = mdx.dot(&yh);
            let rhs = mty.dot(&dx);
            let denom = mdx.norm() * yh.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-300;
            prop_assert!((lhs - rhs).abs() / denom < 1e-12);
        }

        #[test]
        fn tlm_is_homogeneous(seed in any::<u64>(), a in -20.0f64..20.0) {
            let cfg = cfg40();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = normal_vec(&mut rng, 40).iter().map(|v| 2.3 + 3.6 * v).collect();
            let dx = normal_vec(&mut rng, 40);
            let scaled: Vec<f64> = dx.iter().map(|v| a * v).collect();
            let t1 = step_tlm(&cfg, &x, &scaled).unwrap();
            let t2 = step_tlm(&cfg, &x, &dx).unwrap();
            for i in 0..40 {
                prop_assert!((t1[i] - a * t2[i]).abs() <= 1e-12 * (1.0 + a.abs() * t2[i].abs()));
            }
        }
    }
}
