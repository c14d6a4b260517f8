//! Numerical self-checks of tangent linear / adjoint pairs, for the physics
//! and for any [`Emulator`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::emulator::Emulator;
use crate::error::Result;
use crate::lorenz96::{self, Lorenz96Config};
use crate::state::{dot, JacobianMatrix, StateVector};

pub const ADJOINT_TOL: f64 = 1e-12;
pub const TAYLOR_EPS: [f64; 4] = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
pub const TAYLOR_ORDER_TOL: f64 = 0.1;

/// Outcome of one check: the worst value seen and where.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub worst_probe: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: worst {:.3e} at probe {} (tolerance {:.1e}) {}",
            self.name,
            self.worst,
            self.worst_probe,
            self.tolerance,
            if self.passed { "ok" } else { "FAILED" }
        )
    }
}

fn worst_of(name: &'static str, values: &[f64], tolerance: f64) -> Check {
    let (worst_probe, worst) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, v)| if v > bv || v.is_nan() { (i, v) } else { (bi, bv) });
    Check {
        name,
        worst,
        worst_probe,
        tolerance,
        passed: values.iter().all(|v| *v < tolerance),
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> StateVector {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>().into()
}

/// `count` attractor states with Gaussian tangent and cotangent probes.
pub fn probes(cfg: &Lorenz96Config, count: usize, seed: u64) -> Result<Vec<(StateVector, StateVector, StateVector)>> {
    let states = lorenz96::attractor_states(cfg, count, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_ab1e);
    Ok(states
        .into_iter()
        .map(|x| {
            let dx = normal_vec(&mut rng, cfg.n);
            let yhat = normal_vec(&mut rng, cfg.n);
            (x, dx, yhat)
        })
        .collect())
}

/// `|<M dx, yhat> - <dx, M^T yhat>| / (|M dx| |yhat| + tiny)`
pub fn adjoint_discrepancy(mdx: &[f64], yhat: &[f64], dx: &[f64], mtyhat: &[f64]) -> f64 {
    let lhs = dot(mdx, yhat);
    let rhs = dot(dx, mtyhat);
    let scale = dot(mdx, mdx).sqrt() * dot(yhat, yhat).sqrt();
    (lhs - rhs).abs() / (scale + f64::MIN_POSITIVE)
}

/// Adjoint identity of an emulator's `tangent`/`adjoint` pair over `probes`.
pub fn transpose_identity(
    emulator: &dyn Emulator,
    probes: &[(StateVector, StateVector, StateVector)],
) -> Result<Check> {
    let mut rel = Vec::with_capacity(probes.len());
    for (x, dx, yhat) in probes {
        let mdx = emulator.tangent(x, dx)?;
        let mty = emulator.adjoint(x, yhat)?;
        rel.push(adjoint_discrepancy(&mdx, yhat, dx, &mty));
    }
    Ok(worst_of("transpose identity", &rel, ADJOINT_TOL))
}

/// Jacobian assembled row by row from `adjoint`.
pub fn jacobian_from_adjoint(emulator: &dyn Emulator, x: &[f64]) -> Result<JacobianMatrix> {
    let n = emulator.state_dim();
    JacobianMatrix::from_rows(n, n, |i| Ok(emulator.adjoint(x, &StateVector::basis(n, i))?.into_inner()))
}

/// Max-abs gap between the tangent-assembled and adjoint-assembled Jacobians.
pub fn jacobian_consistency(
    emulator: &dyn Emulator,
    probes: &[(StateVector, StateVector, StateVector)],
) -> Result<Check> {
    let mut gaps = Vec::with_capacity(probes.len());
    for (x, _, _) in probes {
        let a = emulator.jacobian(x)?;
        let b = jacobian_from_adjoint(emulator, x)?;
        gaps.push(a.max_abs_diff(&b));
    }
    Ok(worst_of("jacobian row/column consistency", &gaps, ADJOINT_TOL))
}

/// Taylor residuals `|M(x + e dx) - M(x) - e TLM(dx)|` of the physics over `eps`.
pub fn taylor_residuals(cfg: &Lorenz96Config, x: &[f64], dx: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    let base = lorenz96::step_rk4(cfg, x)?;
    let tl = lorenz96::step_tlm(cfg, x, dx)?;
    eps.iter()
        .map(|&e| {
            let xp: Vec<f64> = x.iter().zip(dx).map(|(a, d)| a + e * d).collect();
            let p = lorenz96::step_rk4(cfg, &xp)?;
            Ok((0..cfg.n)
                .map(|i| {
                    let r = p[i] - base[i] - e * tl[i];
                    r * r
                })
                .sum::<f64>()
                .sqrt())
        })
        .collect()
}

/// Least-squares slope of `log r` against `log eps`.
pub fn convergence_order(eps: &[f64], residuals: &[f64]) -> f64 {
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = residuals.iter().map(|r| r.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Physics checks: adjoint identity over all probes and Taylor order on each.
pub fn verify_physics(cfg: &Lorenz96Config, probes: &[(StateVector, StateVector, StateVector)]) -> Result<Vec<Check>> {
    let mut rel = Vec::with_capacity(probes.len());
    let mut order_err = Vec::with_capacity(probes.len());
    for (x, dx, yhat) in probes {
        let mdx = lorenz96::step_tlm(cfg, x, dx)?;
        let mty = lorenz96::step_adj(cfg, x, yhat)?;
        rel.push(adjoint_discrepancy(&mdx, yhat, dx, &mty));
        let r = taylor_residuals(cfg, x, dx, &TAYLOR_EPS)?;
        order_err.push((convergence_order(&TAYLOR_EPS, &r) - 2.0).abs());
    }
    Ok(vec![
        worst_of("physics adjoint identity", &rel, ADJOINT_TOL),
        worst_of("physics taylor order |p - 2|", &order_err, TAYLOR_ORDER_TOL),
    ])
}

/// Emulator checks: transpose identity and Jacobian assembly consistency.
pub fn verify_emulator(
    emulator: &dyn Emulator,
    probes: &[(StateVector, StateVector, StateVector)],
) -> Result<Vec<Check>> {
    Ok(vec![transpose_identity(emulator, probes)?, jacobian_consistency(emulator, probes)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{init_params, MlpArchitecture, PhysicsEmulator};

    #[test]
    fn order_of_exact_power_law() {
        let eps = TAYLOR_EPS;
        let r: Vec<f64> = eps.iter().map(|e| 3.0 * e * e).collect();
        assert!((convergence_order(&eps, &r) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn physics_passes() {
        let cfg = Lorenz96Config::default();
        let p = probes(&cfg, 10, 0).unwrap();
        for c in verify_physics(&cfg, &p).unwrap() {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn emulators_pass() {
        let cfg = Lorenz96Config::new(8, 8.0, 0.0125).unwrap();
        let p = probes(&cfg, 5, 1).unwrap();
        let net = init_params(&MlpArchitecture::state_map(8, vec![16, 16]), 0).unwrap();
        for c in verify_emulator(&net, &p).unwrap().into_iter().chain(verify_emulator(&PhysicsEmulator(cfg), &p).unwrap()) {
            assert!(c.passed, "{c}");
        }
    }

    /// An emulator whose adjoint is not the transpose of its tangent.
    struct Broken;

    impl Emulator for Broken {
        fn state_dim(&self) -> usize {
            4
        }
        fn predict(&self, x: &[f64]) -> Result<StateVector> {
            Ok(x.to_vec().into())
        }
        fn tangent(&self, _: &[f64], dx: &[f64]) -> Result<StateVector> {
            Ok(vec![dx[1], dx[0], dx[2], dx[3]].into())
        }
        fn adjoint(&self, _: &[f64], y: &[f64]) -> Result<StateVector> {
            Ok(y.to_vec().into())
        }
        fn jacobian(&self, _: &[f64]) -> Result<JacobianMatrix> {
            JacobianMatrix::from_columns(4, 4, |j| {
                let mut e = vec![0.0; 4];
                e[[1, 0, 2, 3][j]] = 1.0;
                Ok(e)
            })
        }
    }

    #[test]
    fn broken_adjoint_is_reported() {
        let cfg = Lorenz96Config::new(4, 8.0, 0.0125).unwrap();
        let p = probes(&cfg, 3, 0).unwrap();
        let checks = verify_emulator(&Broken, &p).unwrap();
        assert!(checks.iter().all(|c| !c.passed));
        assert!(checks[0].to_string().contains("FAILED"));
    }
}
