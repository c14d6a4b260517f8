//! Full-batch L-BFGS with a strong Wolfe line search.
//!
//! Two-loop recursion over the `memory` most recent curvature pairs, initial
//! Hessian scaling `<s, y> / <y, y>`, and the bracketing/zoom line search with
//! safeguarded cubic interpolation. Everything is sequential and deterministic:
//! the same objective, start point and config give the same iterates.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the sup-norm of the gradient falls to this value.
    pub grad_tol: f64,
    /// Stop when an accepted step lowers the loss by less than this, relative
    /// to `max(|f_old|, |f_new|, 1)`.
    pub loss_tol: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_line_search_steps: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iters: 2000,
            grad_tol: 1e-8,
            loss_tol: 1e-12,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_steps: 25,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 || self.max_iters == 0 || self.max_line_search_steps == 0 {
            return Err(Error::Config(
                "memory, max_iters and max_line_search_steps must be positive".into(),
            ));
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::Config(format!(
                "Wolfe constants must satisfy 0 < c1 < c2 < 1, got c1={} c2={}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if !(self.grad_tol > 0.0 && self.loss_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    LossTol,
    MaxIters,
    LineSearchFailure,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::GradTol => "grad_tol",
            Termination::LossTol => "loss_tol",
            Termination::MaxIters => "max_iters",
            Termination::LineSearchFailure => "line_search_failure",
        })
    }
}

impl FromStr for Termination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad_tol" => Ok(Termination::GradTol),
            "loss_tol" => Ok(Termination::LossTol),
            "max_iters" => Ok(Termination::MaxIters),
            "line_search_failure" => Ok(Termination::LineSearchFailure),
            other => Err(Error::Config(format!("unknown termination {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    /// Accepted steps.
    pub iterations: usize,
    pub final_loss: f64,
    /// Sup-norm of the final gradient.
    pub final_grad_norm: f64,
    pub termination: Termination,
    /// Loss at the start point followed by the loss after every accepted step.
    pub loss_history: Vec<f64>,
    pub evaluations: usize,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct Trial {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    /// Directional derivative along the search direction.
    slope: f64,
}

struct Evaluator<F> {
    objective: F,
    evaluations: usize,
}

impl<F> Evaluator<F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let (f, g) = (self.objective)(x)?;
        if g.len() != x.len() {
            return Err(Error::Shape {
                context: "objective gradient",
                expected: x.len(),
                got: g.len(),
            });
        }
        Ok((f, g))
    }

    /// Objective along `x + alpha d`. Non-finite values are reported as
    /// `f = +inf` so the line search backs off instead of aborting.
    fn trial(&mut self, x: &[f64], d: &[f64], alpha: f64) -> Result<Trial> {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let (f, g) = self.eval(&xt)?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Ok(Trial {
                alpha,
                f: f64::INFINITY,
                g,
                slope: f64::NAN,
            });
        }
        let slope = dot(&g, d);
        Ok(Trial { alpha, f, g, slope })
    }
}

/// Minimiser of the cubic interpolating `(a, fa, da)` and `(b, fb, db)`,
/// clamped to `[lo, hi]`; falls back to the midpoint of the bounds.
fn cubic_minimizer(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64, lo: f64, hi: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc >= 0.0 && disc.is_finite() {
        let d2 = disc.sqrt();
        let t = if a <= b {
            b - (b - a) * ((db + d2 - d1) / (db - da + 2.0 * d2))
        } else {
            a - (a - b) * ((da + d2 - d1) / (da - db + 2.0 * d2))
        };
        if t.is_finite() {
            return t.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

enum Search {
    Accepted(Trial),
    /// No Wolfe point found; carries the lowest sufficient-decrease trial, if any.
    Failed(Option<Trial>),
}

struct LineSearch<'a> {
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
    max_steps: usize,
    x: &'a [f64],
    d: &'a [f64],
}

impl LineSearch<'_> {
    fn armijo(&self, t: &Trial) -> bool {
        t.f <= self.f0 + self.c1 * t.alpha * self.slope0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.slope.abs() <= -self.c2 * self.slope0
    }

    fn accept(&self, t: Trial) -> Search {
        debug_assert!(self.armijo(&t) && self.curvature(&t), "strong Wolfe violated");
        Search::Accepted(t)
    }

    fn run<F>(&self, ev: &mut Evaluator<F>, alpha0: f64) -> Result<Search>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let mut best: Option<Trial> = None;
        let remember = |t: &Trial, best: &mut Option<Trial>| {
            if self.armijo(t) && t.f < self.f0 && best.as_ref().is_none_or(|b| t.f < b.f) {
                *best = Some(Trial {
                    alpha: t.alpha,
                    f: t.f,
                    g: t.g.clone(),
                    slope: t.slope,
                });
            }
        };

        let mut prev = Trial {
            alpha: 0.0,
            f: self.f0,
            g: Vec::new(),
            slope: self.slope0,
        };
        let mut alpha = alpha0;
        let mut steps = 0;
        while steps < self.max_steps {
            let t = ev.trial(self.x, self.d, alpha)?;
            steps += 1;
            remember(&t, &mut best);
            if !self.armijo(&t) || (steps > 1 && t.f >= prev.f) || t.slope.is_nan() {
                return self.zoom(ev, prev, t, steps, best);
            }
            if self.curvature(&t) {
                return Ok(self.accept(t));
            }
            if t.slope >= 0.0 {
                return self.zoom(ev, t, prev, steps, best);
            }
            let lo = alpha + 0.01 * (alpha - prev.alpha);
            let hi = 10.0 * alpha;
            let next = cubic_minimizer(prev.alpha, prev.f, prev.slope, t.alpha, t.f, t.slope, lo, hi);
            prev = t;
            alpha = next;
        }
        Ok(Search::Failed(best))
    }

    /// Shrinks the bracket `[lo, hi]`, where `lo` satisfies sufficient decrease
    /// and has the lowest loss seen so far.
    fn zoom<F>(
        &self,
        ev: &mut Evaluator<F>,
        mut lo: Trial,
        mut hi: Trial,
        mut steps: usize,
        mut best: Option<Trial>,
    ) -> Result<Search>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let d_scale = sup_norm(self.d);
        while steps < self.max_steps {
            let width = (hi.alpha - lo.alpha).abs();
            if width * d_scale < 1e-16 * (1.0 + lo.alpha.abs() * d_scale) {
                break;
            }
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let margin = 0.1 * width;
            let alpha = if hi.f.is_finite() && hi.slope.is_finite() {
                cubic_minimizer(lo.alpha, lo.f, lo.slope, hi.alpha, hi.f, hi.slope, a + margin, b - margin)
            } else {
                0.5 * (a + b)
            };
            let t = ev.trial(self.x, self.d, alpha)?;
            steps += 1;
            if self.armijo(&t) && t.f < self.f0 && best.as_ref().is_none_or(|b| t.f < b.f) {
                best = Some(Trial {
                    alpha: t.alpha,
                    f: t.f,
                    g: t.g.clone(),
                    slope: t.slope,
                });
            }
            if !self.armijo(&t) || t.f >= lo.f || t.slope.is_nan() {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Ok(self.accept(t));
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
        Ok(Search::Failed(best))
    }
}

/// Two-loop recursion: returns `-H g` for the implicit inverse Hessian `H`.
fn lbfgs_direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += si * (a - b);
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimises `objective` from `x0`.
///
/// `objective` returns the loss and its gradient. A non-finite loss or
/// gradient at the start point is an error; inside the line search such
/// points are treated as overshoots.
pub fn minimize<F>(objective: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Result<(Vec<f64>, OptimizeReport)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("optimizer start point".into()));
    }
    let mut ev = Evaluator {
        objective,
        evaluations: 0,
    };
    let (f, g) = ev.eval(&x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "objective at start point: loss {f}, gradient finite: {}",
            g.iter().all(|v| v.is_finite())
        )));
    }
    let mut cur = Point { x: x0, f, g };
    let mut history = vec![cur.f];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;

    let termination = 'outer: loop {
        if sup_norm(&cur.g) <= cfg.grad_tol {
            break Termination::GradTol;
        }
        if iterations >= cfg.max_iters {
            break Termination::MaxIters;
        }

        let mut retried = false;
        let accepted = loop {
            let (d, alpha0) = {
                let d = lbfgs_direction(&cur.g, &memory);
                let slope = dot(&cur.g, &d);
                if memory.is_empty() || !(slope < 0.0) {
                    memory.clear();
                    let d: Vec<f64> = cur.g.iter().map(|v| -v).collect();
                    let l1: f64 = cur.g.iter().map(|v| v.abs()).sum();
                    (d, (1.0 / l1).min(1.0))
                } else {
                    (d, 1.0)
                }
            };
            let search = LineSearch {
                f0: cur.f,
                slope0: dot(&cur.g, &d),
                c1: cfg.wolfe_c1,
                c2: cfg.wolfe_c2,
                max_steps: cfg.max_line_search_steps,
                x: &cur.x,
                d: &d,
            };
            match search.run(&mut ev, alpha0)? {
                Search::Accepted(t) => break (d, t),
                Search::Failed(best) => {
                    if !memory.is_empty() && !retried {
                        memory.clear();
                        retried = true;
                        continue;
                    }
                    if let Some(t) = best {
                        cur.x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += t.alpha * di);
                        cur.f = t.f;
                        cur.g = t.g;
                        iterations += 1;
                        history.push(cur.f);
                    }
                    break 'outer Termination::LineSearchFailure;
                }
            }
        };

        let (d, t) = accepted;
        let s: Vec<f64> = d.iter().map(|di| t.alpha * di).collect();
        let y: Vec<f64> = t.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == cfg.memory {
                memory.pop_front();
            }
            memory.push_back((s.clone(), y, 1.0 / sy));
        }
        let f_old = cur.f;
        cur.x.iter_mut().zip(&s).for_each(|(xi, si)| *xi += si);
        cur.f = t.f;
        cur.g = t.g;
        iterations += 1;
        history.push(cur.f);

        if sup_norm(&cur.g) <= cfg.grad_tol {
            break Termination::GradTol;
        }
        if f_old - cur.f <= cfg.loss_tol * f_old.abs().max(cur.f.abs()).max(1.0) {
            break Termination::LossTol;
        }
    };

    let report = OptimizeReport {
        iterations,
        final_loss: cur.f,
        final_grad_norm: sup_norm(&cur.g),
        termination,
        loss_history: history,
        evaluations: ev.evaluations,
    };
    Ok((cur.x, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    #[test]
    fn quadratic_converges_quickly() {
        let c = [3.0, -1.0, 0.5, 7.0];
        let quad = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let r: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
            Ok((dot(&r, &r), r.iter().map(|v| 2.0 * v).collect()))
        };
        let (x, rep) = minimize(quad, vec![0.0; 4], &LbfgsConfig::default()).unwrap();
        assert!(rep.iterations <= 10);
        assert_eq!(rep.termination, Termination::GradTol);
        for (a, b) in x.iter().zip(&c) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let cfg = LbfgsConfig {
            max_iters: 200,
            ..Default::default()
        };
        let (x, rep) = minimize(rosenbrock, vec![-1.2, 1.0], &cfg).unwrap();
        assert!(rep.final_loss < 1e-8, "{rep:?}");
        assert!(rep.iterations <= 200);
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] - 1.0).abs() < 1e-3);
        for w in rep.loss_history.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let flat = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((1.0, vec![0.0; x.len()])) };
        let (x, rep) = minimize(flat, vec![2.0, 3.0], &LbfgsConfig::default()).unwrap();
        assert_eq!(x, vec![2.0, 3.0]);
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.termination, Termination::GradTol);
        assert_eq!(rep.evaluations, 1);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let bad = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((f64::NAN, vec![1.0])) };
        assert!(matches!(minimize(bad, vec![0.0], &LbfgsConfig::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn overflowing_trial_points_are_backed_off() {
        // exp blows up far from the origin; the first steepest-descent trials overshoot
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = (x[0] * 400.0).exp() + x[0] * x[0];
            Ok((v, vec![400.0 * (x[0] * 400.0).exp() + 2.0 * x[0]]))
        };
        let (_, rep) = minimize(f, vec![-2.0], &LbfgsConfig::default()).unwrap();
        assert!(rep.final_loss.is_finite());
        assert!(rep.final_loss <= rep.loss_history[0]);
    }

    #[test]
    fn iterates_are_deterministic() {
        let cfg = LbfgsConfig {
            max_iters: 30,
            ..Default::default()
        };
        let a = minimize(rosenbrock, vec![-1.2, 1.0], &cfg).unwrap();
        let b = minimize(rosenbrock, vec![-1.2, 1.0], &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn max_iters_is_respected() {
        let cfg = LbfgsConfig {
            max_iters: 3,
            ..Default::default()
        };
        let (_, rep) = minimize(rosenbrock, vec![-1.2, 1.0], &cfg).unwrap();
        assert_eq!(rep.iterations, 3);
        assert_eq!(rep.termination, Termination::MaxIters);
        assert_eq!(rep.loss_history.len(), 4);
    }

    #[test]
    fn invalid_wolfe_constants_rejected() {
        let cfg = LbfgsConfig {
            wolfe_c1: 0.9,
            wolfe_c2: 0.1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
