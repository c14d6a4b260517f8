//! Side-by-side comparisons of a standard network, a Jacobian-enforced
//! network and the physics: forecast, tangent and adjoint profiles per site,
//! Jacobian deviations, and CSV/SVG export of the same.
//!
//! Exported files (all under one directory):
//!
//! | file | columns |
//! |---|---|
//! | `forecast.csv`, `tlm.csv`, `adj.csv` | `site,y_true,y_nn,y_jenn,abs_diff_nn,abs_diff_jenn` |
//! | `jacobian.csv` | `row,col,j_true,j_nn,j_jenn,dev_nn,dev_jenn` |
//! | `probe_errors.csv` | `probe,kind,mean_abs_nn,mean_abs_jenn` |
//!
//! SVG files share the CSV stems. Profiles are line plots (values on top,
//! absolute differences below); the Jacobian is five `n x n` heat maps
//! (`j_true`, `j_nn`, `j_jenn`, `dev_nn`, `dev_jenn`), one `<rect
//! class="cell">` per entry with the value in its `<title>`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SensitivitySet;
use crate::emulator::Emulator;
use crate::error::{check_len, Error, Result};
use crate::lorenz96::{self, Lorenz96Config};
use crate::state::{JacobianMatrix, StateVector};

/// One figure's worth of per-site values.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonProfile {
    pub y_true: Vec<f64>,
    pub y_nn: Vec<f64>,
    pub y_jenn: Vec<f64>,
    pub abs_diff_nn: Vec<f64>,
    pub abs_diff_jenn: Vec<f64>,
}

fn abs_diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ComparisonProfile {
    pub fn new(y_true: StateVector, y_nn: StateVector, y_jenn: StateVector) -> Self {
        let abs_diff_nn = abs_diff(&y_nn, &y_true);
        let abs_diff_jenn = abs_diff(&y_jenn, &y_true);
        ComparisonProfile {
            y_true: y_true.into_inner(),
            y_nn: y_nn.into_inner(),
            y_jenn: y_jenn.into_inner(),
            abs_diff_nn,
            abs_diff_jenn,
        }
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn mean_abs_diff_nn(&self) -> f64 {
        mean(&self.abs_diff_nn)
    }

    pub fn mean_abs_diff_jenn(&self) -> f64 {
        mean(&self.abs_diff_jenn)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianComparison {
    pub j_true: JacobianMatrix,
    pub j_nn: JacobianMatrix,
    pub j_jenn: JacobianMatrix,
    pub dev_nn: JacobianMatrix,
    pub dev_jenn: JacobianMatrix,
    /// `||dev_nn||_F / n`
    pub frob_rmse_nn: f64,
    pub frob_rmse_jenn: f64,
}

fn check_dims(nn: &dyn Emulator, jenn: &dyn Emulator, cfg: &Lorenz96Config) -> Result<()> {
    check_len("standard emulator dimension", cfg.n, nn.state_dim())?;
    check_len("jenn emulator dimension", cfg.n, jenn.state_dim())
}

pub fn compare_forecast(
    nn: &dyn Emulator,
    jenn: &dyn Emulator,
    cfg: &Lorenz96Config,
    x: &[f64],
) -> Result<ComparisonProfile> {
    check_dims(nn, jenn, cfg)?;
    Ok(ComparisonProfile::new(
        lorenz96::step_rk4(cfg, x)?,
        nn.predict(x)?,
        jenn.predict(x)?,
    ))
}

pub fn compare_tlm(
    nn: &dyn Emulator,
    jenn: &dyn Emulator,
    cfg: &Lorenz96Config,
    x: &[f64],
    dx: &[f64],
) -> Result<ComparisonProfile> {
    check_dims(nn, jenn, cfg)?;
    Ok(ComparisonProfile::new(
        lorenz96::step_tlm(cfg, x, dx)?,
        nn.tangent(x, dx)?,
        jenn.tangent(x, dx)?,
    ))
}

pub fn compare_adj(
    nn: &dyn Emulator,
    jenn: &dyn Emulator,
    cfg: &Lorenz96Config,
    x: &[f64],
    yhat: &[f64],
) -> Result<ComparisonProfile> {
    check_dims(nn, jenn, cfg)?;
    Ok(ComparisonProfile::new(
        lorenz96::step_adj(cfg, x, yhat)?,
        nn.adjoint(x, yhat)?,
        jenn.adjoint(x, yhat)?,
    ))
}

pub fn compare_jacobian(
    nn: &dyn Emulator,
    jenn: &dyn Emulator,
    cfg: &Lorenz96Config,
    x: &[f64],
) -> Result<JacobianComparison> {
    check_dims(nn, jenn, cfg)?;
    let j_true = lorenz96::reference_jacobian(cfg, x)?;
    let j_nn = nn.jacobian(x)?;
    let j_jenn = jenn.jacobian(x)?;
    let dev_nn = j_nn.sub(&j_true)?;
    let dev_jenn = j_jenn.sub(&j_true)?;
    let n = cfg.n as f64;
    Ok(JacobianComparison {
        frob_rmse_nn: dev_nn.frobenius_norm() / n,
        frob_rmse_jenn: dev_jenn.frobenius_norm() / n,
        j_true,
        j_nn,
        j_jenn,
        dev_nn,
        dev_jenn,
    })
}

/// Mean absolute errors of one probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeError {
    pub nn: f64,
    pub jenn: f64,
}

/// Per-probe errors over a seeded evaluation set, in probe order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticSummary {
    pub forecast: Vec<ProbeError>,
    pub tlm: Vec<ProbeError>,
    pub adj: Vec<ProbeError>,
    /// Frobenius RMSE per Jacobian state.
    pub jacobian: Vec<ProbeError>,
}

fn means(v: &[ProbeError]) -> ProbeError {
    let n = v.len() as f64;
    ProbeError {
        nn: v.iter().map(|p| p.nn).sum::<f64>() / n,
        jenn: v.iter().map(|p| p.jenn).sum::<f64>() / n,
    }
}

impl DiagnosticSummary {
    pub fn mean_forecast(&self) -> ProbeError {
        means(&self.forecast)
    }

    pub fn mean_tlm(&self) -> ProbeError {
        means(&self.tlm)
    }

    pub fn mean_adj(&self) -> ProbeError {
        means(&self.adj)
    }

    pub fn mean_jacobian(&self) -> ProbeError {
        means(&self.jacobian)
    }
}

/// Errors of both networks on every record of `probes` (forecast from the
/// record state, tangent along its `dx`, adjoint of its `yhat`) and the
/// Jacobian at each of `jacobian_states`.
pub fn summarize(
    nn: &dyn Emulator,
    jenn: &dyn Emulator,
    probes: &SensitivitySet,
    jacobian_states: &[StateVector],
) -> Result<DiagnosticSummary> {
    if probes.is_empty() || jacobian_states.is_empty() {
        return Err(Error::EmptyBatch("summarize"));
    }
    let cfg = probes.config;
    let per_record = |f: &(dyn Fn(&crate::dataset::SensitivityRecord) -> Result<ComparisonProfile> + Sync)| {
        probes
            .records
            .par_iter()
            .map(|r| {
                let p = f(r)?;
                Ok(ProbeError {
                    nn: p.mean_abs_diff_nn(),
                    jenn: p.mean_abs_diff_jenn(),
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let forecast = per_record(&|r| compare_forecast(nn, jenn, &cfg, &r.x))?;
    let tlm = per_record(&|r| compare_tlm(nn, jenn, &cfg, &r.x, &r.dx))?;
    let adj = per_record(&|r| compare_adj(nn, jenn, &cfg, &r.x, &r.yhat))?;
    let jacobian = jacobian_states
        .par_iter()
        .map(|x| {
            let c = compare_jacobian(nn, jenn, &cfg, x)?;
            Ok(ProbeError {
                nn: c.frob_rmse_nn,
                jenn: c.frob_rmse_jenn,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticSummary {
        forecast,
        tlm,
        adj,
        jacobian,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Svg,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "svg" => Ok(ExportFormat::Svg),
            other => Err(Error::Config(format!("unknown export format {other:?} (expected csv or svg)"))),
        }
    }
}

pub const PROFILE_COLUMNS: [&str; 6] = ["site", "y_true", "y_nn", "y_jenn", "abs_diff_nn", "abs_diff_jenn"];
pub const JACOBIAN_COLUMNS: [&str; 7] = ["row", "col", "j_true", "j_nn", "j_jenn", "dev_nn", "dev_jenn"];
pub const PROBE_COLUMNS: [&str; 4] = ["probe", "kind", "mean_abs_nn", "mean_abs_jenn"];

/// Everything exported by [`export_figure_data`].
#[derive(Debug, Clone, PartialEq)]
pub struct FigureSet {
    pub forecast: ComparisonProfile,
    pub tlm: ComparisonProfile,
    pub adj: ComparisonProfile,
    pub jacobian: JacobianComparison,
    pub summary: Option<DiagnosticSummary>,
}

impl FigureSet {
    /// Figures for one state and perturbation pair.
    pub fn build(
        nn: &dyn Emulator,
        jenn: &dyn Emulator,
        cfg: &Lorenz96Config,
        x: &[f64],
        dx: &[f64],
        yhat: &[f64],
    ) -> Result<Self> {
        Ok(FigureSet {
            forecast: compare_forecast(nn, jenn, cfg, x)?,
            tlm: compare_tlm(nn, jenn, cfg, x, dx)?,
            adj: compare_adj(nn, jenn, cfg, x, yhat)?,
            jacobian: compare_jacobian(nn, jenn, cfg, x)?,
            summary: None,
        })
    }
}

fn fmt(v: f64) -> String {
    // shortest representation that parses back to the same f64
    format!("{v:?}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn profile_rows(p: &ComparisonProfile) -> Vec<Vec<String>> {
    (0..p.len())
        .map(|i| {
            vec![
                i.to_string(),
                fmt(p.y_true[i]),
                fmt(p.y_nn[i]),
                fmt(p.y_jenn[i]),
                fmt(p.abs_diff_nn[i]),
                fmt(p.abs_diff_jenn[i]),
            ]
        })
        .collect()
}

fn jacobian_rows(c: &JacobianComparison) -> Vec<Vec<String>> {
    let mut rows = Vec::with_capacity(c.j_true.rows() * c.j_true.cols());
    for i in 0..c.j_true.rows() {
        for j in 0..c.j_true.cols() {
            rows.push(vec![
                i.to_string(),
                j.to_string(),
                fmt(c.j_true.get(i, j)),
                fmt(c.j_nn.get(i, j)),
                fmt(c.j_jenn.get(i, j)),
                fmt(c.dev_nn.get(i, j)),
                fmt(c.dev_jenn.get(i, j)),
            ]);
        }
    }
    rows
}

fn probe_rows(s: &DiagnosticSummary) -> Vec<Vec<String>> {
    let groups = [("forecast", &s.forecast), ("tlm", &s.tlm), ("adj", &s.adj), ("jacobian", &s.jacobian)];
    groups
        .iter()
        .flat_map(|(kind, v)| {
            v.iter()
                .enumerate()
                .map(move |(i, p)| vec![i.to_string(), (*kind).to_owned(), fmt(p.nn), fmt(p.jenn)])
        })
        .collect()
}

const PROFILE_FIGURES: [(&str, &str); 3] = [
    ("forecast", "One-step forecast"),
    ("tlm", "Tangent linear response"),
    ("adj", "Adjoint response"),
];

/// Writes the figure data under `dir` in each requested format and returns
/// the written paths in a fixed order.
pub fn export_figure_data(figs: &FigureSet, dir: &Path, formats: &[ExportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let profiles = [&figs.forecast, &figs.tlm, &figs.adj];
    let mut written = Vec::new();
    for format in formats {
        match format {
            ExportFormat::Csv => {
                for ((stem, _), p) in PROFILE_FIGURES.iter().zip(profiles) {
                    let path = dir.join(format!("{stem}.csv"));
                    write_csv(&path, &PROFILE_COLUMNS, profile_rows(p))?;
                    written.push(path);
                }
                let path = dir.join("jacobian.csv");
                write_csv(&path, &JACOBIAN_COLUMNS, jacobian_rows(&figs.jacobian))?;
                written.push(path);
                if let Some(s) = &figs.summary {
                    let path = dir.join("probe_errors.csv");
                    write_csv(&path, &PROBE_COLUMNS, probe_rows(s))?;
                    written.push(path);
                }
            }
            ExportFormat::Svg => {
                for ((stem, title), p) in PROFILE_FIGURES.iter().zip(profiles) {
                    let path = dir.join(format!("{stem}.svg"));
                    fs::write(&path, profile_svg(title, p)).map_err(|e| Error::io(&path, e))?;
                    written.push(path);
                }
                let path = dir.join("jacobian.svg");
                fs::write(&path, jacobian_svg(&figs.jacobian)).map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

const SERIES: [(&str, &str); 3] = [("true", "#000000"), ("nn", "#1f77b4"), ("jenn", "#d62728")];

fn polyline(out: &mut String, values: &[f64], x0: f64, y0: f64, w: f64, h: f64, lo: f64, hi: f64, colour: &str) {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let step = if values.len() > 1 { w / (values.len() - 1) as f64 } else { 0.0 };
    let pts: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{:.2},{:.2}", x0 + step * i as f64, y0 + h - (v - lo) / span * h))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
        pts.join(" ")
    );
}

fn range(series: &[&[f64]]) -> (f64, f64) {
    series
        .iter()
        .flat_map(|s| s.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn profile_svg(title: &str, p: &ComparisonProfile) -> String {
    let (w, h, pad) = (640.0, 200.0, 40.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        w + 2.0 * pad,
        2.0 * h + 3.0 * pad
    );
    let _ = writeln!(out, r#"<text x="{pad}" y="20" font-size="14">{}</text>"#, escape(title));
    let panels: [(&str, [&[f64]; 3]); 2] = [
        ("value", [&p.y_true, &p.y_nn, &p.y_jenn]),
        ("absolute difference", [&[], &p.abs_diff_nn, &p.abs_diff_jenn]),
    ];
    for (k, (label, series)) in panels.iter().enumerate() {
        let y0 = pad + k as f64 * (h + pad);
        let (lo, hi) = range(series);
        let _ = writeln!(
            out,
            r##"<g class="panel" id="panel-{k}"><rect x="{pad}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#999999"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{label}: [{}, {}]</text>"#,
            pad + 4.0,
            y0 + 12.0,
            fmt(lo),
            fmt(hi)
        );
        for ((_, colour), s) in SERIES.iter().zip(series) {
            if !s.is_empty() {
                polyline(&mut out, s, pad, y0, w, h, lo, hi, colour);
            }
        }
        out.push_str("</g>\n");
    }
    let legend_y = 2.0 * h + 2.5 * pad;
    for (i, (name, colour)) in SERIES.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{legend_y}" fill="{colour}">{name}</text>"#,
            pad + 60.0 * i as f64
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{legend_y}">site 0 .. {}</text>"#, pad + 200.0, p.len().saturating_sub(1));
    out.push_str("</svg>\n");
    out
}

/// Diverging blue-white-red colour for `v` in `[-scale, scale]`.
fn diverging(v: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |c: f64| (255.0 * (1.0 - t.abs()) + c * t.abs()).round() as u8;
    let (r, g, b) = if t >= 0.0 {
        (fade(178.0), fade(24.0), fade(43.0))
    } else {
        (fade(33.0), fade(102.0), fade(172.0))
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn jacobian_svg(c: &JacobianComparison) -> String {
    let n = c.j_true.rows();
    let cell = (240.0 / n as f64).max(2.0);
    let side = cell * n as f64;
    let gap = 30.0;
    let value_scale = [&c.j_true, &c.j_nn, &c.j_jenn]
        .iter()
        .map(|m| m.max_abs())
        .fold(0.0, f64::max);
    let dev_scale = c.dev_nn.max_abs().max(c.dev_jenn.max_abs());
    let panels: [(&str, &JacobianMatrix, f64); 5] = [
        ("j_true", &c.j_true, value_scale),
        ("j_nn", &c.j_nn, value_scale),
        ("j_jenn", &c.j_jenn, value_scale),
        ("dev_nn", &c.dev_nn, dev_scale),
        ("dev_jenn", &c.dev_jenn, dev_scale),
    ];
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        5.0 * (side + gap) + gap,
        side + 3.0 * gap + 20.0
    );
    for (k, (name, m, scale)) in panels.iter().enumerate() {
        let x0 = gap + k as f64 * (side + gap);
        let y0 = 2.0 * gap;
        let _ = writeln!(out, r#"<g class="panel" id="{name}" data-scale="{}">"#, fmt(*scale));
        let _ = writeln!(out, r#"<text x="{x0}" y="{}">{name}</text>"#, gap);
        for i in 0..n {
            for j in 0..n {
                let v = m.get(i, j);
                let _ = writeln!(
                    out,
                    r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"><title>({i},{j}) {}</title></rect>"#,
                    x0 + j as f64 * cell,
                    y0 + i as f64 * cell,
                    diverging(v, *scale),
                    fmt(v)
                );
            }
        }
        out.push_str("</g>\n");
    }
    let ly = side + 2.0 * gap + 20.0;
    let _ = writeln!(
        out,
        r#"<text class="legend" x="{gap}" y="{ly}">colour scale symmetric about 0: values ±{}, deviations ±{} (blue negative, red positive); frob_rmse nn {} jenn {}</text>"#,
        fmt(value_scale),
        fmt(dev_scale),
        fmt(c.frob_rmse_nn),
        fmt(c.frob_rmse_jenn)
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_sensitivity_set, generate_trajectory, PerturbationMode};
    use crate::emulator::{init_params, MlpArchitecture, PhysicsEmulator};

    fn cfg8() -> Lorenz96Config {
        Lorenz96Config::new(8, 8.0, 0.0125).unwrap()
    }

    fn attractor_x() -> StateVector {
        lorenz96::attractor_states(&cfg8(), 1, 4).unwrap().remove(0)
    }

    #[test]
    fn physics_stub_has_zero_differences() {
        let cfg = cfg8();
        let phys = PhysicsEmulator(cfg);
        let x = attractor_x();
        let dx = StateVector::basis(8, 3);
        let f = compare_forecast(&phys, &phys, &cfg, &x).unwrap();
        let t = compare_tlm(&phys, &phys, &cfg, &x, &dx).unwrap();
        let a = compare_adj(&phys, &phys, &cfg, &x, &dx).unwrap();
        for p in [&f, &t, &a] {
            assert!(p.abs_diff_nn.iter().chain(&p.abs_diff_jenn).all(|&d| d == 0.0));
        }
        let j = compare_jacobian(&phys, &phys, &cfg, &x).unwrap();
        assert_eq!(j.dev_nn.max_abs(), 0.0);
        assert_eq!(j.frob_rmse_jenn, 0.0);
    }

    #[test]
    fn profile_fields_recompute() {
        let cfg = cfg8();
        let nn = init_params(&MlpArchitecture::state_map(8, vec![16]), 1).unwrap();
        let jenn = init_params(&MlpArchitecture::state_map(8, vec![16]), 2).unwrap();
        let x = attractor_x();
        let p = compare_forecast(&nn, &jenn, &cfg, &x).unwrap();
        for i in 0..8 {
            assert_eq!(p.abs_diff_nn[i], (p.y_nn[i] - p.y_true[i]).abs());
            assert_eq!(p.abs_diff_jenn[i], (p.y_jenn[i] - p.y_true[i]).abs());
        }
        let zero = compare_tlm(&nn, &jenn, &cfg, &x, &StateVector::zeros(8)).unwrap();
        assert!(zero.y_true.iter().chain(&zero.y_nn).chain(&zero.abs_diff_jenn).all(|&v| v == 0.0));
        let zero = compare_adj(&nn, &jenn, &cfg, &x, &StateVector::zeros(8)).unwrap();
        assert!(zero.y_true.iter().chain(&zero.y_jenn).all(|&v| v == 0.0));

        let j = compare_jacobian(&nn, &jenn, &cfg, &x).unwrap();
        assert_eq!(j.frob_rmse_nn, j.j_nn.sub(&j.j_true).unwrap().frobenius_norm() / 8.0);
        assert_eq!(j.dev_jenn, j.j_jenn.sub(&j.j_true).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let nn = init_params(&MlpArchitecture::state_map(6, vec![4]), 1).unwrap();
        let cfg = cfg8();
        let x = attractor_x();
        assert!(compare_forecast(&nn, &nn, &cfg, &x).is_err());
    }

    #[test]
    fn summary_of_physics_is_zero() {
        let cfg = cfg8();
        let traj = generate_trajectory(&cfg, 2.0, 2.0, 0).unwrap();
        let sens = generate_sensitivity_set(&traj, 12, PerturbationMode::SparseSite, 0.01, 5).unwrap();
        let states: Vec<StateVector> = traj.pairs.iter().take(3).map(|p| p.0.clone()).collect();
        let phys = PhysicsEmulator(cfg);
        let s = summarize(&phys, &phys, &sens, &states).unwrap();
        assert_eq!(s.tlm.len(), 12);
        assert_eq!(s.jacobian.len(), 3);
        assert_eq!(s.mean_adj(), ProbeError { nn: 0.0, jenn: 0.0 });
    }

    #[test]
    fn diverging_scale_endpoints() {
        assert_eq!(diverging(0.0, 1.0), "#ffffff");
        assert_eq!(diverging(1.0, 1.0), "#b2182b");
        assert_eq!(diverging(-2.0, 1.0), "#2166ac");
        assert_eq!(diverging(0.3, 0.0), "#ffffff");
    }

    #[test]
    fn format_parse() {
        assert_eq!("svg".parse::<ExportFormat>().unwrap(), ExportFormat::Svg);
        assert!("png".parse::<ExportFormat>().is_err());
    }
}
