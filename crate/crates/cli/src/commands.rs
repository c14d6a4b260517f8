use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use jenn_core::dataset::{load_trajectory, save_dataset, Dataset};
use jenn_core::diagnostics::{export_figure_data, summarize, ExportFormat, FigureSet};
use jenn_core::emulator::checkpoint::{
    checkpoint_paths, load_checkpoint, load_emulator, save_checkpoint, save_physics_checkpoint, Phase,
};
use jenn_core::emulator::{Emulator, MlpParams};
use jenn_core::experiment::{prepare_data, run_phase1, run_phase2, split_data, ExperimentData, RunReport};
use jenn_core::training::{evaluate, LossWeights, MetricsReport};
use jenn_core::verify;

use crate::config::{ModelArgs, RunConfig};
use crate::UsageError;

pub const TRAJECTORY_FILE: &str = "trajectory.l96";
pub const SENSITIVITY_FILE: &str = "sensitivity.l96";
pub const REPORT_FILE: &str = "report.toml";
pub const METRICS_FILE: &str = "metrics.csv";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Configuration errors from the core are usage errors too.
fn core_err(e: jenn_core::Error) -> anyhow::Error {
    match e {
        jenn_core::Error::Config(m) => usage(m),
        other => other.into(),
    }
}

fn resolve(model: &ModelArgs) -> Result<RunConfig> {
    let cfg = model.resolve()?;
    cfg.validate()?;
    Ok(cfg)
}

/// Regenerates the data or, with `--data`, splits a stored trajectory.
fn load_data(cfg: &mut RunConfig) -> Result<ExperimentData> {
    match &cfg.data_dir {
        Some(dir) => {
            let path = dir.join(TRAJECTORY_FILE);
            let traj = load_trajectory(&path).with_context(|| format!("loading {}", path.display()))?;
            let e = &mut cfg.experiment;
            e.model = traj.config;
            e.spinup_time = traj.spinup_steps as f64 * traj.config.dt;
            e.sample_time = traj.sample_steps as f64 * traj.config.dt;
            split_data(&cfg.experiment, &traj).map_err(core_err)
        }
        None => prepare_data(&cfg.experiment).map_err(core_err),
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    model: ModelArgs,
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = resolve(&args.model)?;
    let out = cfg.out_dir()?.to_path_buf();
    let e = &cfg.experiment;
    let traj = jenn_core::dataset::generate_trajectory(&e.model, e.spinup_time, e.sample_time, e.seeds.data)
        .map_err(core_err)?;
    let data = split_data(e, &traj).map_err(core_err)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let pairs = traj.len();
    save_dataset(&out.join(TRAJECTORY_FILE), &Dataset::Trajectory(traj))?;
    let records = data.sens_train.len();
    save_dataset(&out.join(SENSITIVITY_FILE), &Dataset::Sensitivity(data.sens_train))?;
    save_physics_checkpoint(&out.join("physics"), &e.model)?;
    println!(
        "wrote {pairs} pairs and {records} sensitivity records (n={}, F={}, dt={}) to {}",
        e.model.n,
        e.model.forcing,
        e.model.dt,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of random probes
    #[arg(long, default_value_t = 100)]
    probes: usize,
    /// Emulator checkpoint to check as well (repeatable)
    #[arg(long = "checkpoint", value_name = "PATH")]
    checkpoints: Vec<PathBuf>,
}

pub fn verify_tlad(args: VerifyArgs) -> Result<()> {
    let cfg = resolve(&args.model)?;
    if args.probes == 0 {
        return Err(usage("--probes must be positive"));
    }
    let model = cfg.experiment.model;
    let seed = cfg.experiment.seeds.eval;
    let mut failed = Vec::new();
    let probes = verify::probes(&model, args.probes, seed)?;
    for c in verify::verify_physics(&model, &probes)? {
        println!("{c}");
        if !c.passed {
            failed.push(c.to_string());
        }
    }
    for path in &args.checkpoints {
        let emu = load_emulator(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        let n = emu.state_dim();
        let ecfg = if n == model.n {
            model
        } else {
            jenn_core::lorenz96::Lorenz96Config::new(n, model.forcing, model.dt)?
        };
        let probes = verify::probes(&ecfg, args.probes, seed)?;
        for c in verify::verify_emulator(emu.as_ref(), &probes)? {
            println!("{}: {c}", path.display());
            if !c.passed {
                failed.push(format!("{}: {c}", path.display()));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        anyhow::bail!("{} check(s) failed:\n{}", failed.len(), failed.join("\n"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseSel {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "both")]
    phase: PhaseSel,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Hidden layer widths, comma separated
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Forecast pairs per phase
    #[arg(long)]
    subset_size: Option<usize>,
    /// Initialisation and subset seed
    #[arg(long)]
    init_seed: Option<u64>,
    /// Iteration cap for both phases
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    max_iters_phase1: Option<usize>,
    #[arg(long)]
    max_iters_phase2: Option<usize>,
    /// Starting point for phase 2 [default: <out>/phase1.toml]
    #[arg(long, value_name = "PATH")]
    phase1_checkpoint: Option<PathBuf>,
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = resolve(&args.model)?;
    {
        let e = &mut cfg.experiment;
        if let Some(v) = args.alpha {
            e.weights.alpha = v;
        }
        if let Some(v) = args.beta {
            e.weights.beta = v;
        }
        if let Some(v) = args.gamma {
            e.weights.gamma = v;
        }
        if let Some(v) = &args.hidden {
            e.hidden_dims = v.clone();
        }
        if let Some(v) = args.subset_size {
            e.subset_size = v;
        }
        if let Some(v) = args.init_seed {
            e.seeds.init = v;
        }
        if let Some(v) = args.max_iters {
            e.phase1.max_iters = v;
            e.phase2.max_iters = v;
        }
        if let Some(v) = args.max_iters_phase1 {
            e.phase1.max_iters = v;
        }
        if let Some(v) = args.max_iters_phase2 {
            e.phase2.max_iters = v;
        }
    }
    cfg.validate()?;
    let out = cfg.out_dir()?.to_path_buf();

    // phase 2 needs its starting point before any work is done
    let phase1_source = match args.phase {
        PhaseSel::Two => {
            let path = args.phase1_checkpoint.clone().unwrap_or_else(|| out.join("phase1"));
            let (manifest, _) = checkpoint_paths(&path);
            if !manifest.exists() {
                return Err(usage(format!(
                    "phase 2 needs a phase-1 checkpoint: {} not found (pass --phase1-checkpoint)",
                    manifest.display()
                )));
            }
            Some(manifest)
        }
        _ => None,
    };
    let phase1_target = out.join("phase1");
    if let Some(src) = &phase1_source {
        if checkpoint_paths(src).0 == checkpoint_paths(&out.join("phase2")).0 {
            return Err(usage("phase-1 checkpoint and phase-2 output must differ"));
        }
    }

    let data = load_data(&mut cfg)?;
    let e = cfg.experiment.clone();
    let mut report = RunReport::new(&e, &data);

    let nn: MlpParams = match &phase1_source {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.params.architecture().input_dim != e.model.n {
                return Err(usage(format!(
                    "checkpoint {} has dimension {}, data has {}",
                    path.display(),
                    ck.params.architecture().input_dim,
                    e.model.n
                )));
            }
            report.checkpoints.insert("phase1".into(), file_name(path));
            report.config.hidden_dims = ck.params.architecture().hidden_dims.clone();
            ck.params
        }
        None => {
            eprintln!("phase 1: {} pairs, widths {:?}", e.subset_size.min(data.train.len()), e.hidden_dims);
            let (nn, rep) = run_phase1(&e, &data)?;
            eprintln!(
                "phase 1: {} iterations, loss {:.6e}, stopped on {}",
                rep.iterations, rep.final_loss, rep.termination
            );
            let path = save_checkpoint(&phase1_target, &nn, e.seeds.init, Phase::Phase1, &LossWeights::FORECAST_ONLY)?;
            report.checkpoints.insert("phase1".into(), file_name(&path));
            report.phase1 = Some((&rep).into());
            nn
        }
    };
    let metrics_nn = evaluate(&nn, &data.holdout, &data.sens_holdout, &data.eval_states)?;

    let metrics_jenn = if args.phase == PhaseSel::One {
        None
    } else {
        eprintln!(
            "phase 2: {} sensitivity records, weights ({}, {}, {})",
            data.sens_train.len(),
            e.weights.alpha,
            e.weights.beta,
            e.weights.gamma
        );
        let (jenn, rep) = run_phase2(&e, &data, &nn)?;
        eprintln!(
            "phase 2: {} iterations, loss {:.6e}, stopped on {}",
            rep.iterations, rep.final_loss, rep.termination
        );
        let path = save_checkpoint(&out.join("phase2"), &jenn, e.seeds.init, Phase::Phase2, &e.weights)?;
        report.checkpoints.insert("phase2".into(), file_name(&path));
        report.phase2 = Some((&rep).into());
        Some(evaluate(&jenn, &data.holdout, &data.sens_holdout, &data.eval_states)?)
    };
    report.set_metrics(&metrics_nn, metrics_jenn.as_ref());
    let text = report.to_toml()?;
    let path = out.join(REPORT_FILE);
    fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    print_metrics(&metrics_nn, metrics_jenn.as_ref());
    println!("report: {}", path.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn print_metrics(nn: &MetricsReport, jenn: Option<&MetricsReport>) {
    println!("{:<20} {:>24} {:>24}", "metric", "nn", "jenn");
    for (k, name) in MetricsReport::NAMES.iter().enumerate() {
        println!(
            "{:<20} {:>24} {:>24}",
            name,
            format!("{:?}", nn.values()[k]),
            fmt_opt(jenn.map(|m| m.values()[k]))
        );
    }
}

fn write_metrics_csv(path: &Path, nn: &MetricsReport, jenn: Option<&MetricsReport>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "nn", "jenn"])?;
    for (k, name) in MetricsReport::NAMES.iter().enumerate() {
        w.write_record([
            name.to_string(),
            format!("{:?}", nn.values()[k]),
            fmt_opt(jenn.map(|m| m.values()[k])),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Standard network checkpoint (or a physics checkpoint)
    #[arg(long, value_name = "PATH")]
    nn: PathBuf,
    /// Jacobian-enforced network checkpoint
    #[arg(long, value_name = "PATH")]
    jenn: Option<PathBuf>,
}

fn load(path: &Path, n: usize) -> Result<Box<dyn Emulator + Send>> {
    let emu = load_emulator(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if emu.state_dim() != n {
        return Err(usage(format!(
            "checkpoint {} has dimension {}, configuration has n = {n}",
            path.display(),
            emu.state_dim()
        )));
    }
    Ok(emu)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut cfg = resolve(&args.model)?;
    let data = load_data(&mut cfg)?;
    let n = cfg.experiment.model.n;
    let nn = load(&args.nn, n)?;
    let jenn = args.jenn.as_deref().map(|p| load(p, n)).transpose()?;
    let m_nn = evaluate(nn.as_ref(), &data.holdout, &data.sens_holdout, &data.eval_states)?;
    let m_jenn = jenn
        .as_ref()
        .map(|j| evaluate(j.as_ref(), &data.holdout, &data.sens_holdout, &data.eval_states))
        .transpose()?;
    print_metrics(&m_nn, m_jenn.as_ref());
    if let Some(out) = &cfg.out_dir {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let path = out.join(METRICS_FILE);
        write_metrics_csv(&path, &m_nn, m_jenn.as_ref())?;
        println!("metrics: {}", path.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_name = "PATH")]
    nn: PathBuf,
    #[arg(long, value_name = "PATH")]
    jenn: PathBuf,
    /// Output formats, comma separated
    #[arg(long, value_delimiter = ',', default_value = "csv,svg", value_parser = parse_format)]
    format: Vec<ExportFormat>,
    /// Held-out sensitivity record used for the single-state figures
    #[arg(long, default_value_t = 0)]
    probe: usize,
}

fn parse_format(s: &str) -> Result<ExportFormat, String> {
    s.parse().map_err(|e: jenn_core::Error| e.to_string())
}

pub fn export_figures(args: ExportArgs) -> Result<()> {
    let mut cfg = resolve(&args.model)?;
    let out = cfg.out_dir()?.to_path_buf();
    let data = load_data(&mut cfg)?;
    let model = cfg.experiment.model;
    let nn = load(&args.nn, model.n)?;
    let jenn = load(&args.jenn, model.n)?;
    let rec = data.sens_holdout.records.get(args.probe).ok_or_else(|| {
        usage(format!(
            "--probe {} out of range ({} held-out records)",
            args.probe,
            data.sens_holdout.len()
        ))
    })?;
    let mut figs = FigureSet::build(nn.as_ref(), jenn.as_ref(), &model, &rec.x, &rec.dx, &rec.yhat)?;
    let summary = summarize(nn.as_ref(), jenn.as_ref(), &data.sens_holdout, &data.eval_states)?;
    println!("{:<20} {:>24} {:>24}", "mean abs error", "nn", "jenn");
    for (name, p) in [
        ("forecast", summary.mean_forecast()),
        ("tlm", summary.mean_tlm()),
        ("adj", summary.mean_adj()),
        ("jacobian_frob_rmse", summary.mean_jacobian()),
    ] {
        println!("{:<20} {:>24} {:>24}", name, format!("{:?}", p.nn), format!("{:?}", p.jenn));
    }
    figs.summary = Some(summary);
    let written = export_figure_data(&figs, &out, &args.format)?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
