//! Runs the desk-scale experiment and prints the run report.

use std::time::Instant;

use jenn_core::experiment::{prepare_data, run_experiment, ExperimentConfig, RunReport};

fn main() -> jenn_core::Result<()> {
    let cfg = ExperimentConfig::desk();
    let t = Instant::now();
    let data = prepare_data(&cfg)?;
    let out = run_experiment(&cfg, &data)?;
    print!("{}", RunReport::from_outcome(&cfg, &data, &out).to_toml()?);
    eprintln!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
