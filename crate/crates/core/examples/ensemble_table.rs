//! Runs a small ensemble of one preset table and prints the summary.
//!
//! ```text
//! cargo run --release --example ensemble_table -- table2 10
//! ```

use weakshadow::harness::{run_ensemble, ExperimentConfig, Preset, Setup};

fn main() -> weakshadow::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset: Preset = args.next().as_deref().unwrap_or("table1").parse()?;
    let replicates: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let mut cfg = ExperimentConfig::preset(preset);
    cfg.replicates = replicates;
    let ens = run_ensemble(Setup::new(cfg)?, 0)?;

    println!(
        "{:<20} {:>16} {:>18} {:>18} {:>18} {:>18}",
        "method", "iterations", "J_o/M", "J_o (table)", "J_m/Nm", "combined"
    );
    for s in &ens.summary.methods {
        println!(
            "{:<20} {:>16} {:>18} {:>18} {:>18} {:>18}",
            s.method,
            s.iterations.to_string(),
            s.jo_per_count.to_string(),
            s.jo_table.to_string(),
            s.jm_per_nm.to_string(),
            s.combined.to_string()
        );
        if s.failed > 0 {
            println!("    {} of {} runs failed", s.failed, s.failed + s.succeeded);
        }
    }
    Ok(())
}
