//! Long sparse Lorenz 96 window: how far each analysis moves the unobserved
//! components, compared with the climatological initial guess.
//!
//! ```text
//! cargo run --release --example long_run_unobserved -- 10000
//! ```

use weakshadow::harness::{long_run_unobserved, write_histogram_csv, ExperimentConfig, Setup};

fn main() -> weakshadow::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let setup = Setup::new(ExperimentConfig::longrun(n))?;
    let report = long_run_unobserved(&setup, 0, 81, -10.0, 17.0)?;

    println!("N = {n}, unobserved distance |X - u|^2 / N(m - d)");
    println!("  {:<14} {:>8.3}", "climatology", report.baseline_distance);
    for (method, d) in &report.distances {
        println!("  {:<14} {:>8.3}   ({} iterations)", method, d, report.iterations[method]);
    }
    println!("unobserved analysis values (initial guess mean {:.3})", report.initial_guess_mean);
    for (method, s) in &report.unobserved {
        println!("  {:<14} mean {:>7.3}  std {:>7.3}", method, s.mean, s.std);
    }

    if let Some(dir) = std::env::args().nth(2) {
        std::fs::create_dir_all(&dir)?;
        for (name, h) in &report.histograms {
            let path = std::path::Path::new(&dir).join(format!("histogram_{name}_unobserved.csv"));
            write_histogram_csv(h, std::fs::File::create(path)?)?;
        }
    }
    Ok(())
}
