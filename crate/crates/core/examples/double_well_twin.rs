//! Twin experiment on the stochastic double well: one truth, noisy
//! observations of every step, and the adaptive shadowing and
//! weak-constraint 4DVar analyses compared against the truth.
//!
//! ```text
//! cargo run --release --example double_well_twin -- [seed]
//! ```

use weakshadow::harness::{mismatch_histograms, ExperimentConfig, Setup};
use weakshadow::{complete, w4dvar_solve, weak_shadow, AssimilationResult, ShadowingConfig, Trajectory, W4DVarConfig};

fn rms_error(a: &Trajectory, b: &Trajectory) -> f64 {
    let sq: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum();
    (sq / a.as_slice().len() as f64).sqrt()
}

fn report(name: &str, r: &AssimilationResult, truth: &Trajectory, m_obs: f64, n: f64) {
    let (data, model) = mismatch_histograms(r);
    println!(
        "{name:<10} {:>3} iterations  J_o/M {:.3}  J_m/N {:.3}  rms error {:.3}  data var {:.3}  model var {:.3}  ({})",
        r.iterations,
        r.j_o / m_obs,
        r.j_m / n,
        rms_error(&r.analysis, truth),
        data.variance,
        model.variance,
        r.termination
    );
}

fn main() -> weakshadow::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let setup = Setup::new(ExperimentConfig::table1())?;
    let (truth, obs) = setup.draw(seed)?;
    let done = complete(&obs, &setup.climatology)?;

    let (m_obs, n) = (obs.count() as f64, setup.config.n as f64);
    let raw_error = rms_error(done.values(), &truth);
    println!("N = {}, observation rms error {raw_error:.3}", setup.config.n);

    let sh = weak_shadow(&setup.model, &done, &obs, &ShadowingConfig::default())?;
    report("shadowing", &sh, &truth, m_obs, n);
    println!("           alpha history {:?}", sh.alpha_history);
    let var = w4dvar_solve(&setup.model, &done, &obs, &W4DVarConfig::default())?;
    report("w4dvar", &var, &truth, m_obs, n);
    Ok(())
}
