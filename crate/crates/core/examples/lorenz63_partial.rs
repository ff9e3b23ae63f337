//! Lorenz 63 with only `x` observed: the climatology fills in `y` and `z`,
//! and the iteration trace shows the discrepancy rule raising alpha as the
//! data misfit approaches the noise level.
//!
//! ```text
//! cargo run --release --example lorenz63_partial
//! ```

use weakshadow::harness::{ExperimentConfig, Setup};
use weakshadow::{complete, weak_shadow, ShadowingConfig};

fn main() -> weakshadow::Result<()> {
    let mut cfg = ExperimentConfig::table2();
    cfg.n = 1000;
    let setup = Setup::new(cfg)?;
    let (truth, obs) = setup.draw(3)?;
    let done = complete(&obs, &setup.climatology)?;
    let m = obs.count() as f64;

    let res = weak_shadow(&setup.model, &done, &obs, &ShadowingConfig::default())?;
    println!("{:>3} {:>10} {:>10} {:>12} {:>10}", "k", "alpha", "chi2/M", "J_m/Nm", "step");
    println!("{:>3} {:>10} {:>10.4} {:>12} {:>10}", 0, "-", 2.0 * res.j_o_initial / m, "-", "-");
    let nm = (setup.config.n * 3) as f64;
    for t in &res.trace {
        println!("{:>3} {:>10} {:>10.4} {:>12.4} {:>10.3}", t.k, t.alpha, 2.0 * t.j_o / m, t.j_m / nm, t.step_norm);
    }
    println!("termination: {}", res.termination);

    for (c, name) in ["x", "y", "z"].iter().enumerate() {
        let err: f64 = (0..truth.len())
            .map(|n| (res.analysis.state_slice(n)[c] - truth.state_slice(n)[c]).powi(2))
            .sum::<f64>()
            / truth.len() as f64;
        let clim = setup.climatology.variance()[c];
        println!("{name}: analysis mse {err:.3}, climatological variance {clim:.1}");
    }
    Ok(())
}
