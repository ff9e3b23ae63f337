//! Lorenz 96 observed in 3 of its 15 components every 10th step. Adaptive
//! shadowing against weak-constraint 4DVar from the two initializations.
//!
//! ```text
//! cargo run --release --example lorenz96_sparse -- [seed]
//! ```

use weakshadow::harness::{ExperimentConfig, Normalization, Setup};
use weakshadow::{complete, w4dvar_solve, weak_shadow, Init, ShadowingConfig, W4DVarConfig};

fn main() -> weakshadow::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let setup = Setup::new(ExperimentConfig::table3())?;
    let (_, obs) = setup.draw(seed)?;
    let done = complete(&obs, &setup.climatology)?;
    let norm = Normalization::for_config(&setup.config, setup.model.dim());
    println!("{} observations of a {}-dimensional state over {} steps", obs.count(), setup.model.dim(), setup.config.n);

    let sh = weak_shadow(&setup.model, &done, &obs, &ShadowingConfig::default())?;
    println!(
        "shadowing        {:>4} iterations  10J_o/Nd {:.3}  J_m/Nm {:.4}",
        sh.iterations,
        norm.jo_table(sh.j_o),
        norm.jm_per_nm(sh.j_m)
    );
    for init in [Init::Background, Init::Observations] {
        let cfg = W4DVarConfig { init, ..Default::default() };
        let r = w4dvar_solve(&setup.model, &done, &obs, &cfg)?;
        println!(
            "w4dvar {:<10}{:>4} iterations  10J_o/Nd {:.3}  J_m/Nm {:.4}",
            format!("({init:?})"),
            r.iterations,
            norm.jo_table(r.j_o),
            norm.jm_per_nm(r.j_m)
        );
    }
    Ok(())
}
