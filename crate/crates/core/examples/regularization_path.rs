//! One regularized step across the alpha candidates: how the step shrinks
//! as alpha grows, and which candidate the discrepancy rule picks.
//!
//! ```text
//! cargo run --release --example regularization_path
//! ```

use weakshadow::harness::{ExperimentConfig, Setup};
use weakshadow::shadowing::{alpha_candidates, select_alpha, AlphaChoice, StepNorm};
use weakshadow::{complete, lm_step, ShadowingConfig};

fn main() -> weakshadow::Result<()> {
    let mut cfg = ExperimentConfig::table2();
    cfg.n = 500;
    let setup = Setup::new(cfg)?;
    let (_, obs) = setup.draw(5)?;
    let done = complete(&obs, &setup.climatology)?;
    let u = done.values();
    let cm = setup.model.model_covariance()?;
    let shadow = ShadowingConfig::default();

    let bound = (obs.count() as f64).sqrt() - obs.weighted_misfit(u)?.sqrt();
    println!("discrepancy bound sqrt(M) - |Hu - y| = {bound:.3}, rho = {}", shadow.rho);
    println!("{:>12} {:>14} {:>14}", "alpha", "|H d|_Co", "|d|_Co_hat");
    for alpha in alpha_candidates(0.0).take(12) {
        let d = lm_step(&setup.model, u, alpha, done.covariance(), cm)?;
        let observed = StepNorm::Observed.measure(&d, &obs, &done)?;
        let completed = StepNorm::Completed.measure(&d, &obs, &done)?;
        let mark = if observed / shadow.rho <= bound { "  ok" } else { "" };
        println!("{alpha:>12} {observed:>14.3} {completed:>14.3}{mark}");
    }
    match select_alpha(&setup.model, u, &obs, &done, &shadow, 0.0)? {
        AlphaChoice::Accepted { alpha, step_norm, .. } => println!("selected alpha = {alpha} (step norm {step_norm:.3})"),
        AlphaChoice::Infeasible { bound } => println!("no feasible alpha (bound {bound:.3})"),
    }
    Ok(())
}
