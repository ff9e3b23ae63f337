//! Newton shadowing: the minimum-norm correction that turns a noisy
//! pseudo-orbit into an exact orbit of the deterministic map, and why it
//! needs regularization once the data come from a stochastic model.
//!
//! ```text
//! cargo run --release --example newton_shadowing
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use weakshadow::obs::{complete, observe, strided_steps, Climatology};
use weakshadow::{mismatch, newton_shadow, weak_shadow, ModelSpec, ShadowingConfig, SpdMatrix};

fn main() -> weakshadow::Result<()> {
    let model = ModelSpec::lorenz63(1.0)?;
    let orbit = model.run_deterministic(&[1.0, 1.0, 20.0], 200)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let co = SpdMatrix::scaled_identity(3, 0.01)?;
    let obs = observe(&orbit, &[0, 1, 2], &strided_steps(200, 1), &co, &mut rng)?;
    let clim = Climatology::new(nalgebra::DVector::zeros(3), nalgebra::DMatrix::identity(3, 3), 10_000)?;
    let done = complete(&obs, &clim)?;

    println!("deterministic L63 orbit, noise std 0.1");
    println!("  |G| before: {:.3e}", mismatch(&model, done.values()).max_abs());
    let res = newton_shadow(&model, &done, &obs, &ShadowingConfig::default())?;
    println!(
        "  newton: {} iterations ({}), |G| after {:.3e}, distance to the true orbit {:.3}",
        res.iterations,
        res.termination,
        mismatch(&model, &res.analysis).max_abs(),
        res.analysis.max_abs_diff(&orbit)
    );

    let dw = ModelSpec::double_well(1.0)?;
    let truth = dw.generate_truth(&mut rng, 5.0, 2000)?;
    let obs = observe(&truth, &[0], &strided_steps(2000, 1), &SpdMatrix::scaled_identity(1, 0.16)?, &mut rng)?;
    let done = complete(&obs, &Climatology::new(nalgebra::DVector::zeros(1), nalgebra::DMatrix::identity(1, 1), 10_000)?)?;
    println!("stochastic double well, N = 2000");
    match newton_shadow(&dw, &done, &obs, &ShadowingConfig::default()) {
        Ok(r) => println!("  newton: {} iterations ({}), J_o/M {:.3}", r.iterations, r.termination, r.j_o / obs.count() as f64),
        Err(e) => println!("  newton fails: {e}"),
    }
    let r = weak_shadow(&dw, &done, &obs, &ShadowingConfig::default())?;
    println!("  weak shadowing: {} iterations ({}), J_o/M {:.3}", r.iterations, r.termination, r.j_o / obs.count() as f64);
    Ok(())
}
