//! Weak-constraint shadowing data assimilation.
//!
//! The analysis of a noisy, partially observed trajectory is found by
//! regularized Levenberg-Marquardt iterations on the one-step model mismatch
//! `G(u)`, started at the (completed) observations and stopped by a
//! discrepancy rule once the data misfit reaches the observation-noise
//! level. Newton shadowing and a weak-constraint 4DVar baseline share the
//! same inputs and diagnostics, and the [`harness`] runs seeded twin
//! experiments on the stochastic double well, Lorenz 63 and Lorenz 96 models.
//!
//! ```no_run
//! use rand::SeedableRng;
//! use weakshadow::{complete, climatology, observe, strided_steps, weak_shadow};
//! use weakshadow::{ModelSpec, ShadowingConfig, SpdMatrix};
//!
//! let model = ModelSpec::double_well(1.0)?;
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let truth = model.generate_truth(&mut rng, 5.0, 4000)?;
//! let co = SpdMatrix::scaled_identity(1, 0.16)?;
//! let obs = observe(&truth, &[0], &strided_steps(4000, 1), &co, &mut rng)?;
//! let clim = climatology(&ModelSpec::double_well(0.0)?, 10_000)?;
//! let result = weak_shadow(&model, &complete(&obs, &clim)?, &obs, &ShadowingConfig::default())?;
//! println!("{} iterations, J_o/M = {}", result.iterations, result.j_o / obs.count() as f64);
//! # Ok::<(), weakshadow::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mismatch;
pub mod models;
pub mod obs;
pub mod shadowing;
pub mod trajectory;
pub mod w4dvar;

pub use error::{Error, Result};
pub use linalg::{BlockCovariance, SpdMatrix};
pub use mismatch::{cost_model, cost_obs, mismatch, mismatch_jacobian};
pub use models::ModelSpec;
pub use obs::{climatology, complete, observe, strided_steps, Climatology, CompletedObservations, ObservationSet};
pub use shadowing::{lm_step, newton_shadow, weak_shadow, AssimilationResult, ShadowingConfig, Termination};
pub use trajectory::Trajectory;
pub use w4dvar::{w4dvar_solve, Init, W4DVarConfig};
