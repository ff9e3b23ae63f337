//! Weak-constraint 4DVar by Levenberg-Marquardt.
//!
//! Minimizes
//!
//! ```text
//! J(u) = 1/2 ||G(u)||^2_Cm + 1/2 ||H(u) - y||^2_Co
//! ```
//!
//! over the full trajectory. The Gauss-Newton matrix
//! `A = J^T Cm^{-1} J + H^T Co^{-1} H` is block tridiagonal with `N+1` blocks,
//! so each damped step `(A + mu diag(A)) delta = -grad` is one block Cholesky
//! solve.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BlockTridiagonal;
use crate::mismatch::{mismatch, mismatch_jacobian, model_block_covariance};
use crate::models::ModelSpec;
use crate::obs::{CompletedObservations, ObservationSet};
use crate::shadowing::{AssimilationResult, Termination, TraceRecord};
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Start from the completed observations.
    Observations,
    /// Start from the climatological mean at every step.
    Background,
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observations" | "obs" => Ok(Init::Observations),
            "background" | "bg" => Ok(Init::Background),
            other => Err(Error::Config(format!(
                "unknown init '{other}', expected 'observations' or 'background'"
            ))),
        }
    }
}

/// Cost that the accepted decrease is measured against in the stopping test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecreaseScale {
    /// The cost before the step, as in standard function-tolerance tests.
    #[default]
    Current,
    /// The cost at the initial guess.
    Initial,
}

impl std::str::FromStr for DecreaseScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(DecreaseScale::Current),
            "initial" => Ok(DecreaseScale::Initial),
            other => Err(Error::Config(format!(
                "unknown decrease scale '{other}', expected 'current' or 'initial'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W4DVarConfig {
    pub init: Init,
    /// Stop when an accepted cost decrease, relative to `decrease_scale`,
    /// falls below this.
    pub tolerance: f64,
    pub decrease_scale: DecreaseScale,
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_damping: f64,
}

impl Default for W4DVarConfig {
    fn default() -> Self {
        Self {
            init: Init::Observations,
            tolerance: 1e-6,
            decrease_scale: DecreaseScale::Current,
            max_iterations: 500,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
            max_damping: 1e16,
        }
    }
}

impl W4DVarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if !(self.initial_damping >= 0.0 && self.damping_up > 1.0 && self.damping_down > 1.0) {
            return Err(Error::Config(
                "damping needs initial >= 0 and up/down factors > 1".into(),
            ));
        }
        if !(self.max_damping > self.initial_damping) {
            return Err(Error::Config("max_damping must exceed initial_damping".into()));
        }
        Ok(())
    }
}

/// `J(u)`, the weak-constraint cost.
pub fn cost(model: &ModelSpec, u: &Trajectory, obs: &ObservationSet) -> Result<f64> {
    let g = mismatch(model, u);
    let jm = model_block_covariance(model, u.horizon())?.weighted_sq_norm(g.as_slice())?;
    Ok(0.5 * (jm + obs.weighted_misfit(u)?))
}

/// `J^T Cm^{-1} G + H^T Co^{-1} (H(u) - y)`.
pub fn gradient(model: &ModelSpec, u: &Trajectory, obs: &ObservationSet) -> Result<Vec<f64>> {
    let g = mismatch(model, u);
    let wg = model_block_covariance(model, u.horizon())?.apply_inverse(g.as_slice())?;
    let mut grad = mismatch_jacobian(model, u).apply_transpose(&wg)?;
    let wr = obs.block_covariance().apply_inverse(&obs.residual(u)?)?;
    let m = u.dim();
    let d = obs.obs_dim();
    for (i, &n) in obs.steps().iter().enumerate() {
        for (j, &c) in obs.components().iter().enumerate() {
            grad[n * m + c] += wr[i * d + j];
        }
    }
    Ok(grad)
}

/// `max |grad J(u)|`.
pub fn stationarity_residual(model: &ModelSpec, u: &Trajectory, obs: &ObservationSet) -> Result<f64> {
    Ok(gradient(model, u, obs)?.iter().fold(0.0, |a, g| a.max(g.abs())))
}

/// Undamped Gauss-Newton matrix.
pub fn gauss_newton_matrix(model: &ModelSpec, u: &Trajectory, obs: &ObservationSet) -> Result<BlockTridiagonal> {
    let m = u.dim();
    let horizon = u.horizon();
    let w = model.model_covariance()?.inverse();
    let jac = mismatch_jacobian(model, u);

    let ro = obs.covariance().inverse();
    let comps = obs.components();
    let mut hrh = DMatrix::zeros(m, m);
    for (a, &ca) in comps.iter().enumerate() {
        for (b, &cb) in comps.iter().enumerate() {
            hrh[(ca, cb)] = ro[(a, b)];
        }
    }
    let mut observed = vec![false; horizon + 1];
    for &n in obs.steps() {
        observed[n] = true;
    }

    let mut diag = Vec::with_capacity(horizon + 1);
    let mut upper = Vec::with_capacity(horizon);
    for (n, &seen) in observed.iter().enumerate() {
        let mut d = DMatrix::zeros(m, m);
        if n < horizon {
            let lt_w = jac.lower(n).transpose() * w;
            d += &lt_w * jac.lower(n);
            upper.push(lt_w);
        }
        if n > 0 {
            d += w;
        }
        if seen {
            d += &hrh;
        }
        diag.push(d);
    }
    BlockTridiagonal::new(diag, upper)
}

fn damped_step(a: &BlockTridiagonal, grad: &[f64], damping: f64) -> Result<Vec<f64>> {
    let mut damped = a.clone();
    if damping > 0.0 {
        for block in damped.diag_mut() {
            for i in 0..block.nrows() {
                block[(i, i)] *= 1.0 + damping;
            }
        }
    }
    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
    damped.cholesky()?.solve(&neg)
}

/// One Marquardt step `-(A + damping diag(A))^{-1} grad J(u)`.
pub fn gauss_newton_step(
    model: &ModelSpec,
    u: &Trajectory,
    obs: &ObservationSet,
    damping: f64,
) -> Result<Vec<f64>> {
    let a = gauss_newton_matrix(model, u, obs)?;
    damped_step(&a, &gradient(model, u, obs)?, damping)
}

/// Initial guess for the chosen [`Init`].
pub fn initial_guess(completed: &CompletedObservations, init: Init) -> Result<Trajectory> {
    match init {
        Init::Observations => Ok(completed.values().clone()),
        Init::Background => Trajectory::constant(completed.background(), completed.values().horizon()),
    }
}

/// Levenberg-Marquardt minimization of the weak-constraint cost.
///
/// `iterations` counts accepted steps; rejected trial steps only raise the
/// damping. The trace `alpha` column holds the damping used for each
/// accepted step. Fails with [`Error::DampingOverflow`] if no decrease is
/// found below `max_damping`.
pub fn w4dvar_solve(
    model: &ModelSpec,
    completed: &CompletedObservations,
    raw: &ObservationSet,
    cfg: &W4DVarConfig,
) -> Result<AssimilationResult> {
    cfg.validate()?;
    let initial = initial_guess(completed, cfg.init)?;
    if initial.dim() != model.dim() || raw.horizon() != initial.horizon() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: initial.dim(),
            context: "completed observations against model and raw observations",
        });
    }
    let mut u = initial.clone();
    let mut j = cost(model, &u, raw)?;
    let j0 = j;
    let mut damping = cfg.initial_damping;
    let mut trace: Vec<TraceRecord> = Vec::new();
    let termination = loop {
        if j == 0.0 {
            break Termination::Converged;
        }
        if trace.len() == cfg.max_iterations {
            break Termination::MaxIterations;
        }
        let a = gauss_newton_matrix(model, &u, raw)?;
        let grad = gradient(model, &u, raw)?;
        let (next, j_next, used, step) = loop {
            let trial = damped_step(&a, &grad, damping)
                .ok()
                .and_then(|step| u.add(&step).ok().map(|v| (v, step)));
            if let Some((v, step)) = trial {
                let jv = cost(model, &v, raw)?;
                if jv < j {
                    break (v, jv, damping, step);
                }
            }
            damping = if damping == 0.0 { cfg.initial_damping.max(1e-12) } else { damping * cfg.damping_up };
            if damping > cfg.max_damping {
                return Err(Error::DampingOverflow {
                    iteration: trace.len() + 1,
                    damping,
                });
            }
        };
        let scale = match cfg.decrease_scale {
            DecreaseScale::Current => j,
            DecreaseScale::Initial => j0,
        };
        let decrease = j - j_next;
        u = next;
        j = j_next;
        damping = used / cfg.damping_down;
        let rec = TraceRecord {
            k: trace.len() + 1,
            alpha: used,
            j_o: 0.5 * raw.weighted_misfit(&u)?,
            j_m: j - 0.5 * raw.weighted_misfit(&u)?,
            step_norm: step.iter().map(|x| x * x).sum::<f64>().sqrt(),
        };
        if log::log_enabled!(log::Level::Debug) {
            if let Ok(line) = serde_json::to_string(&rec) {
                log::debug!(target: "weakshadow::trace", "w4dvar {line}");
            }
        }
        trace.push(rec);
        if decrease / scale < cfg.tolerance {
            break Termination::Converged;
        }
    };
    AssimilationResult::assemble(model, raw, &initial, u, trace, termination)
}
