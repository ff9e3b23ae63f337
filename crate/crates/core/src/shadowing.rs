//! Shadowing-based data assimilation.
//!
//! Newton shadowing refines an initial guess (the completed observations) to
//! a model orbit with minimum-norm Newton steps on the mismatch `G(u) = 0`.
//!
//! Weak-constraint shadowing replaces the Newton step with a regularized
//! Levenberg-Marquardt step
//!
//! ```text
//! delta = -Co J^T (J Co J^T + alpha Cm)^{-1} G(u)
//! ```
//!
//! where `Co` is the completed observation covariance and `Cm` the model-error
//! covariance. `alpha` is chosen per iteration as the smallest value in
//! `{0, 1, 2, 4, ...}` (searched upward from the previous one) whose step
//! satisfies the discrepancy bound
//!
//! ```text
//! ||delta||_Co / rho <= sqrt(M) - ||H(u) - y||_Co
//! ```
//!
//! where `||delta||_Co` is by default measured on the observed entries,
//! `||H delta||` in the raw observation covariance, the same weighting as
//! the data misfit on the right ([`StepNorm`]). Iteration stops as soon as `||H(u) - y||^2_Co / M` exceeds `r`, so the
//! analysis keeps the data misfit at the level of the observation noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_shifted_gram, BlockBidiagonal, BlockCovariance, SpdMatrix};
use crate::mismatch::{cost_model, mismatch, mismatch_jacobian, normalized_mismatch, MismatchVector};
use crate::models::ModelSpec;
use crate::obs::{CompletedObservations, ObservationSet};
use crate::trajectory::Trajectory;

/// Largest regularization parameter tried by the discrepancy search.
pub const MAX_ALPHA: f64 = (1u64 << 40) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// Discrepancy-principle search over `{0, 2^k}`.
    Adaptive,
    Fixed(f64),
}

/// Norm of the step in the discrepancy test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepNorm {
    /// `||H delta||` weighted by the raw observation covariance.
    #[default]
    Observed,
    /// `||delta||` weighted by the completed covariance over all entries.
    Completed,
}

impl StepNorm {
    pub fn measure(self, step: &[f64], raw: &ObservationSet, completed: &CompletedObservations) -> Result<f64> {
        let sq = match self {
            StepNorm::Observed => raw.block_covariance().weighted_sq_norm(&raw.project(step)?)?,
            StepNorm::Completed => completed.covariance().weighted_sq_norm(step)?,
        };
        Ok(sq.sqrt())
    }
}

impl std::str::FromStr for StepNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(StepNorm::Observed),
            "completed" => Ok(StepNorm::Completed),
            other => Err(Error::Config(format!(
                "unknown step norm '{other}', expected 'observed' or 'completed'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowingConfig {
    pub rho: f64,
    pub r: f64,
    pub alpha: AlphaMode,
    pub step_norm: StepNorm,
    pub max_iterations: usize,
    /// Convergence threshold on `max |G|`.
    pub newton_tolerance: f64,
}

impl Default for ShadowingConfig {
    fn default() -> Self {
        Self {
            rho: 0.8,
            r: 0.99,
            alpha: AlphaMode::Adaptive,
            step_norm: StepNorm::Observed,
            max_iterations: 50,
            newton_tolerance: 1e-9,
        }
    }
}

impl ShadowingConfig {
    pub fn fixed_alpha(alpha: f64, r: f64) -> Self {
        Self {
            alpha: AlphaMode::Fixed(alpha),
            r,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::Config(format!("r must lie in (0, 1], got {}", self.r)));
        }
        if let AlphaMode::Fixed(a) = self.alpha {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(Error::Config(format!("fixed alpha must be finite and >= 0, got {a}")));
            }
        }
        if !(self.newton_tolerance > 0.0) {
            return Err(Error::Config("newton_tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    DataMismatchBound,
    MaxIterations,
    Converged,
    AlphaInfeasible,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::DataMismatchBound => "data_mismatch_bound",
            Termination::MaxIterations => "max_iterations",
            Termination::Converged => "converged",
            Termination::AlphaInfeasible => "alpha_infeasible",
        })
    }
}

/// One line of the per-iteration trace, recorded after update `k` is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    /// Regularization (shadowing) or damping (4DVar) used for the step.
    pub alpha: f64,
    pub j_o: f64,
    pub j_m: f64,
    pub step_norm: f64,
}

impl TraceRecord {
    fn emit(&self, method: &str) {
        if log::log_enabled!(log::Level::Debug) {
            if let Ok(line) = serde_json::to_string(self) {
                log::debug!(target: "weakshadow::trace", "{method} {line}");
            }
        }
    }
}

/// Analysis trajectory with the diagnostics shared by every method.
#[derive(Clone, Debug)]
pub struct AssimilationResult {
    pub analysis: Trajectory,
    pub iterations: usize,
    pub alpha_history: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub j_o_initial: f64,
    pub j_o: f64,
    pub j_m: f64,
    /// `C_o^{-1/2} (H(u) - y)` over the raw observations.
    pub data_mismatch: Vec<f64>,
    /// `C_m^{-1/2} G(u)`.
    pub model_mismatch: Vec<f64>,
    pub termination: Termination,
}

impl AssimilationResult {
    pub(crate) fn assemble(
        model: &ModelSpec,
        raw: &ObservationSet,
        initial: &Trajectory,
        analysis: Trajectory,
        trace: Vec<TraceRecord>,
        termination: Termination,
    ) -> Result<Self> {
        Ok(Self {
            j_o_initial: 0.5 * raw.weighted_misfit(initial)?,
            j_o: 0.5 * raw.weighted_misfit(&analysis)?,
            j_m: cost_model(model, &analysis)?,
            data_mismatch: raw.normalized_residual(&analysis)?,
            model_mismatch: normalized_mismatch(model, &analysis)?,
            iterations: trace.len(),
            alpha_history: trace.iter().map(|t| t.alpha).collect(),
            trace,
            analysis,
            termination,
        })
    }
}

/// Mismatch and Jacobian frozen at one iterate.
struct Linearization {
    jac: BlockBidiagonal,
    g: MismatchVector,
}

impl Linearization {
    fn at(model: &ModelSpec, u: &Trajectory) -> Self {
        Self {
            jac: mismatch_jacobian(model, u),
            g: mismatch(model, u),
        }
    }

    fn step(&self, co: &BlockCovariance, cm: &BlockCovariance, alpha: f64) -> Result<Vec<f64>> {
        solve_shifted_gram(&self.jac, co, cm, alpha, self.g.as_slice())
    }
}

fn check_completed(model: &ModelSpec, completed: &CompletedObservations, raw: &ObservationSet) -> Result<()> {
    let u = completed.values();
    if u.dim() != model.dim() || raw.state_dim() != model.dim() || raw.horizon() != u.horizon() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: u.dim(),
            context: "completed observations against model and raw observations",
        });
    }
    Ok(())
}

/// Minimum 2-norm Newton step `-J^T (J J^T)^{-1} G(u)`.
pub fn newton_step(model: &ModelSpec, u: &Trajectory) -> Result<Vec<f64>> {
    let lin = Linearization::at(model, u);
    let m = model.dim();
    let identity = BlockCovariance::uniform(SpdMatrix::identity(m), u.len());
    let unused = BlockCovariance::uniform(SpdMatrix::identity(m), u.horizon());
    lin.step(&identity, &unused, 0.0)
}

fn euclidean(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton shadowing from the completed observations: iterate minimum-norm
/// Newton steps until `max |G| < newton_tolerance`.
///
/// Fails with [`Error::Diverged`] when `||G||` grows for three consecutive
/// iterations.
pub fn newton_shadow(
    model: &ModelSpec,
    completed: &CompletedObservations,
    raw: &ObservationSet,
    cfg: &ShadowingConfig,
) -> Result<AssimilationResult> {
    cfg.validate()?;
    check_completed(model, completed, raw)?;
    let initial = completed.values();
    let mut u = initial.clone();
    let mut g = mismatch(model, &u);
    let mut trace = Vec::new();
    let mut growth = 0;
    let termination = loop {
        if g.max_abs() < cfg.newton_tolerance {
            break Termination::Converged;
        }
        if trace.len() == cfg.max_iterations {
            break Termination::MaxIterations;
        }
        let delta = newton_step(model, &u)?;
        u = u.add(&delta)?;
        let g_next = mismatch(model, &u);
        growth = if euclidean(g_next.as_slice()) > euclidean(g.as_slice()) {
            growth + 1
        } else {
            0
        };
        g = g_next;
        let rec = TraceRecord {
            k: trace.len() + 1,
            alpha: 0.0,
            j_o: 0.5 * raw.weighted_misfit(&u)?,
            j_m: cost_model(model, &u)?,
            step_norm: euclidean(&delta),
        };
        rec.emit("newton");
        trace.push(rec);
        if growth >= 3 {
            return Err(Error::Diverged {
                iteration: trace.len(),
            });
        }
    };
    AssimilationResult::assemble(model, raw, initial, u, trace, termination)
}

/// Regularized step `-Co J^T (J Co J^T + alpha Cm)^{-1} G(u)`.
pub fn lm_step(
    model: &ModelSpec,
    u: &Trajectory,
    alpha: f64,
    co_completed: &BlockCovariance,
    cm: &SpdMatrix,
) -> Result<Vec<f64>> {
    let cm = BlockCovariance::uniform(cm.clone(), u.horizon());
    Linearization::at(model, u).step(co_completed, &cm, alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub enum AlphaChoice {
    Accepted {
        alpha: f64,
        step: Vec<f64>,
        /// `||step||` in the configured [`StepNorm`].
        step_norm: f64,
    },
    /// The discrepancy bound cannot be met: either the data misfit already
    /// reaches `sqrt(M)` or no candidate up to [`MAX_ALPHA`] is small enough.
    Infeasible { bound: f64 },
}

/// The candidate sequence `{0, 1, 2, 4, ...}` starting at `start`.
pub fn alpha_candidates(start: f64) -> impl Iterator<Item = f64> {
    let first = if start > 0.0 { start } else { 0.0 };
    std::iter::successors(Some(first), |&a| {
        let next = if a == 0.0 { 1.0 } else { 2.0 * a };
        (next <= MAX_ALPHA).then_some(next)
    })
}

/// Discrepancy-principle choice of `alpha` at iterate `u`, searching upward
/// from `alpha_prev`.
pub fn select_alpha(
    model: &ModelSpec,
    u: &Trajectory,
    raw: &ObservationSet,
    completed: &CompletedObservations,
    cfg: &ShadowingConfig,
    alpha_prev: f64,
) -> Result<AlphaChoice> {
    let cm = BlockCovariance::uniform(model.model_covariance()?.clone(), u.horizon());
    let lin = Linearization::at(model, u);
    select_alpha_linearized(&lin, u, raw, completed, &cm, cfg, alpha_prev)
}

fn select_alpha_linearized(
    lin: &Linearization,
    u: &Trajectory,
    raw: &ObservationSet,
    completed: &CompletedObservations,
    cm: &BlockCovariance,
    cfg: &ShadowingConfig,
    alpha_prev: f64,
) -> Result<AlphaChoice> {
    let bound = (raw.count() as f64).sqrt() - raw.weighted_misfit(u)?.sqrt();
    if bound <= 0.0 {
        return Ok(AlphaChoice::Infeasible { bound });
    }
    for alpha in alpha_candidates(alpha_prev) {
        let step = lin.step(completed.covariance(), cm, alpha)?;
        let step_norm = cfg.step_norm.measure(&step, raw, completed)?;
        if step_norm / cfg.rho <= bound {
            return Ok(AlphaChoice::Accepted {
                alpha,
                step,
                step_norm,
            });
        }
    }
    Ok(AlphaChoice::Infeasible { bound })
}

/// Weak-constraint shadowing initialized at the completed observations.
///
/// Each iteration first checks the stopping rule `||H(u) - y||^2_Co / M > r`
/// on the raw observations, then applies one regularized step with either the
/// adaptive or the fixed `alpha`. The returned analysis is the first iterate
/// that crosses the bound; `iterations` counts applied updates.
pub fn weak_shadow(
    model: &ModelSpec,
    completed: &CompletedObservations,
    raw: &ObservationSet,
    cfg: &ShadowingConfig,
) -> Result<AssimilationResult> {
    cfg.validate()?;
    check_completed(model, completed, raw)?;
    let cm = BlockCovariance::uniform(model.model_covariance()?.clone(), raw.horizon());
    let count = raw.count() as f64;
    let initial = completed.values();
    let mut u = initial.clone();
    let mut alpha_prev = 0.0;
    let mut trace = Vec::new();
    let termination = loop {
        if raw.weighted_misfit(&u)? / count > cfg.r {
            break Termination::DataMismatchBound;
        }
        let lin = Linearization::at(model, &u);
        if lin.g.max_abs() < cfg.newton_tolerance {
            break Termination::Converged;
        }
        if trace.len() == cfg.max_iterations {
            break Termination::MaxIterations;
        }
        let (alpha, step, step_norm) = match cfg.alpha {
            AlphaMode::Adaptive => {
                match select_alpha_linearized(&lin, &u, raw, completed, &cm, cfg, alpha_prev)? {
                    AlphaChoice::Accepted {
                        alpha,
                        step,
                        step_norm,
                    } => (alpha, step, step_norm),
                    AlphaChoice::Infeasible { .. } => break Termination::AlphaInfeasible,
                }
            }
            AlphaMode::Fixed(alpha) => {
                let step = lin.step(completed.covariance(), &cm, alpha)?;
                let norm = cfg.step_norm.measure(&step, raw, completed)?;
                (alpha, step, norm)
            }
        };
        u = u.add(&step)?;
        alpha_prev = alpha;
        let rec = TraceRecord {
            k: trace.len() + 1,
            alpha,
            j_o: 0.5 * raw.weighted_misfit(&u)?,
            j_m: cost_model(model, &u)?,
            step_norm,
        };
        rec.emit("shadow");
        trace.push(rec);
    };
    AssimilationResult::assemble(model, raw, initial, u, trace, termination)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_sample;
    use crate::obs::{climatology, complete, observe, strided_steps, Climatology};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dw_problem(seed: u64, horizon: usize) -> (ModelSpec, ObservationSet, CompletedObservations) {
        let dw = ModelSpec::double_well(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = dw.generate_truth(&mut rng, 5.0, horizon).unwrap();
        let co = SpdMatrix::scaled_identity(1, 0.16).unwrap();
        let obs = observe(&truth, &[0], &strided_steps(horizon, 1), &co, &mut rng).unwrap();
        let clim = climatology(&ModelSpec::double_well(0.0).unwrap(), 10_000).unwrap();
        let done = complete(&obs, &clim).unwrap();
        (dw, obs, done)
    }

    fn l63_problem(seed: u64, horizon: usize) -> (ModelSpec, ObservationSet, CompletedObservations) {
        let l63 = ModelSpec::lorenz63(120f64.sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = l63.generate_truth(&mut rng, 5.0, horizon).unwrap();
        let co = SpdMatrix::scaled_identity(1, 0.05).unwrap();
        let obs = observe(&truth, &[0], &strided_steps(horizon, 1), &co, &mut rng).unwrap();
        let clim = Climatology::new(
            DVector::from_vec(vec![0.0, 0.1015, 24.3515]),
            DMatrix::from_row_slice(3, 3, &[62.0, 0.0, 0.0, 0.0, 82.9135, 0.3134, 0.0, 0.3134, 67.2204]),
            20_000_000,
        )
        .unwrap();
        let done = complete(&obs, &clim).unwrap();
        (l63, obs, done)
    }

    #[test]
    fn config_validation() {
        assert!(ShadowingConfig::default().validate().is_ok());
        let bad = ShadowingConfig { rho: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ShadowingConfig { r: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(ShadowingConfig::fixed_alpha(-1.0, 0.9).validate().is_err());
        assert_eq!("completed".parse::<StepNorm>().unwrap(), StepNorm::Completed);
        assert!("euclidean".parse::<StepNorm>().is_err());
    }

    #[test]
    fn candidates_start_at_previous_alpha() {
        let c: Vec<f64> = alpha_candidates(0.0).take(4).collect();
        assert_eq!(c, vec![0.0, 1.0, 2.0, 4.0]);
        let c: Vec<f64> = alpha_candidates(8.0).take(2).collect();
        assert_eq!(c, vec![8.0, 16.0]);
        assert_eq!(alpha_candidates(0.0).last(), Some(MAX_ALPHA));
        assert_eq!(alpha_candidates(0.0).count(), 42);
    }

    #[test]
    fn newton_on_exact_orbit_is_identity() {
        let l63 = ModelSpec::lorenz63(1.0).unwrap();
        let orbit = l63.run_deterministic(&[1.0, 2.0, 20.0], 50).unwrap();
        let obs = ObservationSet::new(
            3,
            50,
            vec![0, 1, 2],
            strided_steps(50, 1),
            orbit.as_slice().to_vec(),
            SpdMatrix::identity(3),
        )
        .unwrap();
        let clim = Climatology::new(DVector::zeros(3), DMatrix::identity(3, 3), 10_000).unwrap();
        let done = complete(&obs, &clim).unwrap();
        let res = newton_shadow(&l63, &done, &obs, &ShadowingConfig::default()).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.termination, Termination::Converged);
        assert_eq!(res.analysis, orbit);
    }

    #[test]
    fn newton_shadows_noisy_deterministic_orbit() {
        let dw = ModelSpec::double_well(1.0).unwrap();
        let truth = dw.run_deterministic(&[0.6], 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let co = SpdMatrix::scaled_identity(1, 0.01).unwrap();
        let obs = observe(&truth, &[0], &strided_steps(100, 1), &co, &mut rng).unwrap();
        let clim = Climatology::new(DVector::zeros(1), DMatrix::identity(1, 1), 10_000).unwrap();
        let done = complete(&obs, &clim).unwrap();
        let res = newton_shadow(&dw, &done, &obs, &ShadowingConfig::default()).unwrap();
        assert_eq!(res.termination, Termination::Converged);
        assert!(mismatch(&dw, &res.analysis).max_abs() < 1e-9);
        assert!(res.analysis.max_abs_diff(&truth) < 0.5);
    }

    #[test]
    fn newton_step_is_minimum_norm_solution() {
        let (dw, _, done) = dw_problem(5, 60);
        let u = done.values();
        let delta = newton_step(&dw, u).unwrap();
        let jac = mismatch_jacobian(&dw, u);
        let g = mismatch(&dw, u);
        let jd = jac.apply(&delta).unwrap();
        let res: f64 = jd.iter().zip(g.as_slice()).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt();
        assert!(res < 1e-10 * euclidean(g.as_slice()));
        // minimum norm: delta lies in the row space of J, i.e. delta = J^T z
        let j = jac.to_dense();
        let z = (&j * j.transpose()).lu().solve(&(&j * DVector::from_column_slice(&delta))).unwrap();
        let proj = j.transpose() * z;
        assert!((proj - DVector::from_column_slice(&delta)).norm() < 1e-10 * euclidean(&delta));
    }

    #[test]
    fn newton_step_equals_unregularized_identity_weighted_step() {
        let (dw, _, done) = dw_problem(6, 80);
        let u = done.values();
        let a = newton_step(&dw, u).unwrap();
        let id = BlockCovariance::uniform(SpdMatrix::identity(1), u.len());
        let b = lm_step(&dw, u, 0.0, &id, dw.model_covariance().unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_mismatch_gives_zero_step() {
        let dw = ModelSpec::double_well(1.0).unwrap();
        let orbit = dw.run_deterministic(&[0.2], 20).unwrap();
        let co = BlockCovariance::uniform(SpdMatrix::scaled_identity(1, 0.16).unwrap(), 21);
        let d = lm_step(&dw, &orbit, 2.0, &co, dw.model_covariance().unwrap()).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lm_step_minimizes_regularized_linear_cost() {
        // L63 at a random (non-orbit) trajectory, N = 4
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l63 = ModelSpec::lorenz63(2.0).unwrap();
        let u = Trajectory::from_flat(3, (0..15).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let co_block = SpdMatrix::new(&a * a.transpose() + DMatrix::identity(3, 3)).unwrap();
        let co = BlockCovariance::uniform(co_block, 5);
        let cm = l63.model_covariance().unwrap();
        let alpha = 3.0;
        let delta = lm_step(&l63, &u, alpha, &co, cm).unwrap();

        // Oracle: minimize 1/2 |J d + G|^2_Cm + alpha/2 |d|^2_Co through its
        // dense normal equations.
        let j = mismatch_jacobian(&l63, &u).to_dense();
        let g = DVector::from_column_slice(mismatch(&l63, &u).as_slice());
        let cm_inv = BlockCovariance::uniform(cm.clone(), 4).to_dense().try_inverse().unwrap();
        let co_inv = co.to_dense().try_inverse().unwrap();
        let h = j.transpose() * &cm_inv * &j + &co_inv * alpha;
        let oracle = -h.clone().lu().solve(&(j.transpose() * &cm_inv * &g)).unwrap();
        let d = DVector::from_column_slice(&delta);
        assert!((&d - &oracle).norm() < 1e-8 * oracle.norm());

        // Stationarity of the same cost at the step.
        let grad = j.transpose() * &cm_inv * (&j * &d + &g) + &co_inv * &d * alpha;
        assert!(grad.norm() < 1e-8 * (j.transpose() * &cm_inv * &g).norm());

        // Perturbations never decrease the quadratic.
        let co_inv = co.to_dense().try_inverse().unwrap();
        let cost = |x: &DVector<f64>| {
            let r = &j * x + &g;
            0.5 * (r.transpose() * &cm_inv * &r)[(0, 0)] + 0.5 * alpha * (x.transpose() * &co_inv * x)[(0, 0)]
        };
        for _ in 0..10 {
            let p = DVector::from_fn(15, |_, _| rng.random_range(-1e-3..1e-3));
            assert!(cost(&(&d + p)) >= cost(&d) - 1e-12);
        }
    }

    #[test]
    fn large_alpha_tends_to_gradient_direction() {
        let (dw, _, done) = dw_problem(9, 30);
        let u = done.values();
        let id1 = SpdMatrix::identity(1);
        let co = BlockCovariance::uniform(id1.clone(), u.len());
        let jac = mismatch_jacobian(&dw, u);
        let grad = jac.apply_transpose(mismatch(&dw, u).as_slice()).unwrap();
        let mut prev = f64::INFINITY;
        for alpha in [1e2, 1e4, 1e6] {
            let d = lm_step(&dw, u, alpha, &co, &id1).unwrap();
            let err: f64 = d.iter().zip(&grad).map(|(x, g)| (x * alpha + g).powi(2)).sum::<f64>().sqrt();
            let rel = err / euclidean(&grad);
            assert!(rel < prev);
            prev = rel;
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn step_norm_is_nonincreasing_in_alpha() {
        for seed in 0..5 {
            let (l63, _, done) = l63_problem(seed, 40);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let cm = l63.model_covariance().unwrap();
            let u = done
                .values()
                .add(&(0..123).map(|_| gaussian_sample(&mut rng, &SpdMatrix::identity(1))[0]).collect::<Vec<_>>())
                .unwrap();
            let mut prev = f64::INFINITY;
            for k in 0..10 {
                let alpha = 10f64.powf(-3.0 + k as f64 * 0.8);
                let d = lm_step(&l63, &u, alpha, done.covariance(), cm).unwrap();
                let norm = done.covariance().weighted_sq_norm(&d).unwrap().sqrt();
                assert!(norm <= prev * (1.0 + 1e-12), "seed {seed} alpha {alpha}");
                prev = norm;
            }
        }
    }

    #[test]
    fn select_alpha_accepts_previous_on_orbit() {
        let dw = ModelSpec::double_well(1.0).unwrap();
        let orbit = dw.run_deterministic(&[0.2], 20).unwrap();
        let obs = ObservationSet::new(1, 20, vec![0], strided_steps(20, 1), orbit.as_slice().to_vec(), SpdMatrix::scaled_identity(1, 0.16).unwrap()).unwrap();
        let clim = Climatology::new(DVector::zeros(1), DMatrix::identity(1, 1), 10_000).unwrap();
        let done = complete(&obs, &clim).unwrap();
        match select_alpha(&dw, &orbit, &obs, &done, &ShadowingConfig::default(), 4.0).unwrap() {
            AlphaChoice::Accepted { alpha, step_norm, .. } => {
                assert_eq!(alpha, 4.0);
                assert_eq!(step_norm, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn select_alpha_infeasible_when_misfit_exceeds_noise_level() {
        let (dw, obs, done) = dw_problem(10, 50);
        // shift every state by 3 observation standard deviations
        let shifted = done.values().add(&vec![1.2; 51]).unwrap();
        assert!(obs.weighted_misfit(&shifted).unwrap() >= obs.count() as f64);
        assert!(matches!(
            select_alpha(&dw, &shifted, &obs, &done, &ShadowingConfig::default(), 0.0).unwrap(),
            AlphaChoice::Infeasible { .. }
        ));
    }

    #[test]
    fn select_alpha_returns_smallest_feasible_candidate() {
        let (l63, obs, done) = l63_problem(11, 200);
        let u = done.values();
        let bound = (obs.count() as f64).sqrt() - obs.weighted_misfit(u).unwrap().sqrt();
        let cm = l63.model_covariance().unwrap();
        for norm in [StepNorm::Observed, StepNorm::Completed] {
            let cfg = ShadowingConfig { step_norm: norm, ..Default::default() };
            let AlphaChoice::Accepted { alpha, .. } = select_alpha(&l63, u, &obs, &done, &cfg, 0.0).unwrap() else {
                panic!("infeasible")
            };
            for smaller in alpha_candidates(0.0).take_while(|&a| a < alpha) {
                let d = lm_step(&l63, u, smaller, done.covariance(), cm).unwrap();
                assert!(norm.measure(&d, &obs, &done).unwrap() / 0.8 > bound);
            }
        }
    }

    #[test]
    fn observed_step_norm_is_bounded_by_completed_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (l63, obs, done) = l63_problem(14, 60);
        let step: Vec<f64> = (0..183).map(|_| rng.random_range(-1.0..1.0)).collect();
        let observed = StepNorm::Observed.measure(&step, &obs, &done).unwrap();
        let completed = StepNorm::Completed.measure(&step, &obs, &done).unwrap();
        assert!(observed > 0.0 && observed <= completed);
        let d = lm_step(&l63, done.values(), 1.0, done.covariance(), l63.model_covariance().unwrap()).unwrap();
        assert!(StepNorm::Observed.measure(&d, &obs, &done).unwrap() <= StepNorm::Completed.measure(&d, &obs, &done).unwrap());

        // fully observed every step: the two norms coincide
        let (_, obs, done) = dw_problem(15, 40);
        let step: Vec<f64> = (0..41).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = StepNorm::Observed.measure(&step, &obs, &done).unwrap();
        let b = StepNorm::Completed.measure(&step, &obs, &done).unwrap();
        assert!((a - b).abs() < 1e-12 * b);
    }

    #[test]
    fn stop_immediately_when_initial_misfit_exceeds_r() {
        let (dw, obs, done) = dw_problem(12, 100);
        // shift so the initial chi-square is about 0.25 < 1 but above r
        let shifted_values = done.values().add(&vec![0.2; 101]).unwrap();
        let shifted = ObservationSet::new(1, 100, vec![0], strided_steps(100, 1), shifted_values.as_slice().to_vec(), obs.covariance().clone()).unwrap();
        let chi = shifted.weighted_misfit(done.values()).unwrap() / 101.0;
        let cfg = ShadowingConfig { r: chi * 0.5, ..Default::default() };
        let res = weak_shadow(&dw, &done, &shifted, &cfg).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.termination, Termination::DataMismatchBound);
        assert_eq!(&res.analysis, done.values());
    }

    #[test]
    fn weak_shadow_stopping_postconditions() {
        for seed in 0..4 {
            let (dw, obs, done) = dw_problem(100 + seed, 1000);
            let cfg = ShadowingConfig::default();
            let res = weak_shadow(&dw, &done, &obs, &cfg).unwrap();
            let m = obs.count() as f64;
            assert_eq!(res.termination, Termination::DataMismatchBound);
            assert!(2.0 * res.j_o / m > cfg.r);
            let before = if res.iterations >= 2 {
                res.trace[res.iterations - 2].j_o
            } else {
                res.j_o_initial
            };
            assert!(2.0 * before / m <= cfg.r);
            assert_eq!(res.alpha_history.len(), res.iterations);
            // every accepted step respects the discrepancy bound, so the
            // misfit never reaches sqrt(M)
            for rec in &res.trace {
                assert!(2.0 * rec.j_o < m);
            }
            assert!(res.alpha_history.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn discrepancy_bound_holds_for_each_step() {
        let (l63, obs, done) = l63_problem(13, 300);
        let res = weak_shadow(&l63, &done, &obs, &ShadowingConfig::default()).unwrap();
        assert!(res.iterations > 0);
        let m = obs.count() as f64;
        let mut jo_prev = res.j_o_initial;
        for rec in &res.trace {
            let bound = m.sqrt() - (2.0 * jo_prev).sqrt();
            assert!(rec.step_norm <= 0.8 * bound * (1.0 + 1e-12));
            jo_prev = rec.j_o;
        }
    }
}
