//! One-step model mismatch `G_n(u) = u_{n+1} - F(u_n)`, its Jacobian, and the
//! observation and model cost functions.

use crate::error::Result;
use crate::linalg::{BlockBidiagonal, BlockCovariance};
use crate::models::ModelSpec;
use crate::obs::{CompletedObservations, ObservationSet};
use crate::trajectory::Trajectory;

/// Stacked blocks `G_0 .. G_{N-1}`, each of the state dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct MismatchVector {
    dim: usize,
    data: Vec<f64>,
}

impl MismatchVector {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn block(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

pub fn mismatch(model: &ModelSpec, u: &Trajectory) -> MismatchVector {
    let m = u.dim();
    let n_rows = u.horizon();
    let mut data = vec![0.0; n_rows * m];
    let mut f = vec![0.0; m];
    for n in 0..n_rows {
        model.step_into(u.state_slice(n), &mut f);
        let next = u.state_slice(n + 1);
        for i in 0..m {
            data[n * m + i] = next[i] - f[i];
        }
    }
    MismatchVector { dim: m, data }
}

/// Block rows `[-DF(u_n), I]`.
pub fn mismatch_jacobian(model: &ModelSpec, u: &Trajectory) -> BlockBidiagonal {
    let lower = (0..u.horizon())
        .map(|n| -model.jacobian(u.state_slice(n)))
        .collect();
    BlockBidiagonal::new(u.dim(), lower).expect("model Jacobian blocks match the state dimension")
}

/// `Cm` replicated over the `N` mismatch blocks of `u`.
pub fn model_block_covariance(model: &ModelSpec, horizon: usize) -> Result<BlockCovariance> {
    Ok(BlockCovariance::uniform(model.model_covariance()?.clone(), horizon))
}

/// `J_o = 1/2 ||H(u) - y||^2_{C_o}` over the raw observations.
pub fn cost_obs(u: &Trajectory, obs: &ObservationSet) -> Result<f64> {
    Ok(0.5 * obs.weighted_misfit(u)?)
}

/// `J_o` evaluated against the completed observations and `C_o_hat`.
pub fn cost_obs_completed(u: &Trajectory, completed: &CompletedObservations) -> Result<f64> {
    Ok(0.5 * completed.weighted_misfit(u)?)
}

/// `J_m = 1/2 ||G(u)||^2_{C_m}`.
pub fn cost_model(model: &ModelSpec, u: &Trajectory) -> Result<f64> {
    let g = mismatch(model, u);
    Ok(0.5 * model_block_covariance(model, u.horizon())?.weighted_sq_norm(g.as_slice())?)
}

/// `C_m^{-1/2} G(u)`, the normalized model mismatch.
pub fn normalized_mismatch(model: &ModelSpec, u: &Trajectory) -> Result<Vec<f64>> {
    let g = mismatch(model, u);
    model_block_covariance(model, u.horizon())?.whiten(g.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SpdMatrix;
    use crate::obs::{observe, strided_steps};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn exact_orbit_has_zero_mismatch() {
        let l63 = ModelSpec::lorenz63(1.0).unwrap();
        let orbit = l63.run_deterministic(&[1.0, 2.0, 20.0], 200).unwrap();
        assert_eq!(mismatch(&l63, &orbit).max_abs(), 0.0);
        assert_eq!(cost_model(&l63, &orbit).unwrap(), 0.0);
    }

    #[test]
    fn double_well_hand_value() {
        let dw = ModelSpec::double_well(1.0).unwrap();
        let u = Trajectory::from_flat(1, vec![0.0, 1.0]).unwrap();
        assert_eq!(mismatch(&dw, &u).block(0), &[1.0]);
        let jac = mismatch_jacobian(&dw, &Trajectory::from_flat(1, vec![1.0, 1.0]).unwrap());
        assert!((jac.lower(0)[(0, 0)] + 0.9).abs() < 1e-15);
    }

    #[test]
    fn truth_mismatch_is_standard_normal() {
        for (model, horizon) in [
            (ModelSpec::double_well(1.0).unwrap(), 4000),
            (ModelSpec::lorenz63(120f64.sqrt()).unwrap(), 2000),
            (ModelSpec::lorenz96(20f64.sqrt()).unwrap(), 2000),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let truth = model.generate_truth(&mut rng, 5.0, horizon).unwrap();
            let z = normalized_mismatch(&model, &truth).unwrap();
            let (mean, var) = moments(&z);
            assert!(mean.abs() < 0.05, "{}: mean {mean}", model.name());
            assert!((0.93..=1.07).contains(&var), "{}: var {var}", model.name());
            let jm = cost_model(&model, &truth).unwrap() / (horizon * model.dim()) as f64;
            assert!((jm - 0.5).abs() < 0.05, "{}: J_m/Nm {jm}", model.name());
        }
    }

    #[test]
    fn truth_observation_cost_is_half_per_observation() {
        let dw = ModelSpec::double_well(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let truth = dw.generate_truth(&mut rng, 5.0, 4000).unwrap();
        let co = SpdMatrix::scaled_identity(1, 0.16).unwrap();
        let obs = observe(&truth, &[0], &strided_steps(4000, 1), &co, &mut rng).unwrap();
        let jo = cost_obs(&truth, &obs).unwrap() / obs.count() as f64;
        assert!((jo - 0.5).abs() < 0.05, "J_o/M {jo}");
        let exact = Trajectory::from_flat(1, obs.values().to_vec()).unwrap();
        assert_eq!(cost_obs(&exact, &obs).unwrap(), 0.0);
    }

    #[test]
    fn identity_map_has_minus_identity_blocks() {
        let id = ModelSpec::lorenz96(1.0).unwrap().with_tau(0.0).unwrap();
        let u = Trajectory::constant(id.initial_state(), 3).unwrap();
        let jac = mismatch_jacobian(&id, &u);
        for n in 0..3 {
            assert_eq!(jac.lower(n), &-nalgebra::DMatrix::<f64>::identity(15, 15));
        }
    }

    #[test]
    fn jacobian_matches_directional_differences() {
        let l96 = ModelSpec::lorenz96(20f64.sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let u = l96.generate_truth(&mut rng, 2.0, 30).unwrap();
        let jac = mismatch_jacobian(&l96, &u);
        let h = 1e-5;
        for _ in 0..20 {
            let dir: Vec<f64> = (0..u.as_slice().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let plus = u.add(&dir.iter().map(|d| d * h).collect::<Vec<_>>()).unwrap();
            let minus = u.add(&dir.iter().map(|d| -d * h).collect::<Vec<_>>()).unwrap();
            let gp = mismatch(&l96, &plus);
            let gm = mismatch(&l96, &minus);
            let fd: Vec<f64> = gp.as_slice().iter().zip(gm.as_slice()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let an = jac.apply(&dir).unwrap();
            let num: f64 = fd.iter().zip(&an).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = an.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(num / den < 1e-6, "rel err {}", num / den);
        }
    }
}
