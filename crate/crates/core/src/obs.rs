//! Partial noisy observations of a trajectory, long-run climatology, and the
//! completion of sparse observations to full-dimension initial guesses.
//!
//! The observation operator is always a component selection: `H(x)` picks a
//! fixed, strictly increasing list of state components. Component indices are
//! zero based throughout the API and the file formats.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_sample, BlockCovariance, SpdMatrix};
use crate::models::{ModelSpec, DEFAULT_SPINUP_TIME};
use crate::trajectory::Trajectory;

/// Minimum run length accepted by [`climatology`].
pub const MIN_CLIMATOLOGY_STEPS: usize = 10_000;

/// Raw observations `y_n = H(X_n) + xi_n` at a subset of steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObservationRecord", into = "ObservationRecord")]
pub struct ObservationSet {
    state_dim: usize,
    horizon: usize,
    components: Vec<usize>,
    steps: Vec<usize>,
    values: Vec<f64>,
    covariance: SpdMatrixEq,
}

/// Wrapper so observation sets can be compared for equality.
#[derive(Clone, Debug)]
struct SpdMatrixEq(SpdMatrix);

impl PartialEq for SpdMatrixEq {
    fn eq(&self, other: &Self) -> bool {
        self.0.matrix() == other.0.matrix()
    }
}

#[derive(Serialize, Deserialize)]
struct ObservationRecord {
    state_dim: usize,
    horizon: usize,
    components: Vec<usize>,
    steps: Vec<usize>,
    values: Vec<Vec<f64>>,
    covariance: SpdMatrix,
}

impl TryFrom<ObservationRecord> for ObservationSet {
    type Error = Error;

    fn try_from(r: ObservationRecord) -> Result<Self> {
        let d = r.components.len();
        if let Some(row) = r.values.iter().find(|row| row.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: row.len(),
                context: "observation row",
            });
        }
        ObservationSet::new(
            r.state_dim,
            r.horizon,
            r.components,
            r.steps,
            r.values.into_iter().flatten().collect(),
            r.covariance,
        )
    }
}

impl From<ObservationSet> for ObservationRecord {
    fn from(o: ObservationSet) -> Self {
        let d = o.components.len();
        ObservationRecord {
            state_dim: o.state_dim,
            horizon: o.horizon,
            values: o.values.chunks(d).map(<[f64]>::to_vec).collect(),
            components: o.components,
            steps: o.steps,
            covariance: o.covariance.0,
        }
    }
}

fn strictly_increasing(v: &[usize]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ObservationSet {
    pub fn new(
        state_dim: usize,
        horizon: usize,
        components: Vec<usize>,
        steps: Vec<usize>,
        values: Vec<f64>,
        covariance: SpdMatrix,
    ) -> Result<Self> {
        if components.is_empty() || steps.is_empty() {
            return Err(Error::InvalidInput(
                "observations need at least one component and one step".into(),
            ));
        }
        if !strictly_increasing(&components) || components[components.len() - 1] >= state_dim {
            return Err(Error::InvalidInput(format!(
                "observed components {components:?} must be strictly increasing and below {state_dim}"
            )));
        }
        if !strictly_increasing(&steps) || steps[steps.len() - 1] > horizon {
            return Err(Error::InvalidInput(format!(
                "observed steps must be strictly increasing and at most {horizon}"
            )));
        }
        if covariance.dim() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                actual: covariance.dim(),
                context: "observation covariance",
            });
        }
        if values.len() != components.len() * steps.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len() * steps.len(),
                actual: values.len(),
                context: "observation values",
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite observation value".into()));
        }
        Ok(Self {
            state_dim,
            horizon,
            components,
            steps,
            values,
            covariance: SpdMatrixEq(covariance),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn components(&self) -> &[usize] {
        &self.components
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    /// Number of observed components `d`.
    pub fn obs_dim(&self) -> usize {
        self.components.len()
    }

    /// Total number of scalar observations `M`.
    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Observed vector at the `i`-th observed step.
    pub fn value(&self, i: usize) -> &[f64] {
        let d = self.obs_dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn covariance(&self) -> &SpdMatrix {
        &self.covariance.0
    }

    /// `C_o` replicated over every observed step.
    pub fn block_covariance(&self) -> BlockCovariance {
        BlockCovariance::uniform(self.covariance.0.clone(), self.steps.len())
    }

    fn check_trajectory(&self, u: &Trajectory) -> Result<()> {
        if u.dim() != self.state_dim || u.horizon() != self.horizon {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim * (self.horizon + 1),
                actual: u.as_slice().len(),
                context: "trajectory against observation set",
            });
        }
        Ok(())
    }

    /// Stacked `H(u) - y` over the observed steps.
    pub fn residual(&self, u: &Trajectory) -> Result<Vec<f64>> {
        self.check_trajectory(u)?;
        let mut out = Vec::with_capacity(self.count());
        for (i, &n) in self.steps.iter().enumerate() {
            let x = u.state_slice(n);
            out.extend(
                self.components
                    .iter()
                    .zip(self.value(i))
                    .map(|(&c, y)| x[c] - y),
            );
        }
        Ok(out)
    }

    /// `H v` for a trajectory-shaped increment `v`: the observed entries,
    /// stacked like [`ObservationSet::residual`].
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let len = self.state_dim * (self.horizon + 1);
        if v.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: v.len(),
                context: "increment against observation set",
            });
        }
        let m = self.state_dim;
        Ok(self
            .steps
            .iter()
            .flat_map(|&n| self.components.iter().map(move |&c| v[n * m + c]))
            .collect())
    }

    /// `||H(u) - y||^2` in the `C_o`-weighted norm.
    pub fn weighted_misfit(&self, u: &Trajectory) -> Result<f64> {
        self.block_covariance().weighted_sq_norm(&self.residual(u)?)
    }

    /// `C_o^{-1/2} (H(u) - y)`, the normalized data mismatch.
    pub fn normalized_residual(&self, u: &Trajectory) -> Result<Vec<f64>> {
        self.block_covariance().whiten(&self.residual(u)?)
    }

    /// Writes `step,component,value` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,component,value")?;
        for (i, &n) in self.steps.iter().enumerate() {
            for (&c, v) in self.components.iter().zip(self.value(i)) {
                writeln!(w, "{n},{c},{v:.16e}")?;
            }
        }
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv). The covariance
    /// and the trajectory shape are not part of the CSV and must be supplied.
    pub fn read_csv<R: BufRead>(
        r: R,
        state_dim: usize,
        horizon: usize,
        covariance: SpdMatrix,
    ) -> Result<Self> {
        let mut steps: Vec<usize> = Vec::new();
        let mut components: Vec<usize> = Vec::new();
        let mut values = Vec::new();
        let mut first_step_done = false;
        let mut col = 0;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("line {}: malformed row '{line}'", lineno + 1));
            let mut fields = line.split(',');
            let step: usize = fields.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            let comp: usize = fields.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            let value: f64 = fields.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            if fields.next().is_some() {
                return Err(bad());
            }
            if steps.last() != Some(&step) {
                if !steps.is_empty() {
                    first_step_done = true;
                    if col != components.len() {
                        return Err(Error::Parse(format!(
                            "line {}: step {} has {col} components, expected {}",
                            lineno + 1,
                            steps[steps.len() - 1],
                            components.len()
                        )));
                    }
                }
                steps.push(step);
                col = 0;
            }
            if first_step_done {
                if components.get(col) != Some(&comp) {
                    return Err(Error::Parse(format!(
                        "line {}: unexpected component {comp}",
                        lineno + 1
                    )));
                }
            } else {
                components.push(comp);
            }
            col += 1;
            values.push(value);
        }
        Self::new(state_dim, horizon, components, steps, values, covariance)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Observation steps `0, stride, 2 stride, ...` up to the horizon.
pub fn strided_steps(horizon: usize, stride: usize) -> Vec<usize> {
    (0..=horizon).step_by(stride.max(1)).collect()
}

/// Draws `y_n = H(X_n) + xi_n`, `xi_n ~ N(0, C_o)`, at the given steps.
pub fn observe<R: Rng + ?Sized>(
    truth: &Trajectory,
    components: &[usize],
    steps: &[usize],
    covariance: &SpdMatrix,
    rng: &mut R,
) -> Result<ObservationSet> {
    if let Some(&n) = steps.iter().find(|&&n| n > truth.horizon()) {
        return Err(Error::InvalidInput(format!(
            "observation step {n} beyond horizon {}",
            truth.horizon()
        )));
    }
    if let Some(&c) = components.iter().find(|&&c| c >= truth.dim()) {
        return Err(Error::InvalidInput(format!(
            "observed component {c} outside state dimension {}",
            truth.dim()
        )));
    }
    let mut values = Vec::with_capacity(components.len() * steps.len());
    for &n in steps {
        let noise = gaussian_sample(rng, covariance);
        let x = truth.state_slice(n);
        values.extend(components.iter().zip(noise.iter()).map(|(&c, e)| x[c] + e));
    }
    ObservationSet::new(
        truth.dim(),
        truth.horizon(),
        components.to_vec(),
        steps.to_vec(),
        values,
        covariance.clone(),
    )
}

/// Long-run mean and covariance of the deterministic model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub steps: usize,
}

impl Climatology {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, steps: usize) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: covariance.nrows(),
                context: "climatology covariance",
            });
        }
        Ok(Self {
            mean,
            covariance,
            steps,
        })
    }

    pub fn variance(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }
}

/// Runs the deterministic model for `n_steps` after the standard spin-up and
/// returns the streaming (Welford) mean and covariance.
pub fn climatology(model: &ModelSpec, n_steps: usize) -> Result<Climatology> {
    if n_steps < MIN_CLIMATOLOGY_STEPS {
        return Err(Error::InvalidInput(format!(
            "climatology needs at least {MIN_CLIMATOLOGY_STEPS} steps, got {n_steps}"
        )));
    }
    let m = model.dim();
    let mut x = model.initial_state().as_slice().to_vec();
    let mut next = vec![0.0; m];
    let spinup = model.steps_for(DEFAULT_SPINUP_TIME);
    for n in 0..spinup {
        model.step_into(&x, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: n + 1 });
        }
        std::mem::swap(&mut x, &mut next);
    }
    let mut mean = vec![0.0; m];
    let mut comoment = vec![0.0; m * m];
    let mut delta = vec![0.0; m];
    for k in 0..n_steps {
        let count = (k + 1) as f64;
        for i in 0..m {
            delta[i] = x[i] - mean[i];
            mean[i] += delta[i] / count;
        }
        for i in 0..m {
            let after = x[i] - mean[i];
            for j in 0..=i {
                comoment[i * m + j] += delta[j] * after;
            }
        }
        model.step_into(&x, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: spinup + k + 1 });
        }
        std::mem::swap(&mut x, &mut next);
    }
    let denom = (n_steps - 1) as f64;
    let covariance = DMatrix::from_fn(m, m, |i, j| {
        let (a, b) = if j <= i { (i, j) } else { (j, i) };
        comoment[a * m + b] / denom
    });
    Climatology::new(DVector::from_vec(mean), covariance, n_steps)
}

/// Full-dimension observations `y_hat` over every step with their
/// per-step covariance `C_o_hat`.
#[derive(Clone, Debug)]
pub struct CompletedObservations {
    values: Trajectory,
    covariance: BlockCovariance,
    background: DVector<f64>,
}

impl CompletedObservations {
    pub fn values(&self) -> &Trajectory {
        &self.values
    }

    /// Block-diagonal `C_o_hat` with one block per state.
    pub fn covariance(&self) -> &BlockCovariance {
        &self.covariance
    }

    /// The climatological mean used to fill unobserved entries.
    pub fn background(&self) -> &DVector<f64> {
        &self.background
    }

    /// `||u - y_hat||^2` in the `C_o_hat`-weighted norm.
    pub fn weighted_misfit(&self, u: &Trajectory) -> Result<f64> {
        if u.as_slice().len() != self.values.as_slice().len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.as_slice().len(),
                actual: u.as_slice().len(),
                context: "trajectory against completed observations",
            });
        }
        let r: Vec<f64> = u
            .as_slice()
            .iter()
            .zip(self.values.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        self.covariance.weighted_sq_norm(&r)
    }
}

/// Fills unobserved components and steps with the climatological mean.
///
/// At observed steps the covariance block holds `C_o` on the observed
/// components, the climatological covariance of the unobserved components,
/// and zero cross terms. Unobserved steps get the full climatological
/// covariance.
pub fn complete(obs: &ObservationSet, clim: &Climatology) -> Result<CompletedObservations> {
    let m = obs.state_dim();
    if clim.mean.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: clim.mean.len(),
            context: "climatology dimension",
        });
    }
    let horizon = obs.horizon();
    let comps = obs.components();
    let mut data: Vec<f64> = (0..=horizon).flat_map(|_| clim.mean.iter().copied()).collect();
    for (i, &n) in obs.steps().iter().enumerate() {
        for (&c, &v) in comps.iter().zip(obs.value(i)) {
            data[n * m + c] = v;
        }
    }
    let values = Trajectory::from_flat(m, data)?;

    let observed: Vec<bool> = (0..m).map(|c| comps.contains(&c)).collect();
    let co = obs.covariance().matrix();
    let observed_block = DMatrix::from_fn(m, m, |i, j| match (observed[i], observed[j]) {
        (true, true) => {
            let a = comps.iter().position(|&c| c == i).unwrap();
            let b = comps.iter().position(|&c| c == j).unwrap();
            co[(a, b)]
        }
        (false, false) => clim.covariance[(i, j)],
        _ => 0.0,
    });
    let singular = |e: Error| Error::InvalidInput(format!("completed observation covariance is singular: {e}"));

    let all_steps = obs.steps().len() == horizon + 1;
    let mut palette = vec![SpdMatrix::new(observed_block).map_err(singular)?];
    let mut assignment = vec![0usize; horizon + 1];
    if !all_steps {
        palette.push(SpdMatrix::new(clim.covariance.clone()).map_err(singular)?);
        assignment.fill(1);
        for &n in obs.steps() {
            assignment[n] = 0;
        }
    }
    Ok(CompletedObservations {
        values,
        covariance: BlockCovariance::from_palette(palette, assignment)?,
        background: clim.mean.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_obs(seed: u64) -> ObservationSet {
        let l96 = ModelSpec::lorenz96(20f64.sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = l96.generate_truth(&mut rng, 1.0, 50).unwrap();
        observe(
            &truth,
            &[0, 5, 10],
            &strided_steps(50, 10),
            &SpdMatrix::scaled_identity(3, 1e-4).unwrap(),
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_limit_reproduces_truth() {
        let l63 = ModelSpec::lorenz63(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = l63.generate_truth(&mut rng, 1.0, 20).unwrap();
        let tiny = SpdMatrix::scaled_identity(2, 1e-300).unwrap();
        let obs = observe(&truth, &[0, 2], &strided_steps(20, 1), &tiny, &mut rng).unwrap();
        for (i, &n) in obs.steps().iter().enumerate() {
            assert_eq!(obs.value(i)[0], truth.state_slice(n)[0]);
            assert_eq!(obs.value(i)[1], truth.state_slice(n)[2]);
        }
    }

    #[test]
    fn truth_chi_square_is_one() {
        let dw = ModelSpec::double_well(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = dw.generate_truth(&mut rng, 5.0, 4000).unwrap();
        let co = SpdMatrix::scaled_identity(1, 0.16).unwrap();
        let obs = observe(&truth, &[0], &strided_steps(4000, 1), &co, &mut rng).unwrap();
        let chi = obs.weighted_misfit(&truth).unwrap() / obs.count() as f64;
        assert!((0.9..=1.1).contains(&chi), "chi-square {chi}");
    }

    #[test]
    fn sparse_set_counts() {
        let obs = sample_obs(1);
        assert_eq!(obs.steps(), &[0, 10, 20, 30, 40, 50]);
        assert_eq!(obs.count(), 18);
        assert_eq!(obs.obs_dim(), 3);
    }

    #[test]
    fn rejects_bad_shapes() {
        let c = SpdMatrix::identity(1);
        assert!(ObservationSet::new(3, 4, vec![], vec![0], vec![], c.clone()).is_err());
        assert!(ObservationSet::new(3, 4, vec![3], vec![0], vec![1.0], c.clone()).is_err());
        assert!(ObservationSet::new(3, 4, vec![0], vec![5], vec![1.0], c.clone()).is_err());
        assert!(ObservationSet::new(3, 4, vec![0], vec![1, 1], vec![1.0, 2.0], c).is_err());
    }

    #[test]
    fn fixed_point_climatology() {
        let dw = ModelSpec::double_well(0.0).unwrap();
        let clim = climatology(&dw, 20_000).unwrap();
        assert_eq!(clim.mean[0], 1.0);
        assert_eq!(clim.covariance[(0, 0)], 0.0);
        assert!(climatology(&dw, 100).is_err());
    }

    #[test]
    fn lorenz63_climatology_statistics() {
        let l63 = ModelSpec::lorenz63(0.0).unwrap();
        let clim = climatology(&l63, 20_000_000).unwrap();
        // The x^2 average is zero by the (x, y, z) -> (-x, -y, z) symmetry; a
        // finite run only reproduces the reference 0.1015 up to sampling noise.
        assert!((clim.mean[1] - 0.1015).abs() < 0.3, "mean x2 {}", clim.mean[1]);
        assert!((clim.mean[2] / 24.3515 - 1.0).abs() < 0.05, "mean x3 {}", clim.mean[2]);
        assert!((clim.covariance[(1, 1)] / 82.9135 - 1.0).abs() < 0.10);
        assert!((clim.covariance[(2, 2)] / 67.2204 - 1.0).abs() < 0.10);
    }

    #[test]
    fn fully_observed_completion_is_identity() {
        let dw = ModelSpec::double_well(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = dw.generate_truth(&mut rng, 5.0, 30).unwrap();
        let co = SpdMatrix::scaled_identity(1, 0.16).unwrap();
        let obs = observe(&truth, &[0], &strided_steps(30, 1), &co, &mut rng).unwrap();
        let clim = climatology(&ModelSpec::double_well(0.0).unwrap(), 10_000).unwrap();
        let done = complete(&obs, &clim).unwrap();
        assert_eq!(done.values().as_slice(), obs.values());
        assert!(done.covariance().is_uniform());
        assert_eq!(done.covariance().block(7).matrix()[(0, 0)], 0.16);
    }

    #[test]
    fn lorenz63_completed_covariance_layout() {
        let clim = Climatology::new(
            DVector::from_vec(vec![0.0, 0.1015, 24.3515]),
            DMatrix::from_row_slice(3, 3, &[62.0, 61.0, 0.0, 61.0, 82.9135, 0.3134, 0.0, 0.3134, 67.2204]),
            20_000_000,
        )
        .unwrap();
        let co = SpdMatrix::scaled_identity(1, 0.05).unwrap();
        let obs = ObservationSet::new(3, 2, vec![0], vec![0, 1, 2], vec![1.0, 2.0, 3.0], co).unwrap();
        let done = complete(&obs, &clim).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[0.05, 0.0, 0.0, 0.0, 82.9135, 0.3134, 0.0, 0.3134, 67.2204],
        );
        assert_eq!(done.covariance().block(1).matrix(), &expected);
        assert_eq!(done.values().state_slice(2), &[3.0, 0.1015, 24.3515]);
    }

    #[test]
    fn unobserved_steps_take_climatological_mean() {
        let obs = sample_obs(2);
        let l96 = ModelSpec::lorenz96(0.0).unwrap();
        let clim = climatology(&l96, 20_000).unwrap();
        let done = complete(&obs, &clim).unwrap();
        assert_eq!(done.values().state_slice(7), clim.mean.as_slice());
        assert_eq!(done.covariance().block(7).matrix(), &clim.covariance);
        let s10 = done.values().state_slice(10);
        assert_eq!(s10[5], obs.value(1)[1]);
        assert_eq!(s10[1], clim.mean[1]);
        let b = done.covariance().block(10).matrix();
        assert_eq!(b[(5, 5)], 1e-4);
        assert_eq!(b[(5, 6)], 0.0);
        assert_eq!(b[(6, 7)], clim.covariance[(6, 7)]);
        assert_eq!(done.weighted_misfit(done.values()).unwrap(), 0.0);
    }

    #[test]
    fn singular_completion_is_an_error() {
        let clim = Climatology::new(DVector::zeros(2), DMatrix::zeros(2, 2), 10_000).unwrap();
        let obs = ObservationSet::new(2, 1, vec![0], vec![0, 1], vec![0.0, 0.0], SpdMatrix::identity(1)).unwrap();
        assert!(complete(&obs, &clim).is_err());
    }

    #[test]
    fn csv_rejects_garbage() {
        let csv = "step,component,value\n0,0,1.0\n0,x,2\n";
        let r = ObservationSet::read_csv(csv.as_bytes(), 2, 3, SpdMatrix::identity(1));
        assert!(matches!(r, Err(Error::Parse(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn csv_and_json_round_trip_bit_exact(seed in any::<u64>(), scale in -300i32..300) {
            let mut obs = sample_obs(seed);
            let factor = 10f64.powi(scale / 10);
            obs.values.iter_mut().for_each(|v| *v *= factor);
            let mut buf = Vec::new();
            obs.write_csv(&mut buf).unwrap();
            let back = ObservationSet::read_csv(buf.as_slice(), 15, 50, obs.covariance().clone()).unwrap();
            prop_assert_eq!(&back, &obs);
            let json = obs.to_json().unwrap();
            let back = ObservationSet::from_json(&json).unwrap();
            prop_assert_eq!(&back, &obs);
        }
    }
}
