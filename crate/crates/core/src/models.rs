//! Discrete-time test systems: the stochastic double well, Lorenz 63 and
//! Lorenz 96, each as an explicit Euler map `F` (the imperfect model) and an
//! Euler-Maruyama map `F + sqrt(Cm) eta` (the perfect, stochastic model).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{gaussian_sample, SpdMatrix};
use crate::trajectory::Trajectory;

/// Names accepted by [`ModelSpec::from_name`].
pub const MODEL_NAMES: [&str; 3] = ["dw", "l63", "l96"];

/// Spin-up length, in model time units, used for truths and climatologies.
pub const DEFAULT_SPINUP_TIME: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    /// `dx/dt = x (1 - x^2)`
    DoubleWell,
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    /// Cyclic Lorenz 96 with constant forcing.
    Lorenz96 { forcing: f64 },
}

impl Dynamics {
    fn tendency(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            Dynamics::DoubleWell => out[0] = x[0] * (1.0 - x[0] * x[0]),
            Dynamics::Lorenz63 { sigma, rho, beta } => {
                out[0] = sigma * (x[1] - x[0]);
                out[1] = rho * x[0] - x[1] - x[0] * x[2];
                out[2] = x[0] * x[1] - beta * x[2];
            }
            Dynamics::Lorenz96 { forcing } => {
                let m = x.len();
                for l in 0..m {
                    let xm2 = x[(l + m - 2) % m];
                    let xm1 = x[(l + m - 1) % m];
                    let xp1 = x[(l + 1) % m];
                    out[l] = (xp1 - xm2) * xm1 - x[l] + forcing;
                }
            }
        }
    }

    fn tendency_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match *self {
            Dynamics::DoubleWell => DMatrix::from_element(1, 1, 1.0 - 3.0 * x[0] * x[0]),
            Dynamics::Lorenz63 { sigma, rho, beta } => DMatrix::from_row_slice(
                3,
                3,
                &[
                    -sigma, sigma, 0.0, //
                    rho - x[2], -1.0, -x[0], //
                    x[1], x[0], -beta,
                ],
            ),
            Dynamics::Lorenz96 { .. } => {
                let m = x.len();
                let mut j = DMatrix::zeros(m, m);
                for l in 0..m {
                    let im2 = (l + m - 2) % m;
                    let im1 = (l + m - 1) % m;
                    let ip1 = (l + 1) % m;
                    j[(l, ip1)] += x[im1];
                    j[(l, im2)] -= x[im1];
                    j[(l, im1)] += x[ip1] - x[im2];
                    j[(l, l)] -= 1.0;
                }
                j
            }
        }
    }
}

/// A discrete-time model `x_{n+1} = F(x_n) + Q_n` with Euler step `F`.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    name: String,
    dynamics: Dynamics,
    dim: usize,
    tau: f64,
    sigma_m: f64,
    model_cov: Option<SpdMatrix>,
    initial_state: DVector<f64>,
}

impl ModelSpec {
    /// Double well with `tau = 0.05` and `Cm = tau sigma_m^2`.
    pub fn double_well(sigma_m: f64) -> Result<Self> {
        let tau = 0.05;
        Self::build(
            "dw",
            Dynamics::DoubleWell,
            tau,
            sigma_m,
            DMatrix::identity(1, 1),
            DVector::from_element(1, 1.0),
        )
    }

    /// Lorenz 63 with the standard parameters, `tau = 0.005` and `Cm = tau sigma_m^2 I`.
    pub fn lorenz63(sigma_m: f64) -> Result<Self> {
        Self::build(
            "l63",
            Dynamics::Lorenz63 {
                sigma: 10.0,
                rho: 28.0,
                beta: 8.0 / 3.0,
            },
            0.005,
            sigma_m,
            DMatrix::identity(3, 3),
            DVector::from_element(3, 1.0),
        )
    }

    /// Fifteen-variable Lorenz 96 with forcing 8, `tau = 0.005` and the
    /// circulant nearest-neighbour model-error covariance.
    pub fn lorenz96(sigma_m: f64) -> Result<Self> {
        let m = 15;
        let shape = DMatrix::from_fn(m, m, |i, j| match (i + m - j) % m {
            0 => 0.5,
            1 => 0.25,
            d if d == m - 1 => 0.25,
            _ => 0.0,
        });
        let mut x0 = DVector::from_element(m, 8.0);
        x0[0] += 0.01;
        Self::build(
            "l96",
            Dynamics::Lorenz96 { forcing: 8.0 },
            0.005,
            sigma_m,
            shape,
            x0,
        )
    }

    /// Registry lookup by short name, with the model-error level used in the
    /// reference experiments unless `sigma_m` is given.
    pub fn from_name(name: &str, sigma_m: Option<f64>) -> Result<Self> {
        let sigma = sigma_m.unwrap_or(Self::default_sigma_m(name)?);
        match name {
            "dw" => Self::double_well(sigma),
            "l63" => Self::lorenz63(sigma),
            "l96" => Self::lorenz96(sigma),
            _ => unreachable!("validated by default_sigma_m"),
        }
    }

    pub fn default_sigma_m(name: &str) -> Result<f64> {
        match name {
            "dw" => Ok(1.0),
            // tau sigma_m^2 = 0.6 with tau = 0.005
            "l63" => Ok(120f64.sqrt()),
            "l96" => Ok(20f64.sqrt()),
            _ => Err(Error::UnknownModel {
                name: name.to_string(),
                registered: MODEL_NAMES.join(", "),
            }),
        }
    }

    fn build(
        name: &str,
        dynamics: Dynamics,
        tau: f64,
        sigma_m: f64,
        cov_shape: DMatrix<f64>,
        initial_state: DVector<f64>,
    ) -> Result<Self> {
        if !(sigma_m >= 0.0) || !sigma_m.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sigma_m must be finite and >= 0, got {sigma_m}"
            )));
        }
        let model_cov = if sigma_m > 0.0 {
            Some(SpdMatrix::new(cov_shape * (tau * sigma_m * sigma_m))?)
        } else {
            None
        };
        Ok(Self {
            name: name.to_string(),
            dim: initial_state.len(),
            dynamics,
            tau,
            sigma_m,
            model_cov,
            initial_state,
        })
    }

    /// Same dynamics with a different Euler step; `Cm` is rescaled to
    /// `tau sigma_m^2` times the same shape.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidInput(format!("tau must be finite and >= 0, got {tau}")));
        }
        let model_cov = match &self.model_cov {
            Some(cm) if tau > 0.0 => Some(SpdMatrix::new(cm.matrix() * (tau / self.tau))?),
            _ => None,
        };
        Ok(Self {
            tau,
            model_cov,
            ..self.clone()
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn sigma_m(&self) -> f64 {
        self.sigma_m
    }

    /// Reference state the spin-up starts from.
    pub fn initial_state(&self) -> &DVector<f64> {
        &self.initial_state
    }

    /// The model-error covariance `Cm`; an error for noiseless models.
    pub fn model_covariance(&self) -> Result<&SpdMatrix> {
        self.model_cov.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("model '{}' has no model error (sigma_m = 0)", self.name))
        })
    }

    /// Number of steps covering `time` model time units.
    pub fn steps_for(&self, time: f64) -> usize {
        (time / self.tau - 1e-9).ceil().max(0.0) as usize
    }

    /// Writes `F(x)` into `out` without validation.
    pub(crate) fn step_into(&self, x: &[f64], out: &mut [f64]) {
        self.dynamics.tendency(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi + self.tau * *o;
        }
    }

    pub fn step_deterministic(&self, x: &[f64], n: usize) -> Result<DVector<f64>> {
        self.check_state(x)?;
        let mut out = DVector::zeros(self.dim);
        self.step_into(x, out.as_mut_slice());
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: n + 1 });
        }
        Ok(out)
    }

    /// One Euler-Maruyama step, `F(x) + sqrt(Cm) eta`.
    pub fn step_stochastic<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        n: usize,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let mut out = self.step_deterministic(x, n)?;
        if let Some(cm) = &self.model_cov {
            out += gaussian_sample(rng, cm);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: n + 1 });
        }
        Ok(out)
    }

    /// `DF(x) = I + tau Df(x)`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut j = self.dynamics.tendency_jacobian(x) * self.tau;
        for i in 0..self.dim {
            j[(i, i)] += 1.0;
        }
        j
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
                context: "model state",
            });
        }
        Ok(())
    }

    /// Runs the stochastic model through the spin-up from the reference
    /// state, then returns the next `horizon + 1` states.
    pub fn generate_truth<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        spinup_time: f64,
        horizon: usize,
    ) -> Result<Trajectory> {
        if !(spinup_time >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "spin-up time must be >= 0, got {spinup_time}"
            )));
        }
        let spinup = self.steps_for(spinup_time);
        let mut x = self.initial_state.clone();
        for n in 0..spinup {
            x = self.step_stochastic(x.as_slice(), n, rng)?;
        }
        let mut data = Vec::with_capacity((horizon + 1) * self.dim);
        data.extend(x.iter());
        for n in 0..horizon {
            x = self.step_stochastic(x.as_slice(), spinup + n, rng)?;
            data.extend(x.iter());
        }
        Trajectory::from_flat(self.dim, data)
    }

    /// Deterministic orbit of length `horizon + 1` starting at `x0`.
    pub fn run_deterministic(&self, x0: &[f64], horizon: usize) -> Result<Trajectory> {
        self.check_state(x0)?;
        let mut data = Vec::with_capacity((horizon + 1) * self.dim);
        data.extend_from_slice(x0);
        let mut x = DVector::from_column_slice(x0);
        for n in 0..horizon {
            x = self.step_deterministic(x.as_slice(), n)?;
            data.extend(x.iter());
        }
        Trajectory::from_flat(self.dim, data)
    }
}
