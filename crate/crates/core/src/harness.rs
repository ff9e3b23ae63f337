//! Twin experiments: replicate ensembles, summary tables, mismatch
//! histograms, and the long-run study of unobserved variables.
//!
//! A replicate draws one truth and one observation realization from a single
//! seeded stream and hands the same inputs to every configured method.
//! Replicates are independent, so ensembles run on a rayon pool; results are
//! collected in seed order and every reduction sorts before summing, so
//! summaries do not depend on thread count or scheduling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::models::{ModelSpec, DEFAULT_SPINUP_TIME};
use crate::obs::{climatology, complete, observe, strided_steps, Climatology, CompletedObservations, ObservationSet};
use crate::shadowing::{
    newton_shadow, weak_shadow, AlphaMode, AssimilationResult, ShadowingConfig, StepNorm, Termination,
};
use crate::trajectory::Trajectory;
use crate::w4dvar::{w4dvar_solve, DecreaseScale, Init, W4DVarConfig};

/// Set to `1` to run replicates sequentially on the calling thread.
pub const DETERMINISTIC_ENV: &str = "ASSIM_DETERMINISTIC";

fn default_rho() -> f64 {
    0.8
}
fn default_r() -> f64 {
    0.99
}
fn default_shadow_iterations() -> usize {
    50
}
fn default_w4dvar_tolerance() -> f64 {
    1e-6
}
fn default_w4dvar_iterations() -> usize {
    500
}
fn default_init() -> Init {
    Init::Observations
}

/// One assimilation method with its tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodSpec {
    Newton {
        #[serde(default = "default_shadow_iterations")]
        max_iterations: usize,
    },
    ShadowAdaptive {
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_r")]
        r: f64,
        #[serde(default)]
        step_norm: StepNorm,
        #[serde(default = "default_shadow_iterations")]
        max_iterations: usize,
    },
    ShadowFixed {
        alpha: f64,
        #[serde(default = "default_r")]
        r: f64,
        #[serde(default)]
        step_norm: StepNorm,
        #[serde(default = "default_shadow_iterations")]
        max_iterations: usize,
    },
    W4dvar {
        #[serde(default = "default_init")]
        init: Init,
        #[serde(default = "default_w4dvar_tolerance")]
        tolerance: f64,
        #[serde(default)]
        decrease_scale: DecreaseScale,
        #[serde(default = "default_w4dvar_iterations")]
        max_iterations: usize,
    },
}

impl MethodSpec {
    pub fn shadow_adaptive() -> Self {
        MethodSpec::ShadowAdaptive {
            rho: default_rho(),
            r: default_r(),
            step_norm: StepNorm::default(),
            max_iterations: default_shadow_iterations(),
        }
    }

    pub fn shadow_fixed(alpha: f64, r: f64) -> Self {
        MethodSpec::ShadowFixed {
            alpha,
            r,
            step_norm: StepNorm::default(),
            max_iterations: default_shadow_iterations(),
        }
    }

    pub fn newton() -> Self {
        MethodSpec::Newton {
            max_iterations: default_shadow_iterations(),
        }
    }

    pub fn w4dvar(init: Init) -> Self {
        MethodSpec::W4dvar {
            init,
            tolerance: default_w4dvar_tolerance(),
            decrease_scale: DecreaseScale::default(),
            max_iterations: default_w4dvar_iterations(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodSpec::Newton { .. } => Ok(()),
            MethodSpec::ShadowAdaptive { .. } | MethodSpec::ShadowFixed { .. } => {
                self.shadowing_config().expect("shadowing variant").validate()
            }
            MethodSpec::W4dvar { .. } => self.w4dvar_config().expect("w4dvar variant").validate(),
        }
    }

    /// Shadowing configuration for the Newton and shadowing variants.
    pub fn shadowing_config(&self) -> Option<ShadowingConfig> {
        match *self {
            MethodSpec::Newton { max_iterations } => Some(ShadowingConfig {
                max_iterations,
                ..ShadowingConfig::default()
            }),
            MethodSpec::ShadowAdaptive { rho, r, step_norm, max_iterations } => Some(ShadowingConfig {
                rho,
                r,
                step_norm,
                max_iterations,
                ..ShadowingConfig::default()
            }),
            MethodSpec::ShadowFixed { alpha, r, step_norm, max_iterations } => Some(ShadowingConfig {
                alpha: AlphaMode::Fixed(alpha),
                r,
                step_norm,
                max_iterations,
                ..ShadowingConfig::default()
            }),
            MethodSpec::W4dvar { .. } => None,
        }
    }

    pub fn w4dvar_config(&self) -> Option<W4DVarConfig> {
        match *self {
            MethodSpec::W4dvar { init, tolerance, decrease_scale, max_iterations } => Some(W4DVarConfig {
                init,
                tolerance,
                decrease_scale,
                max_iterations,
                ..W4DVarConfig::default()
            }),
            _ => None,
        }
    }

    pub fn run(
        &self,
        model: &ModelSpec,
        completed: &CompletedObservations,
        raw: &ObservationSet,
    ) -> Result<AssimilationResult> {
        match self {
            MethodSpec::Newton { .. } => newton_shadow(model, completed, raw, &self.shadowing_config().unwrap()),
            MethodSpec::ShadowAdaptive { .. } | MethodSpec::ShadowFixed { .. } => {
                weak_shadow(model, completed, raw, &self.shadowing_config().unwrap())
            }
            MethodSpec::W4dvar { .. } => w4dvar_solve(model, completed, raw, &self.w4dvar_config().unwrap()),
        }
    }
}

fn default_spinup() -> f64 {
    DEFAULT_SPINUP_TIME
}
fn default_replicates() -> usize {
    100
}
fn default_time_fraction() -> f64 {
    1.0
}

/// A twin experiment: model, window, observation network, and methods.
///
/// Serialized as flat TOML keys plus one `[method.<name>]` table per method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    /// Number of transitions `N`; the window holds `N+1` states.
    pub n: usize,
    /// Model-error scale; `Cm` is `tau sigma_m^2` times the model's shape.
    pub sigma_m: f64,
    /// Spin-up before the window, in model time units.
    #[serde(default = "default_spinup")]
    pub spinup_time: f64,
    /// Observed state components (0-based).
    pub obs_components: Vec<usize>,
    /// Observe every `obs_stride`-th step, starting at step 0.
    pub obs_stride: usize,
    /// Observation-error standard deviation per component.
    pub sigma_o: f64,
    /// Deterministic steps averaged for the climatology.
    pub climatology_steps: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Fraction of steps carrying observations, used in the table
    /// normalization of `J_o` (`J_o / (f N d)`).
    #[serde(default = "default_time_fraction")]
    pub obs_time_fraction: f64,
    pub method: IndexMap<String, MethodSpec>,
}

/// Named configurations for each reproduced result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Table1,
    Table2,
    Table3,
    LongRun,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Preset::Table1),
            "table2" => Ok(Preset::Table2),
            "table3" => Ok(Preset::Table3),
            "longrun" => Ok(Preset::LongRun),
            other => Err(Error::Config(format!(
                "unknown preset '{other}', expected table1, table2, table3 or longrun"
            ))),
        }
    }
}

impl ExperimentConfig {
    /// Stochastic double well, fully observed every step.
    pub fn table1() -> Self {
        let mut method = IndexMap::new();
        method.insert("na-shadowing".to_string(), MethodSpec::shadow_fixed(1.0, 0.99));
        method.insert("shadowing".to_string(), MethodSpec::shadow_adaptive());
        method.insert("w4dvar".to_string(), MethodSpec::w4dvar(Init::Observations));
        Self {
            model: "dw".into(),
            n: 4000,
            sigma_m: 1.0,
            spinup_time: DEFAULT_SPINUP_TIME,
            obs_components: vec![0],
            obs_stride: 1,
            sigma_o: 0.4,
            climatology_steps: 10_000,
            replicates: 100,
            base_seed: 0,
            obs_time_fraction: 1.0,
            method,
        }
    }

    /// Stochastic Lorenz 63 with only the first component observed.
    pub fn table2() -> Self {
        let mut method = IndexMap::new();
        method.insert("na-shadowing-r0.9".to_string(), MethodSpec::shadow_fixed(1.0, 0.9));
        method.insert("na-shadowing-r0.99".to_string(), MethodSpec::shadow_fixed(1.0, 0.99));
        method.insert("shadowing".to_string(), MethodSpec::shadow_adaptive());
        method.insert("w4dvar".to_string(), MethodSpec::w4dvar(Init::Observations));
        Self {
            model: "l63".into(),
            n: 2000,
            sigma_m: 120f64.sqrt(),
            spinup_time: DEFAULT_SPINUP_TIME,
            obs_components: vec![0],
            obs_stride: 1,
            sigma_o: 0.05f64.sqrt(),
            climatology_steps: 20_000_000,
            replicates: 100,
            base_seed: 0,
            obs_time_fraction: 1.0,
            method,
        }
    }

    /// Stochastic Lorenz 96, three components observed every tenth step.
    ///
    /// The observation-error variance is `0.01` (`sigma_o = 0.1`).
    pub fn table3() -> Self {
        let mut method = IndexMap::new();
        method.insert("na-shadowing-r0.9".to_string(), MethodSpec::shadow_fixed(1.0, 0.9));
        method.insert("na-shadowing-r0.99".to_string(), MethodSpec::shadow_fixed(1.0, 0.99));
        method.insert("shadowing".to_string(), MethodSpec::shadow_adaptive());
        method.insert("w4dvar-bg".to_string(), MethodSpec::w4dvar(Init::Background));
        method.insert("w4dvar-obs".to_string(), MethodSpec::w4dvar(Init::Observations));
        Self {
            model: "l96".into(),
            n: 1000,
            sigma_m: 20f64.sqrt(),
            spinup_time: DEFAULT_SPINUP_TIME,
            obs_components: vec![0, 5, 10],
            obs_stride: 10,
            sigma_o: 0.1,
            climatology_steps: 2_000_000,
            replicates: 100,
            base_seed: 0,
            obs_time_fraction: 0.1,
            method,
        }
    }

    /// The sparse Lorenz 96 network over a long window, one replicate.
    pub fn longrun(n: usize) -> Self {
        let mut cfg = Self::table3();
        cfg.n = n;
        cfg.replicates = 1;
        cfg.method.clear();
        cfg.method.insert("shadowing".to_string(), MethodSpec::shadow_adaptive());
        cfg.method.insert("w4dvar".to_string(), MethodSpec::w4dvar(Init::Observations));
        cfg
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Table1 => Self::table1(),
            Preset::Table2 => Self::table2(),
            Preset::Table3 => Self::table3(),
            Preset::LongRun => Self::longrun(10_000),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let model = ModelSpec::from_name(&self.model, Some(self.sigma_m))?;
        let positive = [
            ("n", self.n as f64),
            ("sigma_m", self.sigma_m),
            ("sigma_o", self.sigma_o),
            ("obs_stride", self.obs_stride as f64),
            ("replicates", self.replicates as f64),
            ("obs_time_fraction", self.obs_time_fraction),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        if !(self.spinup_time >= 0.0) {
            return Err(Error::Config("spinup_time must be >= 0".into()));
        }
        if self.obs_components.is_empty()
            || self.obs_components.windows(2).any(|w| w[0] >= w[1])
            || self.obs_components.iter().any(|&c| c >= model.dim())
        {
            return Err(Error::Config(format!(
                "obs_components must be strictly increasing and below the state dimension {}",
                model.dim()
            )));
        }
        if self.method.is_empty() {
            return Err(Error::Config("at least one [method.<name>] section is required".into()));
        }
        for (name, spec) in &self.method {
            spec.validate()
                .map_err(|e| Error::Config(format!("method '{name}': {e}")))?;
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_name(&self.model, Some(self.sigma_m))
    }

    pub fn observation_covariance(&self) -> Result<SpdMatrix> {
        SpdMatrix::scaled_identity(self.obs_components.len(), self.sigma_o * self.sigma_o)
    }
}

/// Inputs shared across replicates: the model and its climatology.
#[derive(Clone, Debug)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub model: ModelSpec,
    pub climatology: Climatology,
    pub obs_covariance: SpdMatrix,
}

impl Setup {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = config.model_spec()?;
        let climatology = climatology(&model, config.climatology_steps)?;
        Self::with_climatology(config, climatology)
    }

    /// Reuses a precomputed climatology (it only depends on the model).
    pub fn with_climatology(config: ExperimentConfig, climatology: Climatology) -> Result<Self> {
        config.validate()?;
        let model = config.model_spec()?;
        if climatology.mean.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                actual: climatology.mean.len(),
                context: "climatology for experiment model",
            });
        }
        let obs_covariance = config.observation_covariance()?;
        Ok(Self {
            config,
            model,
            climatology,
            obs_covariance,
        })
    }

    /// Truth and observations for one seed: spin-up and truth first, then
    /// the observation noise, all from one ChaCha8 stream.
    pub fn draw(&self, seed: u64) -> Result<(Trajectory, ObservationSet)> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = self.model.generate_truth(&mut rng, cfg.spinup_time, cfg.n)?;
        let steps = strided_steps(cfg.n, cfg.obs_stride);
        let obs = observe(&truth, &cfg.obs_components, &steps, &self.obs_covariance, &mut rng)?;
        Ok((truth, obs))
    }
}

/// SHA-256 over the little-endian bytes of the truth and observation values.
pub fn input_hash(truth: &Trajectory, obs: &ObservationSet) -> String {
    let mut h = Sha256::new();
    for v in truth.as_slice().iter().chain(obs.values()) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Outcome of one method on one replicate.
#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub method: String,
    /// Hash of the inputs the method saw.
    pub input_hash: String,
    pub result: std::result::Result<AssimilationResult, String>,
}

#[derive(Clone, Debug)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub input_hash: String,
    pub truth: Trajectory,
    pub observations: ObservationSet,
    pub outcomes: Vec<MethodOutcome>,
}

/// Runs every configured method on one truth/observation realization.
///
/// A failing method is recorded in its outcome and does not stop the others.
pub fn run_replicate(setup: &Setup, replicate: usize, seed: u64) -> Result<ReplicateResult> {
    let (truth, obs) = setup.draw(seed)?;
    let completed = complete(&obs, &setup.climatology)?;
    let hash = input_hash(&truth, &obs);
    let outcomes = setup
        .config
        .method
        .iter()
        .map(|(name, spec)| {
            let result = spec.run(&setup.model, &completed, &obs).map_err(|e| e.to_string());
            if let Err(e) = &result {
                log::warn!("replicate {replicate} seed {seed}: method {name} failed: {e}");
            }
            MethodOutcome {
                method: name.clone(),
                input_hash: input_hash(&truth, &obs),
                result,
            }
        })
        .collect();
    Ok(ReplicateResult {
        replicate,
        seed,
        input_hash: hash,
        truth,
        observations: obs,
        outcomes,
    })
}

fn deterministic_requested() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1")
}

/// Runs replicates `base_seed .. base_seed + replicates` on up to `jobs`
/// threads (`0` lets rayon decide). Output is in seed order.
pub fn run_replicates(setup: &Setup, jobs: usize) -> Result<Vec<ReplicateResult>> {
    let base = setup.config.base_seed;
    let count = setup.config.replicates;
    let one = |i: usize| run_replicate(setup, i, base + i as u64);
    if deterministic_requested() || jobs == 1 {
        return (0..count).map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(one).collect())
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Sorts before summing so the result is independent of input order.
    /// The standard deviation uses `n - 1` and is zero for one sample.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut sq: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
        sq.sort_by(f64::total_cmp);
        let std = if v.len() > 1 { (sq.iter().sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Self { mean, std }
    }
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Problem sizes entering the cost normalizations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    /// Raw observation count `M`.
    pub count: usize,
    pub obs_time_fraction: f64,
}

impl Normalization {
    pub fn for_config(cfg: &ExperimentConfig, state_dim: usize) -> Self {
        let d = cfg.obs_components.len();
        Self {
            n: cfg.n,
            d,
            m: state_dim,
            count: strided_steps(cfg.n, cfg.obs_stride).len() * d,
            obs_time_fraction: cfg.obs_time_fraction,
        }
    }

    pub fn jo_per_count(&self, j_o: f64) -> f64 {
        j_o / self.count as f64
    }

    /// `J_o / (f N d)`, the table column.
    pub fn jo_table(&self, j_o: f64) -> f64 {
        j_o / (self.obs_time_fraction * (self.n * self.d) as f64)
    }

    pub fn jm_per_nm(&self, j_m: f64) -> f64 {
        j_m / (self.n * self.m) as f64
    }

    /// `2 (J_o + J_m) / (N (f d + m))`.
    pub fn combined(&self, j_o: f64, j_m: f64) -> f64 {
        2.0 * (j_o + j_m) / (self.n as f64 * (self.obs_time_fraction * self.d as f64 + self.m as f64))
    }
}

/// One row of the per-replicate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    pub method: String,
    pub input_hash: String,
    pub iterations: Option<usize>,
    pub j_o: Option<f64>,
    pub j_m: Option<f64>,
    pub termination: Option<Termination>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub succeeded: usize,
    pub failed: usize,
    pub iterations: Stat,
    pub jo_per_count: Stat,
    pub jo_table: Stat,
    pub jm_per_nm: Stat,
    pub combined: Stat,
    /// Termination reasons with their counts, in first-seen order.
    pub terminations: IndexMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub normalization: Normalization,
    pub replicates: usize,
    pub methods: Vec<MethodSummary>,
}

impl EnsembleSummary {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

pub fn replicate_rows(results: &[ReplicateResult]) -> Vec<ReplicateRow> {
    results
        .iter()
        .flat_map(|rep| {
            rep.outcomes.iter().map(move |o| {
                let ok = o.result.as_ref().ok();
                ReplicateRow {
                    replicate: rep.replicate,
                    seed: rep.seed,
                    method: o.method.clone(),
                    input_hash: o.input_hash.clone(),
                    iterations: ok.map(|r| r.iterations),
                    j_o: ok.map(|r| r.j_o),
                    j_m: ok.map(|r| r.j_m),
                    termination: ok.map(|r| r.termination),
                    error: o.result.as_ref().err().cloned(),
                }
            })
        })
        .collect()
}

/// Aggregates per-method statistics over successful runs.
pub fn summarize(cfg: &ExperimentConfig, state_dim: usize, rows: &[ReplicateRow]) -> EnsembleSummary {
    let norm = Normalization::for_config(cfg, state_dim);
    let methods = cfg
        .method
        .keys()
        .map(|name| {
            let mine: Vec<&ReplicateRow> = rows.iter().filter(|r| &r.method == name).collect();
            let ok: Vec<(usize, f64, f64)> = mine
                .iter()
                .filter_map(|r| Some((r.iterations?, r.j_o?, r.j_m?)))
                .collect();
            let col = |f: &dyn Fn(&(usize, f64, f64)) -> f64| Stat::of(&ok.iter().map(f).collect::<Vec<_>>());
            let mut terminations = IndexMap::new();
            for r in &mine {
                let key = r.termination.map_or_else(|| "error".to_string(), |t| t.to_string());
                *terminations.entry(key).or_insert(0) += 1;
            }
            MethodSummary {
                method: name.clone(),
                succeeded: ok.len(),
                failed: mine.len() - ok.len(),
                iterations: col(&|r| r.0 as f64),
                jo_per_count: col(&|r| norm.jo_per_count(r.1)),
                jo_table: col(&|r| norm.jo_table(r.1)),
                jm_per_nm: col(&|r| norm.jm_per_nm(r.2)),
                combined: col(&|r| norm.combined(r.1, r.2)),
                terminations,
            }
        })
        .collect();
    EnsembleSummary {
        normalization: norm,
        replicates: cfg.replicates,
        methods,
    }
}

/// Full ensemble: replicate results, per-replicate rows, and the summary.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub setup: Setup,
    pub results: Vec<ReplicateResult>,
    pub rows: Vec<ReplicateRow>,
    pub summary: EnsembleSummary,
}

impl Ensemble {
    /// Pooled normalized mismatches of one method over all replicates.
    pub fn pooled(&self, method: &str) -> (Vec<f64>, Vec<f64>) {
        let mut data = Vec::new();
        let mut model = Vec::new();
        for rep in &self.results {
            for o in rep.outcomes.iter().filter(|o| o.method == method) {
                if let Ok(r) = &o.result {
                    data.extend_from_slice(&r.data_mismatch);
                    model.extend_from_slice(&r.model_mismatch);
                }
            }
        }
        (data, model)
    }
}

pub fn run_ensemble(setup: Setup, jobs: usize) -> Result<Ensemble> {
    let results = run_replicates(&setup, jobs)?;
    let rows = replicate_rows(&results);
    let summary = summarize(&setup.config, setup.model.dim(), &rows);
    Ok(Ensemble {
        setup,
        results,
        rows,
        summary,
    })
}

/// Fixed-width histogram with sample moments of all samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    /// Samples outside `[lo, hi)`.
    pub below: u64,
    pub above: u64,
    pub total: u64,
    pub mean: f64,
    pub variance: f64,
    pub skew: f64,
}

pub const DEFAULT_BINS: usize = 61;
pub const DEFAULT_RANGE: (f64, f64) = (-6.0, 6.0);

/// Sorted-sum sample mean, (n-1) variance, and moment skewness.
pub fn moments(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let sorted_sum = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>()
    };
    let mean = sorted_sum(samples.to_vec()) / n;
    let m2 = sorted_sum(samples.iter().map(|x| (x - mean).powi(2)).collect());
    let m3 = sorted_sum(samples.iter().map(|x| (x - mean).powi(3)).collect());
    let variance = if samples.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
    let pop = m2 / n;
    let skew = if pop > 0.0 { (m3 / n) / pop.powf(1.5) } else { 0.0 };
    (mean, variance, skew)
}

impl Histogram {
    pub fn new(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::InvalidInput(format!("histogram needs bins > 0 and hi > lo, got {bins} bins on [{lo}, {hi}]")));
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        let (mut below, mut above) = (0, 0);
        for &x in samples {
            if x < lo {
                below += 1;
            } else if x >= hi {
                above += 1;
            } else {
                let k = (((x - lo) / width) as usize).min(bins - 1);
                counts[k] += 1;
            }
        }
        let (mean, variance, skew) = moments(samples);
        Ok(Self {
            lo,
            hi,
            counts,
            below,
            above,
            total: samples.len() as u64,
            mean,
            variance,
            skew,
        })
    }

    pub fn standard(samples: &[f64]) -> Self {
        Self::new(samples, DEFAULT_BINS, DEFAULT_RANGE.0, DEFAULT_RANGE.1).expect("default bins are valid")
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// Rows `(bin_left, bin_right, count, density)`; densities integrate to
    /// the in-range fraction of samples.
    pub fn rows(&self) -> Vec<(f64, f64, u64, f64)> {
        let w = self.bin_width();
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let left = self.lo + k as f64 * w;
                (left, left + w, c, c as f64 / (self.total.max(1) as f64 * w))
            })
            .collect()
    }
}

/// Histograms of the normalized data and model mismatches of one result.
pub fn mismatch_histograms(result: &AssimilationResult) -> (Histogram, Histogram) {
    (Histogram::standard(&result.data_mismatch), Histogram::standard(&result.model_mismatch))
}

/// Long-run comparison over the unobserved components.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnobservedReport {
    pub n: usize,
    /// `||X - u||^2 / (N (m - d))` over unobserved components, per method.
    pub distances: IndexMap<String, f64>,
    /// The same distance for the climatological-mean trajectory.
    pub baseline_distance: f64,
    /// Mean and standard deviation of the pooled unobserved analysis values.
    pub unobserved: IndexMap<String, Stat>,
    pub initial_guess_mean: f64,
    pub iterations: IndexMap<String, usize>,
    #[serde(skip)]
    pub histograms: IndexMap<String, Histogram>,
}

fn unobserved_values(u: &Trajectory, unobserved: &[usize]) -> Vec<f64> {
    (0..u.len())
        .flat_map(|n| unobserved.iter().map(move |&c| u.state_slice(n)[c]))
        .collect()
}

fn unobserved_distance(truth: &Trajectory, u: &Trajectory, unobserved: &[usize]) -> f64 {
    let x = unobserved_values(truth, unobserved);
    let y = unobserved_values(u, unobserved);
    let mut sq: Vec<f64> = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    sq.iter().sum::<f64>() / (truth.horizon() * unobserved.len()) as f64
}

/// Runs every method once over the configured (long) window and compares
/// the unobserved components against the truth and the climatological mean.
///
/// Histograms of the unobserved values span `[lo, hi)` with `bins` bins.
pub fn long_run_unobserved(setup: &Setup, seed: u64, bins: usize, lo: f64, hi: f64) -> Result<UnobservedReport> {
    let m = setup.model.dim();
    let unobserved: Vec<usize> = (0..m).filter(|c| !setup.config.obs_components.contains(c)).collect();
    if unobserved.is_empty() {
        return Err(Error::InvalidInput(
            "every component is observed, so the unobserved distance is undefined".into(),
        ));
    }
    let rep = run_replicate(setup, 0, seed)?;
    let baseline = Trajectory::constant(&setup.climatology.mean, setup.config.n)?;
    let mut report = UnobservedReport {
        n: setup.config.n,
        distances: IndexMap::new(),
        baseline_distance: unobserved_distance(&rep.truth, &baseline, &unobserved),
        unobserved: IndexMap::new(),
        initial_guess_mean: unobserved.iter().map(|&c| setup.climatology.mean[c]).sum::<f64>() / unobserved.len() as f64,
        iterations: IndexMap::new(),
        histograms: IndexMap::new(),
    };
    let init = unobserved_values(&baseline, &unobserved);
    report.histograms.insert("initial-guess".into(), Histogram::new(&init, bins, lo, hi)?);
    for o in &rep.outcomes {
        let r = o.result.as_ref().map_err(|e| Error::InvalidInput(format!("method {} failed: {e}", o.method)))?;
        let values = unobserved_values(&r.analysis, &unobserved);
        report.distances.insert(o.method.clone(), unobserved_distance(&rep.truth, &r.analysis, &unobserved));
        report.unobserved.insert(o.method.clone(), Stat::of(&values));
        report.iterations.insert(o.method.clone(), r.iterations);
        report.histograms.insert(o.method.clone(), Histogram::new(&values, bins, lo, hi)?);
    }
    Ok(report)
}

/// Formats with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_summary_csv<W: Write>(summary: &EnsembleSummary, mut w: W) -> Result<()> {
    writeln!(
        w,
        "method,succeeded,failed,iterations_mean,iterations_std,jo_per_count_mean,jo_per_count_std,jo_table_mean,jo_table_std,jm_per_nm_mean,jm_per_nm_std,combined_mean,combined_std"
    )?;
    for s in &summary.methods {
        let stats = [s.iterations, s.jo_per_count, s.jo_table, s.jm_per_nm, s.combined];
        let cols: Vec<String> = stats.iter().flat_map(|st| [fmt_f64(st.mean), fmt_f64(st.std)]).collect();
        writeln!(w, "{},{},{},{}", s.method, s.succeeded, s.failed, cols.join(","))?;
    }
    Ok(())
}

pub fn write_rows_csv<W: Write>(rows: &[ReplicateRow], mut w: W) -> Result<()> {
    writeln!(w, "replicate,seed,method,input_hash,iterations,j_o,j_m,termination,error")?;
    for r in rows {
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.replicate,
            r.seed,
            r.method,
            r.input_hash,
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            opt(r.j_o),
            opt(r.j_m),
            r.termination.map(|t| t.to_string()).unwrap_or_default(),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        )?;
    }
    Ok(())
}

pub fn write_histogram_csv<W: Write>(h: &Histogram, mut w: W) -> Result<()> {
    writeln!(w, "bin_left,bin_right,count,density")?;
    for (l, r, c, d) in h.rows() {
        writeln!(w, "{},{},{},{}", fmt_f64(l), fmt_f64(r), c, fmt_f64(d))?;
    }
    Ok(())
}

pub fn write_trace_jsonl<W: Write>(result: &AssimilationResult, mut w: W) -> Result<()> {
    for rec in &result.trace {
        writeln!(w, "{}", serde_json::to_string(rec)?)?;
    }
    Ok(())
}

pub fn write_trajectory_csv<W: Write>(u: &Trajectory, mut w: W) -> Result<()> {
    let header: Vec<String> = (0..u.dim()).map(|i| format!("x{i}")).collect();
    writeln!(w, "step,{}", header.join(","))?;
    for n in 0..u.len() {
        let vals: Vec<String> = u.state_slice(n).iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{n},{}", vals.join(","))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `summary.csv`, `replicates.csv`, pooled
/// `histogram_<method>_{data,model}.csv`, and
/// `trace_<method>_<replicate>.jsonl` into `dir`.
pub fn write_ensemble(ens: &Ensemble, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_summary_csv(&ens.summary, create(&dir.join("summary.csv"))?)?;
    write_rows_csv(&ens.rows, create(&dir.join("replicates.csv"))?)?;
    for name in ens.setup.config.method.keys() {
        let (data, model) = ens.pooled(name);
        write_histogram_csv(&Histogram::standard(&data), create(&dir.join(format!("histogram_{name}_data.csv")))?)?;
        write_histogram_csv(&Histogram::standard(&model), create(&dir.join(format!("histogram_{name}_model.csv")))?)?;
    }
    for rep in &ens.results {
        for o in &rep.outcomes {
            if let Ok(r) = &o.result {
                let path = dir.join(format!("trace_{}_{}.jsonl", o.method, rep.replicate));
                write_trace_jsonl(r, create(&path)?)?;
            }
        }
    }
    Ok(())
}
