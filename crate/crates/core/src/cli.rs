//! Command-line front end: `truth`, `assimilate`, `ensemble`, `reproduce`.
//!
//! Every command resolves an [`ExperimentConfig`] (a TOML file or the preset
//! for `--model`, then flag overrides), writes `manifest.json` and the
//! resolved `config.toml` into `--out` before computing, and exits with 0 on
//! success, 2 on configuration errors and 3 on solver errors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    long_run_unobserved, mismatch_histograms, run_ensemble, write_ensemble, write_histogram_csv,
    write_trace_jsonl, write_trajectory_csv, Ensemble, ExperimentConfig, Histogram, MethodSpec, Preset, Setup,
};
use crate::obs::{complete, ObservationSet};
use crate::shadowing::AssimilationResult;
use crate::w4dvar::Init;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "assimilate", version, about = "Weak-constraint shadowing twin experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a truth trajectory and its observations.
    Truth(Common),
    /// Run one method on generated or provided observations.
    Assimilate(AssimilateArgs),
    /// Run every configured method over the replicate ensemble.
    Ensemble(Common),
    /// Run a preset experiment and print it next to the reference values.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment file (flat TOML with `[method.<name>]` tables).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model preset when no config is given: dw, l63 or l96.
    #[arg(long)]
    pub model: Option<String>,
    /// Number of transitions N.
    #[arg(long)]
    pub n: Option<usize>,
    /// Base seed; replicate i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Worker threads for replicates (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub tuning: Tuning,
}

/// Method overrides applied to every configured method they fit.
#[derive(Debug, Clone, Default, Args)]
pub struct Tuning {
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    /// Fixed regularization; turns adaptive shadowing into fixed-alpha.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub init: Option<Init>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AssimilateArgs {
    #[command(flatten)]
    pub common: Common,
    /// `newton`, `shadow`, `w4dvar`, or the name of a configured method.
    #[arg(long, default_value = "shadow")]
    pub method: String,
    /// Observations CSV (`step,component,value`) instead of generated data.
    #[arg(long)]
    pub obs: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Table1,
    Table2,
    Table3,
    Figures,
    Longrun,
}

#[derive(Debug, Clone, Args)]
pub struct ReproduceArgs {
    pub target: Target,
    #[command(flatten)]
    pub common: Common,
}

impl clap::builder::ValueParserFactory for Init {
    type Parser = clap::builder::ValueParser;

    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Init>().map_err(|e| e.to_string()))
    }
}

/// Everything needed to reproduce an output directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config: ExperimentConfig,
    pub base_seed: u64,
    pub version: String,
    pub out_dir: PathBuf,
    /// Start time, seconds since the Unix epoch.
    pub started_at: f64,
}

impl RunManifest {
    pub fn new(command: &str, common: &Common, config: &ExperimentConfig) -> Self {
        let started_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        Self {
            command: command.to_string(),
            config_path: common.config.clone(),
            config: config.clone(),
            base_seed: config.base_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            out_dir: common.out.clone(),
            started_at,
        }
    }

    /// Writes `manifest.json` and the resolved `config.toml`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join("config.toml"), self.config.to_toml()?)?;
        Ok(())
    }
}

fn preset_for_model(name: &str) -> Result<ExperimentConfig> {
    match name {
        "dw" => Ok(ExperimentConfig::table1()),
        "l63" => Ok(ExperimentConfig::table2()),
        "l96" => Ok(ExperimentConfig::table3()),
        other => Err(Error::UnknownModel {
            name: other.to_string(),
            registered: crate::models::MODEL_NAMES.join(", "),
        }),
    }
}

fn apply_tuning(spec: &mut MethodSpec, t: &Tuning) {
    match spec {
        MethodSpec::Newton { max_iterations } => {
            if let Some(k) = t.max_iter {
                *max_iterations = k;
            }
        }
        MethodSpec::ShadowAdaptive { rho, r, step_norm, max_iterations } => {
            if let Some(a) = t.alpha {
                *spec = MethodSpec::ShadowFixed {
                    alpha: a,
                    r: t.r.unwrap_or(*r),
                    step_norm: *step_norm,
                    max_iterations: t.max_iter.unwrap_or(*max_iterations),
                };
                return;
            }
            *rho = t.rho.unwrap_or(*rho);
            *r = t.r.unwrap_or(*r);
            *max_iterations = t.max_iter.unwrap_or(*max_iterations);
        }
        MethodSpec::ShadowFixed { alpha, r, max_iterations, .. } => {
            *alpha = t.alpha.unwrap_or(*alpha);
            *r = t.r.unwrap_or(*r);
            *max_iterations = t.max_iter.unwrap_or(*max_iterations);
        }
        MethodSpec::W4dvar { init, max_iterations, .. } => {
            *init = t.init.unwrap_or(*init);
            *max_iterations = t.max_iter.unwrap_or(*max_iterations);
        }
    }
}

/// Config file or model preset, then flag overrides, then validation.
pub fn resolve_config(common: &Common, base: Option<ExperimentConfig>) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, base) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?
        }
        (None, Some(cfg)) => cfg,
        (None, None) => preset_for_model(common.model.as_deref().unwrap_or("dw"))?,
    };
    if let (Some(model), Some(_)) = (&common.model, &common.config) {
        if model != &cfg.model {
            return Err(Error::Config(format!(
                "--model {model} conflicts with model '{}' in the config file",
                cfg.model
            )));
        }
    }
    if let Some(n) = common.n {
        cfg.n = n;
    }
    if let Some(seed) = common.seed {
        cfg.base_seed = seed;
    }
    if let Some(k) = common.replicates {
        cfg.replicates = k;
    }
    for spec in cfg.method.values_mut() {
        apply_tuning(spec, &common.tuning);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_truth(common: &Common) -> Result<()> {
    let cfg = resolve_config(common, None)?;
    RunManifest::new("truth", common, &cfg).write(&common.out)?;
    let setup = Setup::new(cfg)?;
    let (truth, obs) = setup.draw(setup.config.base_seed)?;
    write_trajectory_csv(&truth, create(&common.out.join("truth.csv"))?)?;
    obs.write_csv(create(&common.out.join("observations.csv"))?)?;
    println!(
        "wrote {} states and {} observations to {}",
        truth.len(),
        obs.count(),
        common.out.display()
    );
    Ok(())
}

/// Picks a configured method by name, or builds one from a kind keyword.
fn select_method(cfg: &ExperimentConfig, name: &str, tuning: &Tuning) -> Result<MethodSpec> {
    let mut spec = match (cfg.method.get(name), name) {
        (Some(spec), _) => spec.clone(),
        (None, "newton") => MethodSpec::newton(),
        (None, "shadow") => MethodSpec::shadow_adaptive(),
        (None, "w4dvar") => MethodSpec::w4dvar(Init::Observations),
        (None, other) => {
            let known: Vec<&str> = cfg.method.keys().map(String::as_str).collect();
            return Err(Error::Config(format!(
                "unknown method '{other}'; use newton, shadow, w4dvar or one of: {}",
                known.join(", ")
            )));
        }
    };
    apply_tuning(&mut spec, tuning);
    spec.validate()?;
    Ok(spec)
}

fn write_result(result: &AssimilationResult, method: &str, dir: &Path) -> Result<()> {
    write_trajectory_csv(&result.analysis, create(&dir.join("analysis.csv"))?)?;
    write_trace_jsonl(result, create(&dir.join(format!("trace_{method}_0.jsonl")))?)?;
    let (data, model) = mismatch_histograms(result);
    write_histogram_csv(&data, create(&dir.join(format!("histogram_{method}_data.csv")))?)?;
    write_histogram_csv(&model, create(&dir.join(format!("histogram_{method}_model.csv")))?)?;
    let summary = serde_json::json!({
        "method": method,
        "iterations": result.iterations,
        "termination": result.termination,
        "j_o": result.j_o,
        "j_m": result.j_m,
        "alpha_history": result.alpha_history,
        "data_mismatch_variance": data.variance,
        "model_mismatch_variance": model.variance,
    });
    std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn cmd_assimilate(args: &AssimilateArgs) -> Result<()> {
    let common = &args.common;
    let mut cfg = resolve_config(common, None)?;
    let spec = select_method(&cfg, &args.method, &common.tuning)?;
    cfg.method.clear();
    cfg.method.insert(args.method.clone(), spec.clone());
    cfg.replicates = 1;
    RunManifest::new("assimilate", common, &cfg).write(&common.out)?;

    let setup = Setup::new(cfg)?;
    let obs = match &args.obs {
        Some(path) => {
            let file = File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            ObservationSet::read_csv(
                BufReader::new(file),
                setup.model.dim(),
                setup.config.n,
                setup.obs_covariance.clone(),
            )?
        }
        None => setup.draw(setup.config.base_seed)?.1,
    };
    let completed = complete(&obs, &setup.climatology)?;
    let result = spec.run(&setup.model, &completed, &obs)?;
    write_result(&result, &args.method, &common.out)?;
    let count = obs.count() as f64;
    let nm = (setup.config.n * setup.model.dim()) as f64;
    println!(
        "{}: {} iterations, termination {}, J_o/M {:.4}, J_m/Nm {:.4}",
        args.method,
        result.iterations,
        result.termination,
        result.j_o / count,
        result.j_m / nm
    );
    Ok(())
}

fn print_summary(ens: &Ensemble, reference: &[ReferenceRow]) {
    println!(
        "{:<20} {:>16} {:>16} {:>16} {:>16}  failed",
        "method", "iterations", "J_o (table)", "J_m/Nm", "combined"
    );
    for s in &ens.summary.methods {
        println!(
            "{:<20} {:>16} {:>16} {:>16} {:>16}  {}",
            s.method,
            s.iterations.to_string(),
            s.jo_table.to_string(),
            s.jm_per_nm.to_string(),
            s.combined.to_string(),
            s.failed
        );
        if let Some(r) = reference.iter().find(|r| r.method == s.method) {
            let cell = |i: usize| format!("{} ± {}", r.mean[i], r.std[i]);
            println!(
                "{:<20} {:>16} {:>16} {:>16} {:>16}",
                "  reference",
                cell(0),
                cell(1),
                cell(2),
                cell(3)
            );
        }
    }
}

fn cmd_ensemble(common: &Common) -> Result<()> {
    let cfg = resolve_config(common, None)?;
    RunManifest::new("ensemble", common, &cfg).write(&common.out)?;
    let ens = run_ensemble(Setup::new(cfg)?, common.jobs)?;
    write_ensemble(&ens, &common.out)?;
    print_summary(&ens, &[]);
    Ok(())
}

/// Published mean and standard deviation of one table row.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceRow {
    pub method: &'static str,
    /// Iterations, J_o column, J_m/Nm, combined.
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

const fn row(method: &'static str, mean: [f64; 4], std: [f64; 4]) -> ReferenceRow {
    ReferenceRow { method, mean, std }
}

/// Reference values for the table presets (empty for the long run).
pub fn reference_rows(preset: Preset) -> Vec<ReferenceRow> {
    match preset {
        Preset::Table1 => vec![
            row("na-shadowing", [2.0, 0.516, 0.050, 0.565], [0.0, 0.008, 0.002, 0.009]),
            row("shadowing", [6.8, 0.492, 0.062, 0.554], [0.6, 0.001, 0.005, 0.005]),
            row("w4dvar", [4.3, 0.365, 0.133, 0.499], [0.5, 0.006, 0.003, 0.008]),
        ],
        Preset::Table2 => vec![
            row("na-shadowing-r0.9", [3.7, 0.54, 0.10, 0.41], [0.5, 0.08, 0.01, 0.02]),
            row("na-shadowing-r0.99", [4.0, 0.6, 0.09, 0.43], [0.0, 0.02, 0.003, 0.01]),
            row("shadowing", [6.2, 0.494, 0.101, 0.398], [0.6, 0.002, 0.005, 0.007]),
            row("w4dvar", [5.1, 0.064, 0.145, 0.249], [0.3, 0.002, 0.005, 0.008]),
        ],
        Preset::Table3 => vec![
            row("na-shadowing-r0.9", [3.2, 0.50, 0.03, 0.09], [0.5, 0.06, 0.01, 0.03]),
            row("na-shadowing-r0.99", [3.7, 0.59, 0.03, 0.08], [0.6, 0.06, 0.01, 0.02]),
            row("shadowing", [6.5, 0.498, 0.03, 0.08], [0.7, 0.002, 0.01, 0.02]),
            row("w4dvar-bg", [55.0, 0.017, 0.014, 0.028], [29.0, 0.002, 0.003, 0.005]),
            row("w4dvar-obs", [49.0, 0.017, 0.011, 0.023], [20.0, 0.002, 0.002, 0.003]),
        ],
        Preset::LongRun => Vec::new(),
    }
}

fn reproduce_table(preset: Preset, common: &Common, dir: &Path) -> Result<Ensemble> {
    let cfg = resolve_config(common, Some(ExperimentConfig::preset(preset)))?;
    RunManifest::new("reproduce", common, &cfg).write(dir)?;
    let ens = run_ensemble(Setup::new(cfg)?, common.jobs)?;
    write_ensemble(&ens, dir)?;
    Ok(ens)
}

fn print_moments(ens: &Ensemble) {
    println!("{:<20} {:>28} {:>28}", "method", "data mismatch mean/var/skew", "model mismatch mean/var/skew");
    for name in ens.setup.config.method.keys() {
        let (data, model) = ens.pooled(name);
        let (d, m) = (Histogram::standard(&data), Histogram::standard(&model));
        println!(
            "{:<20} {:>8.3} {:>8.3} {:>8.3}    {:>8.3} {:>8.3} {:>8.3}",
            name, d.mean, d.variance, d.skew, m.mean, m.variance, m.skew
        );
    }
}

fn cmd_reproduce(args: &ReproduceArgs) -> Result<()> {
    let common = &args.common;
    match args.target {
        Target::Table1 | Target::Table2 | Target::Table3 => {
            let preset = match args.target {
                Target::Table1 => Preset::Table1,
                Target::Table2 => Preset::Table2,
                _ => Preset::Table3,
            };
            let ens = reproduce_table(preset, common, &common.out)?;
            print_summary(&ens, &reference_rows(preset));
        }
        Target::Figures => {
            for (preset, sub) in [(Preset::Table1, "dw"), (Preset::Table2, "l63"), (Preset::Table3, "l96")] {
                let ens = reproduce_table(preset, common, &common.out.join(sub))?;
                println!("== {sub}");
                print_moments(&ens);
            }
        }
        Target::Longrun => {
            let n = common.n.unwrap_or(10_000);
            let cfg = resolve_config(common, Some(ExperimentConfig::longrun(n)))?;
            RunManifest::new("reproduce longrun", common, &cfg).write(&common.out)?;
            let setup = Setup::new(cfg)?;
            let report = long_run_unobserved(&setup, setup.config.base_seed, 81, -10.0, 17.0)?;
            for (name, h) in &report.histograms {
                write_histogram_csv(h, create(&common.out.join(format!("histogram_{name}_unobserved.csv")))?)?;
            }
            std::fs::write(common.out.join("longrun.json"), serde_json::to_string_pretty(&report)?)?;
            println!("N = {n}: unobserved distance (reference at N = 100000 in brackets)");
            println!("  {:<12} {:>8.3} [18.8]", "climatology", report.baseline_distance);
            let reference = [("shadowing", 16.5), ("w4dvar", 22.7)];
            for (name, d) in &report.distances {
                let r = reference.iter().find(|(k, _)| k == name).map_or(f64::NAN, |x| x.1);
                println!("  {name:<12} {d:>8.3} [{r}]");
            }
            for (name, s) in &report.unobserved {
                println!("  {name:<12} unobserved mean {:.3} std {:.3}", s.mean, s.std);
            }
        }
    }
    Ok(())
}

/// Maps an error to the documented exit code.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_solver_error() {
        EXIT_SOLVER
    } else {
        match e {
            Error::Config(_) | Error::UnknownModel { .. } | Error::Parse(_) | Error::InvalidInput(_) => EXIT_CONFIG,
            _ => 1,
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Truth(c) => cmd_truth(c),
        Command::Assimilate(a) => cmd_assimilate(a),
        Command::Ensemble(c) => cmd_ensemble(c),
        Command::Reproduce(r) => cmd_reproduce(r),
    }
}

/// Parses `args`, runs the command, and reports errors on stderr.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn common(out: &Path) -> Common {
        Common {
            config: None,
            model: Some("dw".into()),
            n: Some(200),
            seed: Some(3),
            replicates: Some(2),
            jobs: 1,
            out: out.to_path_buf(),
            tuning: Tuning::default(),
        }
    }

    #[test]
    fn flags_override_preset() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = common(dir.path());
        c.tuning.r = Some(0.9);
        c.tuning.init = Some(Init::Background);
        let cfg = resolve_config(&c, None).unwrap();
        assert_eq!(cfg.n, 200);
        assert_eq!(cfg.base_seed, 3);
        assert!(matches!(cfg.method["shadowing"], MethodSpec::ShadowAdaptive { r, .. } if r == 0.9));
        assert!(matches!(cfg.method["w4dvar"], MethodSpec::W4dvar { init: Init::Background, .. }));
    }

    #[test]
    fn alpha_flag_fixes_adaptive_methods() {
        let mut spec = MethodSpec::shadow_adaptive();
        apply_tuning(&mut spec, &Tuning { alpha: Some(2.0), ..Default::default() });
        assert!(matches!(spec, MethodSpec::ShadowFixed { alpha, .. } if alpha == 2.0));
    }

    #[test]
    fn config_errors_map_to_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = common(dir.path());
        c.model = Some("l42".into());
        let e = resolve_config(&c, None).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        assert!(e.to_string().contains("dw, l63, l96"));
        assert_eq!(exit_code(&Error::Diverged { iteration: 3 }), EXIT_SOLVER);
    }

    #[test]
    fn manifest_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = common(dir.path());
        let cfg = resolve_config(&c, None).unwrap();
        RunManifest::new("truth", &c, &cfg).write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let manifest: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest.config, cfg);
    }
}
