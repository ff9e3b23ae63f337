//! Round trip of experiment inputs: the TOML experiment file, the
//! observation CSV, and a rerun of the assimilation from the files alone.
//!
//! ```text
//! cargo run --release --example observation_io -- [dir]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter};

use weakshadow::harness::{ExperimentConfig, Setup};
use weakshadow::{complete, weak_shadow, ObservationSet, ShadowingConfig};

fn main() -> weakshadow::Result<()> {
    let dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let mut cfg = ExperimentConfig::table3();
    cfg.n = 300;
    cfg.replicates = 1;
    let cfg_path = dir.join("experiment.toml");
    std::fs::write(&cfg_path, cfg.to_toml()?)?;
    println!("experiment file {}:\n{}", cfg_path.display(), cfg.to_toml()?);

    let setup = Setup::new(cfg)?;
    let (_, obs) = setup.draw(setup.config.base_seed)?;
    let obs_path = dir.join("observations.csv");
    obs.write_csv(BufWriter::new(File::create(&obs_path)?))?;

    // everything below uses only the two files
    let cfg = ExperimentConfig::from_toml(&std::fs::read_to_string(&cfg_path)?)?;
    let setup = Setup::new(cfg)?;
    let loaded = ObservationSet::read_csv(
        BufReader::new(File::open(&obs_path)?),
        setup.model.dim(),
        setup.config.n,
        setup.config.observation_covariance()?,
    )?;
    assert_eq!(loaded, obs, "CSV round trip is exact");
    let a = weak_shadow(&setup.model, &complete(&obs, &setup.climatology)?, &obs, &ShadowingConfig::default())?;
    let b = weak_shadow(&setup.model, &complete(&loaded, &setup.climatology)?, &loaded, &ShadowingConfig::default())?;
    assert_eq!(a.analysis, b.analysis);
    println!("{} observations reloaded from {}; identical analysis after {} iterations", loaded.count(), obs_path.display(), b.iterations);
    Ok(())
}
