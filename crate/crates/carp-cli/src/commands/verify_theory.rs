//! Theory verification command: runs every check and emits JSON + CSV
//! reports. Any failing property makes the command exit nonzero.

use carp::io::write_text;
use carp::theory::{verify_all, TheoryScale};

use crate::config::VerifyTheoryConfig;

/// Returns the failing property names (empty when everything passed).
pub fn run(config: &VerifyTheoryConfig, threads: usize) -> anyhow::Result<Vec<&'static str>> {
    let scale = config.scale.clone().unwrap_or_else(TheoryScale::default);
    let report = verify_all(&scale, config.seed, threads)?;
    write_text(&config.out_json, &serde_json::to_string_pretty(&report)?)?;
    write_text(&config.out_csv, &report.to_csv())?;
    for line in report.to_csv().lines().skip(1) {
        println!("{line}");
    }
    Ok(report.failures())
}
