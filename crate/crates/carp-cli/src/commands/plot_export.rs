//! Plot data export: SAS score histograms and SAS-vs-covariate scatter
//! files in gnuplot-friendly CSV.

use anyhow::bail;
use std::collections::BTreeMap;

use carp::causalgen::ResponseMeta;
use carp::eval::{correlation_report, distribution_report};
use carp::io::{read_jsonl, write_text, SasRecord};

use crate::config::PlotExportConfig;

pub fn run(config: &PlotExportConfig) -> anyhow::Result<()> {
    let scores: Vec<SasRecord> = read_jsonl(&config.scores)?;
    if scores.is_empty() {
        bail!("no scores in {}", config.scores.display());
    }
    let values: Vec<f64> = scores.iter().map(|r| r.sas).collect();
    let hist = distribution_report(&values, config.bins)?;
    write_text(&config.hist_out, &hist.to_csv())?;

    if let Some(covariate_path) = &config.covariate {
        let sidecar: Vec<ResponseMeta> = read_jsonl(covariate_path)?;
        let by_key: BTreeMap<(usize, usize), f64> = sidecar
            .iter()
            .map(|m| ((m.prompt_id, m.response_index), m.z_norm))
            .collect();
        let mut sas_joined = Vec::new();
        let mut covariate = Vec::new();
        for record in &scores {
            if let Some(&z) = by_key.get(&(record.prompt_id, record.response_index)) {
                sas_joined.push(record.sas);
                covariate.push(z);
            }
        }
        if sas_joined.len() < 3 {
            bail!("fewer than 3 joined rows between scores and covariate sidecar");
        }
        let report = correlation_report(&sas_joined, &covariate, "z_norm")?;
        if let Some(scatter_path) = &config.scatter_out {
            write_text(scatter_path, &report.scatter_csv(&sas_joined, &covariate))?;
        }
        if let Some(stats_path) = &config.stats_out {
            write_text(stats_path, &serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}
