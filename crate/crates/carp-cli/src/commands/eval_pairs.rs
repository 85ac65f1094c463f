//! Pairwise selection accuracy over a JSONL of scored comparisons.

use carp::eval::{selection_accuracy, EvalPair};
use carp::io::{read_jsonl, write_text};

use crate::config::EvalPairsConfig;

pub fn run(config: &EvalPairsConfig) -> anyhow::Result<()> {
    let pairs: Vec<EvalPair> = read_jsonl(&config.pairs)?;
    let report = selection_accuracy(&pairs, config.rule)?;
    write_text(&config.out, &serde_json::to_string_pretty(&report)?)?;
    if let Some(csv_path) = &config.csv_out {
        let mut csv = String::from("domain,correct,total,accuracy\n");
        for (domain, (correct, total)) in &report.per_domain {
            let name = if domain.is_empty() { "(untagged)" } else { domain };
            csv.push_str(&format!(
                "{name},{correct},{total},{}\n",
                *correct as f64 / *total as f64
            ));
        }
        csv.push_str(&format!(
            "overall,{},{},{}\n",
            report.correct, report.total, report.accuracy
        ));
        write_text(csv_path, &csv)?;
    }
    Ok(())
}
