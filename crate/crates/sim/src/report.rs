//! Report files: JSON summary plus flat CSVs for external plotting.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use pdwols::Result;

use crate::experiment::{true_blip, MetricsReport};

fn num(v: f64) -> String {
    format!("{v}")
}

/// Write `report.json`, `replicates.csv`, `selection.csv` and
/// `blip_estimates.csv` into `dir`; returns the paths written.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let json = dir.join("report.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&json)?), report)?;

    let reps = dir.join("replicates.csv");
    let mut w = csv::Writer::from_path(&reps)?;
    w.write_record(["rep", "seed", "method", "stage", "lambda", "n_selected", "error_rate", "total_error_rate", "value", "error"])?;
    for r in &report.replicates {
        for run in &r.runs {
            match &run.outcome {
                Some(o) => {
                    for (k, s) in o.stages.iter().enumerate() {
                        w.write_record([
                            r.rep.to_string(),
                            r.seed.to_string(),
                            run.method.clone(),
                            (k + 1).to_string(),
                            num(s.lambda),
                            s.selected.iter().filter(|&&b| b).count().to_string(),
                            num(s.error_rate),
                            num(o.total_error_rate),
                            num(o.value),
                            String::new(),
                        ])?;
                    }
                }
                None => w.write_record([
                    r.rep.to_string(),
                    r.seed.to_string(),
                    run.method.clone(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    run.error.clone().unwrap_or_default(),
                ])?,
            }
        }
    }
    w.flush()?;

    let sel = dir.join("selection.csv");
    let mut w = csv::Writer::from_path(&sel)?;
    w.write_record(["method", "stage", "term", "selection_rate"])?;
    for m in &report.methods {
        for (k, s) in m.stages.iter().enumerate() {
            for (t, &rate) in s.terms.iter().zip(&s.selection_rate) {
                w.write_record([m.method.as_str(), &(k + 1).to_string(), t, &num(rate)])?;
            }
        }
    }
    w.flush()?;

    let blip = dir.join("blip_estimates.csv");
    let mut w = csv::Writer::from_path(&blip)?;
    w.write_record(["rep", "method", "stage", "term", "estimate", "truth"])?;
    let g = report.config.generator;
    for r in &report.replicates {
        for run in &r.runs {
            let Some(o) = &run.outcome else { continue };
            for (k, s) in o.stages.iter().enumerate() {
                let stage = (k + 1).to_string();
                let rep = r.rep.to_string();
                w.write_record([rep.as_str(), &run.method, &stage, "A", &num(s.psi0), &num(true_blip(g, k, "A"))])?;
                for (t, &v) in s.terms.iter().zip(&s.psi) {
                    w.write_record([rep.as_str(), &run.method, &stage, t, &num(v), &num(true_blip(g, k, t))])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(vec![json, reps, sel, blip])
}
