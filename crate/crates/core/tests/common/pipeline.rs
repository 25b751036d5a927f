//! End-to-end gen → train → eval runs.

use std::fs;
use std::path::Path;

use gaitkit::evaluation::evaluate;
use gaitkit::gaitdata::{generate_synthetic, Dataset, SynthConfig};
use gaitkit::training::{train, ExperimentConfig, FINAL_CHECKPOINT, METRICS_FILE};

pub struct Artifacts {
    pub index: Vec<u8>,
    pub checkpoint: Vec<u8>,
    pub metrics: Vec<u8>,
    pub report_json: Vec<u8>,
    pub report_table: Vec<u8>,
}

pub fn run(dir: &Path, synth: &SynthConfig, cfg: &ExperimentConfig) -> gaitkit::Result<Artifacts> {
    let data_dir = dir.join("data");
    let out = dir.join("run");
    generate_synthetic(synth, &data_dir)?;
    let data = Dataset::open(&data_dir)?;
    let state = train(cfg, &data, Some(&out), None)?;
    let report = evaluate(&state.model, &data, &cfg.eval)?;
    let read = |p: &Path| fs::read(p).expect("artefact exists");
    Ok(Artifacts {
        index: read(&data_dir.join("index.json")),
        checkpoint: read(&out.join(FINAL_CHECKPOINT)),
        metrics: read(&out.join(METRICS_FILE)),
        report_json: report.to_json().into_bytes(),
        report_table: report.to_table().into_bytes(),
    })
}

/// Runs the pipeline twice in separate directories and names every
/// artefact that differs.
pub fn compare_runs(root: &Path, synth: &SynthConfig, cfg: &ExperimentConfig) -> Result<(), String> {
    let a = run(&root.join("a"), synth, cfg).map_err(|e| e.to_string())?;
    let b = run(&root.join("b"), synth, cfg).map_err(|e| e.to_string())?;
    let mut diffs = Vec::new();
    for (name, x, y) in [
        ("index", &a.index, &b.index),
        ("checkpoint", &a.checkpoint, &b.checkpoint),
        ("metrics", &a.metrics, &b.metrics),
        ("report json", &a.report_json, &b.report_json),
        ("report table", &a.report_table, &b.report_table),
    ] {
        if x != y {
            diffs.push(name);
        }
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(format!("artefacts differ: {diffs:?}"))
    }
}
