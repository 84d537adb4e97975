use super::{ensure_dir, write_json};
use crate::EvaluateArgs;
use kdbrain::graphdata::load_dataset;
use kdbrain::train::{evaluate, load_checkpoint};
use kdbrain::{Dataset64, Result};
use serde::Serialize;

#[derive(Serialize)]
struct Metrics {
    acc: f64,
    /// `null` when the dataset holds one class.
    auc: Option<f64>,
    n: usize,
    n_control: usize,
    n_patient: usize,
}

#[derive(Serialize)]
struct ResolvedEvaluate {
    command: &'static str,
    checkpoint: String,
    data: String,
    out: String,
}

pub fn run(args: &EvaluateArgs) -> Result<i32> {
    let state = load_checkpoint::<f64>(&args.checkpoint)?;
    let dataset: Dataset64 = load_dataset(&args.data)?;
    let report = evaluate(&state, &dataset)?;

    let metrics = Metrics {
        acc: report.acc,
        auc: report.auc,
        n: report.n,
        n_control: report.class_counts[0],
        n_patient: report.class_counts[1],
    };
    ensure_dir(&args.out)?;
    write_json(&args.out.join("metrics.json"), &metrics)?;
    write_json(
        &args.out.join("run_config.json"),
        &ResolvedEvaluate {
            command: "evaluate",
            checkpoint: args.checkpoint.display().to_string(),
            data: args.data.display().to_string(),
            out: args.out.display().to_string(),
        },
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&metrics).expect("metrics serialize")
    );
    Ok(0)
}
