use super::{ensure_dir, matrix_csv, write_json, write_text};
use crate::InterpretArgs;
use kdbrain::graphdata::load_dataset;
use kdbrain::interpret::{biomarker_saliency, mean_trace, pathway_scores, Pathway};
use kdbrain::train::load_checkpoint;
use kdbrain::{Dataset64, Result};
use serde::Serialize;
use std::fmt::Write as _;

#[derive(Serialize)]
struct TraceJson {
    class: String,
    orders: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct PathwayRow {
    rank: usize,
    start: String,
    pathway: String,
    score: f64,
}

#[derive(Serialize)]
struct ResolvedInterpret {
    command: &'static str,
    checkpoint: String,
    data: String,
    out: String,
    class: String,
    top: usize,
    start: Option<String>,
}

/// Keep the `top` best pathways per start subnetwork, in partition order.
fn top_per_start(pathways: &[Pathway], names: &[String], top: usize) -> Vec<PathwayRow> {
    let mut rows = Vec::new();
    for name in names {
        let mut rank = 0;
        for p in pathways.iter().filter(|p| p.start() == name) {
            rank += 1;
            if rank > top {
                break;
            }
            rows.push(PathwayRow {
                rank,
                start: name.clone(),
                pathway: p.label(),
                score: p.score,
            });
        }
    }
    rows
}

pub fn run(args: &InterpretArgs) -> Result<i32> {
    let state = load_checkpoint::<f64>(&args.checkpoint)?;
    let dataset: Dataset64 = load_dataset(&args.data)?;
    let class_name = args.class.name();

    let means = mean_trace(&state, &dataset, Some(args.class.label()))?;
    let names = dataset.partition.names().to_vec();
    let pathways = pathway_scores(&means, &names, args.start.as_deref())?;
    let biomarkers = biomarker_saliency(&state, &dataset)?;

    ensure_dir(&args.out)?;

    write_json(
        &args.out.join(format!("trace_{class_name}.json")),
        &TraceJson {
            class: class_name.to_string(),
            orders: means.iter().map(|m| m.to_nested_f64()).collect(),
        },
    )?;
    for (l, mean) in means.iter().enumerate() {
        write_text(
            &args
                .out
                .join(format!("alpha_order{}_{class_name}.csv", l + 1)),
            &matrix_csv(mean),
        )?;
    }

    let start_names: Vec<String> = match &args.start {
        Some(s) => vec![s.clone()],
        None => names.clone(),
    };
    let rows = top_per_start(&pathways, &start_names, args.top);
    write_json(&args.out.join(format!("pathways_{class_name}.json")), &rows)?;
    let mut csv = String::from("rank,pathway,score\n");
    for row in &rows {
        writeln!(csv, "{},{},{}", row.rank, row.pathway, row.score).expect("string write");
    }
    write_text(&args.out.join(format!("pathways_{class_name}.csv")), &csv)?;

    write_json(&args.out.join("biomarkers.json"), &biomarkers)?;
    let mut bio_csv = String::from("region,subnetwork,saliency\n");
    for r in &biomarkers.regions {
        writeln!(
            bio_csv,
            "{},{},{}",
            r.name,
            r.subnetwork.as_deref().unwrap_or(""),
            r.score
        )
        .expect("string write");
    }
    write_text(&args.out.join("biomarkers.csv"), &bio_csv)?;

    write_json(
        &args.out.join("run_config.json"),
        &ResolvedInterpret {
            command: "interpret",
            checkpoint: args.checkpoint.display().to_string(),
            data: args.data.display().to_string(),
            out: args.out.display().to_string(),
            class: class_name.to_string(),
            top: args.top,
            start: args.start.clone(),
        },
    )?;

    println!(
        "wrote {} pathway rows, {} trace orders, {} region saliencies to {}",
        rows.len(),
        means.len(),
        biomarkers.regions.len(),
        args.out.display()
    );
    Ok(0)
}
