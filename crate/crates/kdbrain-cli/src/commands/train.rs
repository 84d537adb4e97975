use super::{ensure_dir, write_json, write_text};
use crate::TrainArgs;
use kdbrain::graphdata::load_dataset;
use kdbrain::ssil::SemanticPriorBank;
use kdbrain::train::{
    history_csv, save_checkpoint, train, PmcOrders, PriorInteraction, TrainConfig,
};
use kdbrain::{Dataset64, KdError, Result};
use serde::Serialize;

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    command: &'static str,
    data: String,
    out: String,
    prior_bank: Option<String>,
    prior_interaction: Option<String>,
    #[serde(flatten)]
    config: &'a TrainConfig,
}

pub fn run(args: &TrainArgs) -> Result<i32> {
    let config = TrainConfig {
        q: args.q,
        lambda_sp: args.lambda_sp,
        beta: args.beta,
        embed_dim: args.embed_dim,
        classifier_hidden: args.classifier_hidden,
        c_out: args.c_out,
        fuse_hidden: args.hidden,
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        adam_beta1: args.adam_beta1,
        adam_beta2: args.adam_beta2,
        adam_epsilon: args.adam_epsilon,
        pmc_orders: args.pmc_orders.parse::<PmcOrders>()?,
    };
    config.validate()?;

    let dataset: Dataset64 = load_dataset(&args.data)?;
    let bank = match (&args.prior_bank, config.lambda_sp > 0.0) {
        (Some(path), _) => Some(SemanticPriorBank::load(
            path,
            &dataset.partition,
            config.embed_dim,
        )?),
        (None, true) => {
            return Err(KdError::validation(
                "--lambda-sp > 0 requires --prior-bank (pass --lambda-sp 0 for the prior-free ablation)",
            ))
        }
        (None, false) => None,
    };
    let prior = match (&args.prior_interaction, config.beta > 0.0) {
        (Some(path), _) => Some(PriorInteraction::load(path, &dataset.partition)?),
        (None, true) => {
            return Err(KdError::validation(
                "--beta > 0 requires --prior-interaction (pass --beta 0 for the constraint-free ablation)",
            ))
        }
        (None, false) => None,
    };

    let (state, history) = train(&dataset, bank.as_ref(), prior.as_ref(), &config)?;

    ensure_dir(&args.out)?;
    save_checkpoint(&state, &args.out.join("checkpoint.json"))?;
    write_text(&args.out.join("history.csv"), &history_csv(&history))?;
    write_json(
        &args.out.join("run_config.json"),
        &ResolvedTrain {
            command: "train",
            data: args.data.display().to_string(),
            out: args.out.display().to_string(),
            prior_bank: args.prior_bank.as_ref().map(|p| p.display().to_string()),
            prior_interaction: args
                .prior_interaction
                .as_ref()
                .map(|p| p.display().to_string()),
            config: &config,
        },
    )?;

    let last = history.last().expect("epochs >= 1");
    println!(
        "trained {} epochs on {} samples: ce {:.6}, pmc {:.6}, train acc {:.4}",
        last.epoch,
        dataset.len(),
        last.ce,
        last.pmc,
        last.train_acc
    );
    println!(
        "wrote checkpoint to {}",
        args.out.join("checkpoint.json").display()
    );
    Ok(0)
}
