//! End-to-end library runs on small planted-signal data.

use kdbrain::graphdata::split;
use kdbrain::interpret::biomarker_saliency;
use kdbrain::ssil::SemanticPriorBank;
use kdbrain::synthgen::{generate, SynthMode, SynthSpec};
use kdbrain::train::{evaluate, train, PriorInteraction, TrainConfig};

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        q: 2,
        lambda_sp: 1.0,
        beta: 0.5,
        embed_dim: 8,
        classifier_hidden: 8,
        c_out: 4,
        fuse_hidden: 8,
        learning_rate: 5e-3,
        epochs: 15,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn mean_shift_signal_is_learnable_and_localized() {
    let data = generate::<f64>(&SynthSpec {
        n_regions: 24,
        subnetwork_sizes: vec![6, 6, 6],
        samples_per_class: 30,
        mode: SynthMode::MeanShift,
        effect_size: 5.0,
        noise_scale: 1.0,
        seed: 100,
    })
    .unwrap();
    let (train_set, test_set) = split(&data, 0.7, 1).unwrap();
    let config = small_config(2);
    let bank =
        SemanticPriorBank::seeded_random(data.partition.names(), config.embed_dim, "synthetic", 3);
    let prior = PriorInteraction::uniform(data.partition.names());
    let (state, history) = train(&train_set, Some(&bank), Some(&prior), &config).unwrap();

    assert!(
        history.last().unwrap().train_acc >= 0.9,
        "train acc {:?}",
        history.last()
    );
    let report = evaluate(&state, &test_set).unwrap();
    assert!(report.acc >= 0.8, "test acc {}", report.acc);
    assert!(report.auc.unwrap() >= 0.85, "test auc {:?}", report.auc);

    // The planted signal sits in the DMN block; saliency should find it.
    let saliency = biomarker_saliency(&state, &train_set).unwrap();
    let mean_of = |subnet: Option<&str>| {
        let picks: Vec<f64> = saliency
            .regions
            .iter()
            .filter(|r| {
                r.subnetwork.as_deref() == subnet || (subnet.is_none() && r.subnetwork.is_none())
            })
            .map(|r| r.score)
            .collect();
        picks.iter().sum::<f64>() / picks.len() as f64
    };
    let dmn = mean_of(Some("DMN"));
    let others = (mean_of(Some("SN")) + mean_of(Some("CEN"))) / 2.0;
    assert!(
        dmn > others,
        "DMN saliency {dmn} should exceed other subnetworks {others}"
    );
}

#[test]
fn lambda_zero_run_is_bit_identical_to_bank_free_run() {
    let data = generate::<f64>(&SynthSpec {
        n_regions: 12,
        subnetwork_sizes: vec![4, 4, 4],
        samples_per_class: 6,
        mode: SynthMode::MeanShift,
        effect_size: 2.0,
        noise_scale: 1.0,
        seed: 200,
    })
    .unwrap();
    let config = TrainConfig {
        lambda_sp: 0.0,
        epochs: 4,
        ..small_config(7)
    };
    let bank =
        SemanticPriorBank::seeded_random(data.partition.names(), config.embed_dim, "unused", 8);
    let prior = PriorInteraction::uniform(data.partition.names());

    let (with_bank, _) = train(&data, Some(&bank), Some(&prior), &config).unwrap();
    let (without_bank, _) = train(&data, None, Some(&prior), &config).unwrap();

    let bits = |state: &kdbrain::ModelState64| {
        state
            .params
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect::<Vec<u64>>()
    };
    assert_eq!(bits(&with_bank), bits(&without_bank));
    assert!(with_bank.bank.is_none(), "lambda 0 must not retain a bank");
}

#[test]
fn beta_zero_training_ignores_the_prior() {
    let data = generate::<f64>(&SynthSpec {
        n_regions: 12,
        subnetwork_sizes: vec![4, 4, 4],
        samples_per_class: 6,
        mode: SynthMode::CoupledBlocks,
        effect_size: 1.0,
        noise_scale: 1.0,
        seed: 300,
    })
    .unwrap();
    let config = TrainConfig {
        beta: 0.0,
        epochs: 4,
        ..small_config(9)
    };
    let bank =
        SemanticPriorBank::seeded_random(data.partition.names(), config.embed_dim, "synthetic", 10);
    // A strongly opinionated prior must have zero influence at beta = 0.
    let names = data.partition.names().to_vec();
    let skewed = PriorInteraction::new(
        names.clone(),
        kdbrain::Tensor64::from_rows(&[
            vec![0.05, 0.05, 0.9],
            vec![0.9, 0.05, 0.05],
            vec![0.05, 0.9, 0.05],
        ])
        .unwrap(),
    )
    .unwrap();

    let (with_prior, history_with) = train(&data, Some(&bank), Some(&skewed), &config).unwrap();
    let (without_prior, history_without) = train(&data, Some(&bank), None, &config).unwrap();

    let bits = |state: &kdbrain::ModelState64| {
        state
            .params
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect::<Vec<u64>>()
    };
    assert_eq!(bits(&with_prior), bits(&without_prior));
    // CE trajectories agree too; only the diagnostic KL column differs.
    for (a, b) in history_with.iter().zip(&history_without) {
        assert_eq!(a.ce.to_bits(), b.ce.to_bits());
        assert_eq!(a.train_acc, b.train_acc);
    }
    assert!(history_with.iter().all(|h| h.pmc > 0.0));
    assert!(history_without.iter().all(|h| h.pmc == 0.0));
}

#[test]
fn single_precision_training_works() {
    let data = generate::<f32>(&SynthSpec {
        n_regions: 12,
        subnetwork_sizes: vec![4, 4, 4],
        samples_per_class: 5,
        mode: SynthMode::MeanShift,
        effect_size: 3.0,
        noise_scale: 1.0,
        seed: 400,
    })
    .unwrap();
    let config = TrainConfig {
        epochs: 3,
        ..small_config(11)
    };
    let bank: SemanticPriorBank<f32> =
        SemanticPriorBank::seeded_random(data.partition.names(), config.embed_dim, "synthetic", 12);
    let prior: PriorInteraction<f32> = PriorInteraction::uniform(data.partition.names());
    let (state, history) = train(&data, Some(&bank), Some(&prior), &config).unwrap();
    assert_eq!(history.len(), 3);
    assert!(state.params.tensors().iter().all(|t| t.is_finite()));
    let report = evaluate(&state, &data).unwrap();
    assert!(report.acc.is_finite());
}
