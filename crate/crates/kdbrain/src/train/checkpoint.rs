//! Versioned JSON checkpoints: config echo, partition, optional semantic
//! bank, every parameter tensor as nested arrays, and optimizer state.

use super::{ModelParams, ModelState, TrainConfig};
use crate::diffcore::Tensor;
use crate::encoder::EncoderParams;
use crate::error::{KdError, Result};
use crate::graphdata::Partition;
use crate::scalar::Scalar;
use crate::ssil::{AttentionParams, SemanticPriorBank};
use serde::{Deserialize, Serialize};
use std::path::Path;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: TrainConfig,
    n_regions: usize,
    n_channels: usize,
    partition_names: Vec<String>,
    partition_regions: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    semantic_bank: Option<BankEcho>,
    params: ParamsJson,
    adam_m: Vec<Vec<Vec<f64>>>,
    adam_v: Vec<Vec<Vec<f64>>>,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct BankEcho {
    disorder: String,
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    w_row: Vec<Vec<Vec<Vec<f64>>>>,
    w_col: Vec<Vec<Vec<Vec<f64>>>>,
    w_fuse: Vec<Vec<f64>>,
    w_proj: Vec<Vec<f64>>,
    w_q: Vec<Vec<f64>>,
    w_k: Vec<Vec<f64>>,
    clf_w1: Vec<Vec<f64>>,
    clf_b1: Vec<Vec<f64>>,
    clf_w2: Vec<Vec<f64>>,
    clf_b2: Vec<Vec<f64>>,
}

fn kernels_to_json<T: Scalar>(bank: &[Vec<Tensor<T>>]) -> Vec<Vec<Vec<Vec<f64>>>> {
    bank.iter()
        .map(|per_k| per_k.iter().map(Tensor::to_nested_f64).collect())
        .collect()
}

fn kernels_from_json<T: Scalar>(json: &[Vec<Vec<Vec<f64>>>]) -> Result<Vec<Vec<Tensor<T>>>> {
    json.iter()
        .map(|per_k| per_k.iter().map(|t| Tensor::from_nested_f64(t)).collect())
        .collect()
}

/// Serialize a trained state to pretty JSON at `path`.
pub fn save_checkpoint<T: Scalar>(state: &ModelState<T>, path: &Path) -> Result<()> {
    let partition = &state.partition;
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config: state.config.clone(),
        n_regions: partition.n_regions(),
        n_channels: state.n_channels,
        partition_names: partition.names().to_vec(),
        partition_regions: (0..partition.n_subnetworks())
            .map(|k| partition.regions_of(k))
            .collect(),
        region_labels: partition.region_labels().map(<[String]>::to_vec),
        semantic_bank: state.bank.as_ref().map(|b| BankEcho {
            disorder: b.disorder.clone(),
            vectors: b.vectors.to_nested_f64(),
        }),
        params: ParamsJson {
            w_row: kernels_to_json(&state.params.encoder.w_row),
            w_col: kernels_to_json(&state.params.encoder.w_col),
            w_fuse: state.params.encoder.w_fuse.to_nested_f64(),
            w_proj: state.params.encoder.w_proj.to_nested_f64(),
            w_q: state.params.attention.w_q.to_nested_f64(),
            w_k: state.params.attention.w_k.to_nested_f64(),
            clf_w1: state.params.attention.clf_w1.to_nested_f64(),
            clf_b1: state.params.attention.clf_b1.to_nested_f64(),
            clf_w2: state.params.attention.clf_w2.to_nested_f64(),
            clf_b2: state.params.attention.clf_b2.to_nested_f64(),
        },
        adam_m: state.adam_m.iter().map(Tensor::to_nested_f64).collect(),
        adam_v: state.adam_v.iter().map(Tensor::to_nested_f64).collect(),
        step: state.step,
    };
    let mut text =
        serde_json::to_string_pretty(&file).map_err(|e| KdError::parse(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| KdError::io(path, e))
}

/// Load and validate a checkpoint.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelState<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| KdError::io(path, e))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| KdError::parse(path, e.to_string()))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(KdError::validation(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    file.config.validate()?;
    let partition = Partition::new(
        file.partition_names.clone(),
        file.partition_regions.clone(),
        file.n_regions,
        file.region_labels.clone(),
    )?;

    let encoder = EncoderParams {
        w_row: kernels_from_json(&file.params.w_row)?,
        w_col: kernels_from_json(&file.params.w_col)?,
        w_fuse: Tensor::from_nested_f64(&file.params.w_fuse)?,
        w_proj: Tensor::from_nested_f64(&file.params.w_proj)?,
    };
    let attention = AttentionParams {
        w_q: Tensor::from_nested_f64(&file.params.w_q)?,
        w_k: Tensor::from_nested_f64(&file.params.w_k)?,
        lambda_sp: T::from_f64_lossy(file.config.lambda_sp),
        q_orders: file.config.q,
        clf_w1: Tensor::from_nested_f64(&file.params.clf_w1)?,
        clf_b1: Tensor::from_nested_f64(&file.params.clf_b1)?,
        clf_w2: Tensor::from_nested_f64(&file.params.clf_w2)?,
        clf_b2: Tensor::from_nested_f64(&file.params.clf_b2)?,
    };
    let sizes: Vec<usize> = (0..partition.n_subnetworks())
        .map(|k| partition.size_of(k))
        .collect();
    encoder.validate(&sizes, file.n_channels)?;
    attention.validate(partition.n_subnetworks())?;

    let params = ModelParams { encoder, attention };
    let adam_m: Vec<Tensor<T>> = file
        .adam_m
        .iter()
        .map(|t| Tensor::from_nested_f64(t))
        .collect::<Result<_>>()?;
    let adam_v: Vec<Tensor<T>> = file
        .adam_v
        .iter()
        .map(|t| Tensor::from_nested_f64(t))
        .collect::<Result<_>>()?;
    let tensors = params.tensors();
    if adam_m.len() != tensors.len() || adam_v.len() != tensors.len() {
        return Err(KdError::validation(format!(
            "optimizer moments cover {} tensors, model has {}",
            adam_m.len(),
            tensors.len()
        )));
    }
    for ((m, v), t) in adam_m.iter().zip(&adam_v).zip(&tensors) {
        if m.shape() != t.shape() || v.shape() != t.shape() {
            return Err(KdError::validation(
                "optimizer moment shape does not match its parameter",
            ));
        }
    }

    let bank = file.semantic_bank.as_ref().map(|b| {
        Ok::<_, KdError>(SemanticPriorBank {
            disorder: b.disorder.clone(),
            names: file.partition_names.clone(),
            vectors: Tensor::from_nested_f64(&b.vectors)?,
        })
    });
    let bank = bank.transpose()?;
    if let Some(b) = &bank {
        if b.vectors.cols() != file.config.embed_dim
            || b.vectors.rows() != partition.n_subnetworks()
        {
            return Err(KdError::validation(format!(
                "embedded semantic bank is {}, expected {}x{}",
                b.vectors.shape_string(),
                partition.n_subnetworks(),
                file.config.embed_dim
            )));
        }
    }

    Ok(ModelState {
        params,
        adam_m,
        adam_v,
        step: file.step,
        config: file.config,
        partition,
        n_channels: file.n_channels,
        bank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, SynthMode, SynthSpec};
    use crate::train::{train, PriorInteraction};

    fn trained_state() -> ModelState<f64> {
        let data = generate::<f64>(&SynthSpec {
            n_regions: 9,
            subnetwork_sizes: vec![3, 3, 3],
            samples_per_class: 4,
            mode: SynthMode::MeanShift,
            effect_size: 1.0,
            noise_scale: 1.0,
            seed: 2,
        })
        .unwrap();
        let config = TrainConfig {
            q: 2,
            lambda_sp: 1.0,
            beta: 0.5,
            embed_dim: 4,
            classifier_hidden: 4,
            c_out: 2,
            fuse_hidden: 3,
            epochs: 1,
            batch_size: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        let bank = SemanticPriorBank::seeded_random(data.partition.names(), 4, "synthetic", 5);
        let prior = PriorInteraction::uniform(data.partition.names());
        train(&data, Some(&bank), Some(&prior), &config).unwrap().0
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let state = trained_state();
        let path = dir.path().join("checkpoint.json");
        save_checkpoint(&state, &path).unwrap();
        let loaded: ModelState<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params, state.params);
        assert_eq!(loaded.adam_m, state.adam_m);
        assert_eq!(loaded.adam_v, state.adam_v);
        assert_eq!(loaded.step, state.step);
        assert_eq!(loaded.config, state.config);
        assert_eq!(loaded.partition, state.partition);
        assert_eq!(loaded.bank, state.bank);

        // Saving the loaded state reproduces the bytes.
        let path2 = dir.path().join("checkpoint2.json");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn corrupted_checkpoint_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let state = trained_state();
        let path = dir.path().join("checkpoint.json");
        save_checkpoint(&state, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"w_q\"", "\"w_q_oops\"");
        std::fs::write(&path, text).unwrap();
        let err = load_checkpoint::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("w_q"), "{err}");
    }
}
