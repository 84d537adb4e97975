//! Losses, the clinical interaction prior, optimization, and evaluation.
//!
//! The training objective is cross-entropy plus a β-weighted KL divergence
//! pulling the learned subnetwork-interaction distribution toward a
//! row-stochastic clinical prior. Optimization is plain Adam over the full
//! analytic gradient; runs are bit-reproducible under a fixed seed.

mod adam;
mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use crate::diffcore::{Tape, Tensor, ValueId};
use crate::encoder::{self, EncoderParamIds, EncoderParams};
use crate::error::{KdError, Result};
use crate::graphdata::{extract_subnetwork, Connectome, Dataset, Partition};
use crate::scalar::Scalar;
use crate::ssil::{
    self, name_set_diff, AttentionParamIds, AttentionParams, AttentionTrace, SemanticPriorBank,
    StackOutput,
};
use crate::KL_EPSILON;
use adam::{adam_step, AdamHyper};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

// ── Configuration ────────────────────────────────────────────────────

/// Which interaction orders form the learned distribution the prior is
/// compared against: their average, or the final order alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmcOrders {
    Avg,
    Final,
}

impl FromStr for PmcOrders {
    type Err = KdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(PmcOrders::Avg),
            "final" => Ok(PmcOrders::Final),
            other => Err(KdError::validation(format!(
                "unknown pmc-orders value '{other}' (expected 'avg' or 'final')"
            ))),
        }
    }
}

impl fmt::Display for PmcOrders {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PmcOrders::Avg => write!(f, "avg"),
            PmcOrders::Final => write!(f, "final"),
        }
    }
}

/// Every training hyperparameter. Serialized verbatim into checkpoints
/// and resolved run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Attention stack depth q.
    pub q: usize,
    /// Semantic prior injection strength.
    pub lambda_sp: f64,
    /// Weight of the prior-alignment KL term.
    pub beta: f64,
    /// Embedding dimension d.
    pub embed_dim: usize,
    /// Classifier hidden width.
    pub classifier_hidden: usize,
    /// Encoder convolution output channels.
    pub c_out: usize,
    /// Encoder fuse width h.
    pub fuse_hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub pmc_orders: PmcOrders,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            q: 2,
            lambda_sp: 1.0,
            beta: 0.5,
            embed_dim: 64,
            classifier_hidden: 64,
            c_out: 16,
            fuse_hidden: 32,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 16,
            seed: 42,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            pmc_orders: PmcOrders::Avg,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(KdError::validation("interaction order q must be >= 1"));
        }
        if self.lambda_sp < 0.0 {
            return Err(KdError::validation("lambda_sp must be >= 0"));
        }
        if self.beta < 0.0 {
            return Err(KdError::validation("beta must be >= 0"));
        }
        for (name, dim) in [
            ("embed_dim", self.embed_dim),
            ("classifier_hidden", self.classifier_hidden),
            ("c_out", self.c_out),
            ("fuse_hidden", self.fuse_hidden),
        ] {
            if dim == 0 {
                return Err(KdError::validation(format!("{name} must be positive")));
            }
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(KdError::validation("learning rate must be > 0"));
        }
        if self.epochs == 0 {
            return Err(KdError::validation("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(KdError::validation("batch size must be >= 1"));
        }
        Ok(())
    }
}

// ── Clinical interaction prior ───────────────────────────────────────

/// Row-stochastic |T|×|T| target distribution over subnetwork
/// interactions, aligned to a partition's subnetwork order.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorInteraction<T> {
    pub names: Vec<String>,
    pub matrix: Tensor<T>,
}

#[derive(Serialize, Deserialize)]
struct PriorFile {
    subnetworks: Vec<String>,
    matrix: Vec<Vec<f64>>,
}

const ROW_SUM_TOLERANCE: f64 = 1e-6;

impl<T: Scalar> PriorInteraction<T> {
    pub fn new(names: Vec<String>, matrix: Tensor<T>) -> Result<Self> {
        let t = names.len();
        if matrix.shape() != (t, t) {
            return Err(KdError::ShapeMismatch {
                op: "prior interaction",
                lhs: matrix.shape_string(),
                rhs: format!("{t}x{t}"),
            });
        }
        for (k, name) in names.iter().enumerate() {
            let mut sum = 0.0;
            for j in 0..t {
                let v = matrix.get(k, j).to_f64_lossy();
                if !(0.0..=1.0).contains(&v) {
                    return Err(KdError::validation(format!(
                        "prior row '{name}': entry {v} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(KdError::validation(format!(
                    "prior row '{name}' sums to {sum}, expected 1"
                )));
            }
        }
        Ok(PriorInteraction { names, matrix })
    }

    /// Uniform prior: every row 1/|T|.
    pub fn uniform(names: &[String]) -> Self {
        let t = names.len();
        PriorInteraction {
            names: names.to_vec(),
            matrix: Tensor::filled(t, t, T::from_f64_lossy(1.0 / t as f64)),
        }
    }

    /// Load from file and align rows/columns to the partition's order.
    pub fn load(path: &Path, partition: &Partition) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KdError::io(path, e))?;
        let file: PriorFile =
            serde_json::from_str(&text).map_err(|e| KdError::parse(path, e.to_string()))?;
        let expected = partition.names().to_vec();
        if file.subnetworks.len() != expected.len()
            || !expected.iter().all(|n| file.subnetworks.contains(n))
        {
            return Err(KdError::validation(format!(
                "prior interaction subnetworks do not match partition: {}",
                name_set_diff(&expected, &file.subnetworks)
            )));
        }
        let t = expected.len();
        if file.matrix.len() != t || file.matrix.iter().any(|r| r.len() != t) {
            return Err(KdError::parse(
                path,
                format!("matrix must be {t}x{t} to match the subnetwork list"),
            ));
        }
        // Permute file order → partition order on both axes.
        let perm: Vec<usize> = expected
            .iter()
            .map(|n| file.subnetworks.iter().position(|m| m == n).unwrap())
            .collect();
        let mut aligned = Tensor::zeros(t, t);
        for k in 0..t {
            for j in 0..t {
                aligned.set(k, j, T::from_f64_lossy(file.matrix[perm[k]][perm[j]]));
            }
        }
        PriorInteraction::new(expected, aligned)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PriorFile {
            subnetworks: self.names.clone(),
            matrix: self.matrix.to_nested_f64(),
        };
        let mut text =
            serde_json::to_string_pretty(&file).map_err(|e| KdError::parse(path, e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| KdError::io(path, e))
    }

    fn check_alignment(&self, partition: &Partition) -> Result<()> {
        if self.names != partition.names() {
            return Err(KdError::validation(format!(
                "prior interaction subnetworks do not match partition: {}",
                name_set_diff(partition.names(), &self.names)
            )));
        }
        Ok(())
    }
}

// ── Losses ───────────────────────────────────────────────────────────

/// Mean `-log softmax(logits)[label]` over a batch of 1×n logit rows,
/// stabilized with log-sum-exp.
pub fn cross_entropy<T: Scalar>(logit_rows: &[Tensor<T>], labels: &[u8]) -> Result<T> {
    if logit_rows.is_empty() {
        return Err(KdError::validation("cross entropy over an empty batch"));
    }
    if logit_rows.len() != labels.len() {
        return Err(KdError::validation(format!(
            "{} logit rows but {} labels",
            logit_rows.len(),
            labels.len()
        )));
    }
    let mut total = T::zero();
    for (row, &label) in logit_rows.iter().zip(labels) {
        if row.rows() != 1 || usize::from(label) >= row.cols() {
            return Err(KdError::validation(format!(
                "label {label} invalid for logits {}",
                row.shape_string()
            )));
        }
        let data = row.row_slice(0);
        let max = data.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp: T = data.iter().map(|&v| (v - max).exp()).sum();
        total = total + max + sum_exp.ln() - data[usize::from(label)];
    }
    Ok(total / T::from_f64_lossy(logit_rows.len() as f64))
}

/// The learned interaction distribution a trace induces: order-averaged or
/// final-order coefficients.
pub fn sni_distribution<T: Scalar>(
    trace: &AttentionTrace<T>,
    orders: PmcOrders,
) -> Result<Tensor<T>> {
    if trace.alphas.is_empty() {
        return Err(KdError::validation("attention trace holds no orders"));
    }
    match orders {
        PmcOrders::Final => Ok(trace.alphas.last().unwrap().clone()),
        PmcOrders::Avg => {
            let mut acc = trace.alphas[0].clone();
            for alpha in &trace.alphas[1..] {
                acc = acc.add(alpha)?;
            }
            Ok(acc.scale(T::one() / T::from_f64_lossy(trace.alphas.len() as f64)))
        }
    }
}

/// KL(P_prior ‖ P_sni) for one sample's trace, with the ε-clamped
/// denominator and 0·log 0 := 0.
pub fn pmc_loss<T: Scalar>(
    trace: &AttentionTrace<T>,
    prior: &PriorInteraction<T>,
    orders: PmcOrders,
) -> Result<T> {
    let sni = sni_distribution(trace, orders)?;
    if sni.shape() != prior.matrix.shape() {
        return Err(KdError::ShapeMismatch {
            op: "pmc_loss",
            lhs: sni.shape_string(),
            rhs: prior.matrix.shape_string(),
        });
    }
    let eps = T::from_f64_lossy(KL_EPSILON);
    let mut total = T::zero();
    for (&p, &q) in prior.matrix.data().iter().zip(sni.data()) {
        if p > T::zero() {
            total = total + p * (p / q.max(eps)).ln();
        }
    }
    Ok(total)
}

/// Total objective: cross-entropy plus β times the prior-alignment KL.
/// β = 0 returns the cross-entropy untouched.
pub fn total_loss<T: Scalar>(ce: T, pmc: T, beta: T) -> T {
    if beta == T::zero() {
        ce
    } else {
        ce + beta * pmc
    }
}

// ── Model parameters and state ───────────────────────────────────────

/// All learnable tensors: encoder plus attention/classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: EncoderParams<T>,
    pub attention: AttentionParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Canonical parameter names, in the same order as [`Self::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, per_k) in self.encoder.w_row.iter().enumerate() {
            for c in 0..per_k.len() {
                out.push(format!("encoder.w_row.{k}.{c}"));
            }
        }
        for (k, per_k) in self.encoder.w_col.iter().enumerate() {
            for c in 0..per_k.len() {
                out.push(format!("encoder.w_col.{k}.{c}"));
            }
        }
        out.push("encoder.w_fuse".to_string());
        out.push("encoder.w_proj".to_string());
        out.push("attention.w_q".to_string());
        out.push("attention.w_k".to_string());
        out.push("classifier.w1".to_string());
        out.push("classifier.b1".to_string());
        out.push("classifier.w2".to_string());
        out.push("classifier.b2".to_string());
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = Vec::new();
        out.extend(self.encoder.w_row.iter().flatten());
        out.extend(self.encoder.w_col.iter().flatten());
        out.push(&self.encoder.w_fuse);
        out.push(&self.encoder.w_proj);
        out.push(&self.attention.w_q);
        out.push(&self.attention.w_k);
        out.push(&self.attention.clf_w1);
        out.push(&self.attention.clf_b1);
        out.push(&self.attention.clf_w2);
        out.push(&self.attention.clf_b2);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        out.extend(self.encoder.w_row.iter_mut().flatten());
        out.extend(self.encoder.w_col.iter_mut().flatten());
        out.push(&mut self.encoder.w_fuse);
        out.push(&mut self.encoder.w_proj);
        out.push(&mut self.attention.w_q);
        out.push(&mut self.attention.w_k);
        out.push(&mut self.attention.clf_w1);
        out.push(&mut self.attention.clf_b1);
        out.push(&mut self.attention.clf_w2);
        out.push(&mut self.attention.clf_b2);
        out
    }
}

/// Tape handles for every model parameter.
pub struct ModelParamIds {
    pub encoder: EncoderParamIds,
    pub attention: AttentionParamIds,
}

impl ModelParamIds {
    /// Leaf ids in canonical parameter order.
    pub fn canonical(&self) -> Vec<ValueId> {
        let mut out: Vec<ValueId> = Vec::new();
        out.extend(self.encoder.w_row.iter().flatten().copied());
        out.extend(self.encoder.w_col.iter().flatten().copied());
        out.push(self.encoder.w_fuse);
        out.push(self.encoder.w_proj);
        out.push(self.attention.w_q);
        out.push(self.attention.w_k);
        out.push(self.attention.clf_w1);
        out.push(self.attention.clf_b1);
        out.push(self.attention.clf_w2);
        out.push(self.attention.clf_b2);
        out
    }

    /// Rebuild the structured handles from a canonically ordered slice
    /// (the inverse of [`Self::canonical`]).
    pub fn from_canonical(
        ids: &[ValueId],
        n_subnetworks: usize,
        n_channels: usize,
    ) -> Result<Self> {
        let kernels = 2 * n_subnetworks * n_channels;
        if ids.len() != kernels + 8 {
            return Err(KdError::validation(format!(
                "{} parameter ids for {} subnetworks x {} channels (expected {})",
                ids.len(),
                n_subnetworks,
                n_channels,
                kernels + 8
            )));
        }
        let chunk = |offset: usize| -> Vec<Vec<ValueId>> {
            (0..n_subnetworks)
                .map(|k| {
                    (0..n_channels)
                        .map(|c| ids[offset + k * n_channels + c])
                        .collect()
                })
                .collect()
        };
        let half = n_subnetworks * n_channels;
        let rest = &ids[kernels..];
        Ok(ModelParamIds {
            encoder: EncoderParamIds {
                w_row: chunk(0),
                w_col: chunk(half),
                w_fuse: rest[0],
                w_proj: rest[1],
            },
            attention: AttentionParamIds {
                w_q: rest[2],
                w_k: rest[3],
                clf_w1: rest[4],
                clf_b1: rest[5],
                clf_w2: rest[6],
                clf_b2: rest[7],
            },
        })
    }
}

/// Register every model parameter as a tape leaf.
pub fn register_model<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>) -> ModelParamIds {
    ModelParamIds {
        encoder: encoder::register_encoder(tape, &params.encoder),
        attention: ssil::register_attention(tape, &params.attention),
    }
}

/// Learnable parameters plus optimizer state and the context the model
/// was trained in (partition, config, optional prior bank).
#[derive(Clone, Debug)]
pub struct ModelState<T> {
    pub params: ModelParams<T>,
    pub adam_m: Vec<Tensor<T>>,
    pub adam_v: Vec<Tensor<T>>,
    pub step: u64,
    pub config: TrainConfig,
    pub partition: Partition,
    pub n_channels: usize,
    pub bank: Option<SemanticPriorBank<T>>,
}

impl<T: Scalar> ModelState<T> {
    /// Fresh state with seeded initialization. The bank is dropped when
    /// lambda_sp = 0 so a zero-injection run carries no prior at all.
    pub fn init(
        partition: &Partition,
        n_channels: usize,
        bank: Option<&SemanticPriorBank<T>>,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let bank = if config.lambda_sp == 0.0 {
            None
        } else {
            let bank = bank.ok_or_else(|| {
                KdError::validation("lambda_sp > 0 requires a semantic prior bank")
            })?;
            if bank.names != partition.names() {
                return Err(KdError::validation(format!(
                    "semantic prior bank subnetworks do not match partition: {}",
                    name_set_diff(partition.names(), &bank.names)
                )));
            }
            if bank.vectors.cols() != config.embed_dim {
                return Err(KdError::validation(format!(
                    "semantic prior bank dimension {} does not match embed_dim {}",
                    bank.vectors.cols(),
                    config.embed_dim
                )));
            }
            Some(bank.clone())
        };

        let sizes: Vec<usize> = (0..partition.n_subnetworks())
            .map(|k| partition.size_of(k))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder_params = EncoderParams::init(
            &sizes,
            n_channels,
            config.c_out,
            config.fuse_hidden,
            config.embed_dim,
            &mut rng,
        );
        let attention_params = AttentionParams::init(
            partition.n_subnetworks(),
            config.embed_dim,
            config.classifier_hidden,
            config.lambda_sp,
            config.q,
            &mut rng,
        );
        let params = ModelParams {
            encoder: encoder_params,
            attention: attention_params,
        };
        let adam_m: Vec<Tensor<T>> = params.tensors().iter().map(|t| t.zeros_like()).collect();
        let adam_v = adam_m.clone();
        Ok(ModelState {
            params,
            adam_m,
            adam_v,
            step: 0,
            config: config.clone(),
            partition: partition.clone(),
            n_channels,
            bank,
        })
    }

    /// Reject datasets whose shape or partition differ from the one this
    /// model was trained on.
    pub fn validate_dataset(&self, dataset: &Dataset<T>) -> Result<()> {
        if dataset.n_regions != self.partition.n_regions() {
            return Err(KdError::validation(format!(
                "dataset has {} regions, model was trained on {}",
                dataset.n_regions,
                self.partition.n_regions()
            )));
        }
        if dataset.n_channels != self.n_channels {
            return Err(KdError::validation(format!(
                "dataset has {} channels, model was trained on {}",
                dataset.n_channels, self.n_channels
            )));
        }
        if dataset.partition != self.partition {
            return Err(KdError::validation(format!(
                "dataset partition does not match the model's: {}",
                name_set_diff(self.partition.names(), dataset.partition.names())
            )));
        }
        Ok(())
    }

    /// Forward pass for one sample, returning logits and the attention
    /// trace. No gradients are computed.
    pub fn forward_sample_values(
        &self,
        sample: &Connectome<T>,
    ) -> Result<(Tensor<T>, AttentionTrace<T>)> {
        let blocks = sample_blocks(sample, &self.partition)?;
        forward_values_from_blocks(&self.params, self.bank.as_ref(), &blocks)
    }
}

// ── Forward construction ─────────────────────────────────────────────

/// Per-subnetwork, per-channel connectivity blocks of one sample.
pub fn sample_blocks<T: Scalar>(
    sample: &Connectome<T>,
    partition: &Partition,
) -> Result<Vec<Vec<Tensor<T>>>> {
    (0..partition.n_subnetworks())
        .map(|k| extract_subnetwork(sample, partition, k))
        .collect()
}

/// Tape handles of one sample's forward pass.
pub struct SampleForward {
    pub logits: ValueId,
    pub stack: StackOutput,
    /// Input leaves, `[k][c]`, for saliency gradients.
    pub block_ids: Vec<Vec<ValueId>>,
}

/// Build the full forward pass for one sample on the given tape.
pub fn build_sample_forward<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &ModelParamIds,
    params: &ModelParams<T>,
    blocks: &[Vec<Tensor<T>>],
    bank_id: Option<ValueId>,
) -> Result<SampleForward> {
    let block_ids: Vec<Vec<ValueId>> = blocks
        .iter()
        .map(|per_k| per_k.iter().map(|t| tape.leaf(t.clone())).collect())
        .collect();
    let z0 = encoder::encode_all(tape, &block_ids, &ids.encoder)?;
    let stack = ssil::run_stack(tape, z0, bank_id, &params.attention, &ids.attention)?;
    let logits = ssil::classify(tape, stack.z_final, &ids.attention)?;
    Ok(SampleForward {
        logits,
        stack,
        block_ids,
    })
}

fn forward_values_from_blocks<T: Scalar>(
    params: &ModelParams<T>,
    bank: Option<&SemanticPriorBank<T>>,
    blocks: &[Vec<Tensor<T>>],
) -> Result<(Tensor<T>, AttentionTrace<T>)> {
    let mut tape = Tape::new();
    let ids = register_model(&mut tape, params);
    let bank_id = bank.map(|b| tape.leaf(b.vectors.clone()));
    let fwd = build_sample_forward(&mut tape, &ids, params, blocks, bank_id)?;
    let logits = tape.value(fwd.logits).clone();
    let trace = fwd.stack.trace(&tape);
    Ok((logits, trace))
}

/// On-tape KL(P_prior ‖ P_sni) from recorded coefficient matrices.
fn build_pmc<T: Scalar>(
    tape: &mut Tape<T>,
    prior_id: ValueId,
    prior_entropy_id: ValueId,
    alpha_ids: &[ValueId],
    orders: PmcOrders,
) -> Result<ValueId> {
    let sni = match orders {
        PmcOrders::Final => *alpha_ids.last().expect("q >= 1"),
        PmcOrders::Avg => {
            let mut acc = alpha_ids[0];
            for &alpha in &alpha_ids[1..] {
                acc = tape.add(acc, alpha)?;
            }
            tape.scale(acc, T::one() / T::from_f64_lossy(alpha_ids.len() as f64))
        }
    };
    let log_sni = tape.log_clamped(sni, T::from_f64_lossy(KL_EPSILON));
    let weighted = tape.mul(prior_id, log_sni)?;
    let cross = tape.sum(weighted);
    let neg_cross = tape.scale(cross, -T::one());
    tape.add(prior_entropy_id, neg_cross)
}

fn prior_entropy_value<T: Scalar>(prior: &PriorInteraction<T>) -> T {
    let mut total = T::zero();
    for &p in prior.matrix.data() {
        if p > T::zero() {
            total = total + p * p.ln();
        }
    }
    total
}

/// Build the mini-batch objective on a tape: mean cross-entropy plus, when
/// β > 0, β times the mean per-sample prior KL. Shared by the training
/// loop and the full-loss gradient check so both exercise one code path.
#[allow(clippy::too_many_arguments)]
fn build_batch_objective<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &ModelParamIds,
    params: &ModelParams<T>,
    batch_blocks: &[&Vec<Vec<Tensor<T>>>],
    batch_labels: &[u8],
    bank_id: Option<ValueId>,
    prior: Option<&PriorInteraction<T>>,
    config: &TrainConfig,
) -> Result<(ValueId, ValueId, Vec<StackOutput>)> {
    debug_assert_eq!(batch_blocks.len(), batch_labels.len());
    let prior_ids = match prior {
        Some(p) if config.beta > 0.0 => Some((
            tape.leaf(p.matrix.clone()),
            tape.leaf(Tensor::scalar(prior_entropy_value(p))),
        )),
        _ => None,
    };

    let mut ce_ids = Vec::with_capacity(batch_blocks.len());
    let mut pmc_ids = Vec::with_capacity(batch_blocks.len());
    let mut stacks = Vec::with_capacity(batch_blocks.len());
    for (blocks, &label) in batch_blocks.iter().zip(batch_labels) {
        let fwd = build_sample_forward(tape, ids, params, blocks, bank_id)?;
        ce_ids.push(tape.cross_entropy_logits(fwd.logits, usize::from(label))?);
        if let Some((prior_id, entropy_id)) = prior_ids {
            pmc_ids.push(build_pmc(
                tape,
                prior_id,
                entropy_id,
                &fwd.stack.alpha_ids,
                config.pmc_orders,
            )?);
        }
        stacks.push(fwd.stack);
    }

    let inv_batch = T::one() / T::from_f64_lossy(batch_blocks.len() as f64);
    let mut ce_acc = ce_ids[0];
    for &id in &ce_ids[1..] {
        ce_acc = tape.add(ce_acc, id)?;
    }
    let ce_mean = tape.scale(ce_acc, inv_batch);

    let total = if prior_ids.is_some() {
        let mut pmc_acc = pmc_ids[0];
        for &id in &pmc_ids[1..] {
            pmc_acc = tape.add(pmc_acc, id)?;
        }
        let pmc_mean = tape.scale(pmc_acc, inv_batch);
        let weighted = tape.scale(pmc_mean, T::from_f64_lossy(config.beta));
        tape.add(ce_mean, weighted)?
    } else {
        ce_mean
    };
    Ok((total, ce_mean, stacks))
}

fn predict<T: Scalar>(logits: &Tensor<T>) -> u8 {
    u8::from(logits.get(0, 1) > logits.get(0, 0))
}

/// P(class 1) from a 1×2 logit row, computed stably.
fn patient_score<T: Scalar>(logits: &Tensor<T>) -> f64 {
    let diff = (logits.get(0, 1) - logits.get(0, 0)).to_f64_lossy();
    if diff >= 0.0 {
        1.0 / (1.0 + (-diff).exp())
    } else {
        let e = diff.exp();
        e / (1.0 + e)
    }
}

// ── Training loop ────────────────────────────────────────────────────

/// Per-epoch record of the running losses and training accuracy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub ce: f64,
    pub pmc: f64,
    pub train_acc: f64,
}

/// History as CSV: `epoch,ce,pmc,acc` with one row per epoch.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,ce,pmc,acc\n");
    for h in history {
        out.push_str(&format!("{},{},{},{}\n", h.epoch, h.ce, h.pmc, h.train_acc));
    }
    out
}

/// Mini-batch training of the full objective. Deterministic under
/// `config.seed`: parameter init and the per-epoch shuffle schedule are
/// both derived from it.
pub fn train<T: Scalar>(
    dataset: &Dataset<T>,
    bank: Option<&SemanticPriorBank<T>>,
    prior: Option<&PriorInteraction<T>>,
    config: &TrainConfig,
) -> Result<(ModelState<T>, Vec<EpochStats>)> {
    config.validate()?;
    let counts = dataset.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(KdError::validation(format!(
            "training data must contain both classes (got {} control, {} patient)",
            counts[0], counts[1]
        )));
    }
    if config.beta > 0.0 && prior.is_none() {
        return Err(KdError::validation(
            "beta > 0 requires a prior interaction matrix",
        ));
    }
    if let Some(p) = prior {
        p.check_alignment(&dataset.partition)?;
    }
    let mut state = ModelState::init(&dataset.partition, dataset.n_channels, bank, config)?;
    let names = state.params.names();
    let hyper = AdamHyper {
        lr: T::from_f64_lossy(config.learning_rate),
        beta1: T::from_f64_lossy(config.adam_beta1),
        beta2: T::from_f64_lossy(config.adam_beta2),
        epsilon: T::from_f64_lossy(config.adam_epsilon),
    };

    let blocks: Vec<Vec<Vec<Tensor<T>>>> = dataset
        .samples
        .iter()
        .map(|s| sample_blocks(s, &dataset.partition))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = dataset.samples.iter().map(|s| s.label).collect();
    let n = dataset.len();

    // Stream 1 of the seed drives the shuffle schedule; stream 0 was used
    // for parameter init.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);

        let mut ce_sum = 0.0;
        let mut pmc_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let ids = register_model(&mut tape, &state.params);
            let bank_id = state.bank.as_ref().map(|b| tape.leaf(b.vectors.clone()));
            let batch_blocks: Vec<&Vec<Vec<Tensor<T>>>> =
                chunk.iter().map(|&i| &blocks[i]).collect();
            let batch_labels: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let (total, ce_mean, stacks) = build_batch_objective(
                &mut tape,
                &ids,
                &state.params,
                &batch_blocks,
                &batch_labels,
                bank_id,
                prior,
                config,
            )?;
            ce_sum += tape.value(ce_mean).item().to_f64_lossy() * chunk.len() as f64;
            if let Some(p) = prior {
                // Diagnostic KL, reported even when beta = 0.
                for stack in &stacks {
                    let trace = stack.trace(&tape);
                    pmc_sum += pmc_loss(&trace, p, config.pmc_orders)?.to_f64_lossy();
                }
            }

            let grads = tape.backward(total)?;
            let canonical = ids.canonical();
            let grad_tensors: Vec<Tensor<T>> = canonical
                .iter()
                .zip(state.params.tensors())
                .map(|(&id, t)| grads.wrt_or_zeros(id, t))
                .collect();

            state.step += 1;
            let mut tensor_refs = state.params.tensors_mut();
            adam_step(
                &mut tensor_refs,
                &mut state.adam_m,
                &mut state.adam_v,
                &grad_tensors,
                &names,
                state.step,
                &hyper,
            )?;
        }

        let mut correct = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            let (logits, _) =
                forward_values_from_blocks(&state.params, state.bank.as_ref(), &blocks[i])?;
            if predict(&logits) == label {
                correct += 1;
            }
        }
        history.push(EpochStats {
            epoch,
            ce: ce_sum / n as f64,
            pmc: if prior.is_some() {
                pmc_sum / n as f64
            } else {
                0.0
            },
            train_acc: correct as f64 / n as f64,
        });
    }
    Ok((state, history))
}

// ── Full-objective gradient check ────────────────────────────────────

/// Random row-stochastic matrix (normalized positive uniforms).
fn random_stochastic<T: Scalar>(t: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    use rand::Rng;
    let rows: Vec<Vec<T>> = (0..t)
        .map(|_| {
            let raw: Vec<f64> = (0..t).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter()
                .map(|v| T::from_f64_lossy(v / sum))
                .collect()
        })
        .collect();
    Tensor::from_rows(&rows).expect("positive dims")
}

/// Verify every parameter's analytic gradient of the full objective
/// (cross-entropy plus β-weighted prior KL, prior injection on) against
/// central finite differences, on a seeded random instance: 12 regions in
/// three subnetworks of 4, d = 8, C_out = 4, h = 8, q = 2, β = 0.5,
/// λ_sp = 1, one sample of each class.
pub fn full_loss_grad_check(
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<crate::diffcore::GradCheckReport> {
    use crate::synthgen::{generate, SynthMode, SynthSpec};

    if step.is_nan() || step <= 0.0 {
        return Err(KdError::validation("finite-difference step must be > 0"));
    }
    let spec = SynthSpec {
        n_regions: 12,
        subnetwork_sizes: vec![4, 4, 4],
        samples_per_class: 1,
        mode: SynthMode::MeanShift,
        effect_size: 1.0,
        noise_scale: 1.0,
        seed,
    };
    let dataset: Dataset<f64> = generate(&spec)?;
    let config = TrainConfig {
        q: 2,
        lambda_sp: 1.0,
        beta: 0.5,
        embed_dim: 8,
        classifier_hidden: 8,
        c_out: 4,
        fuse_hidden: 8,
        seed,
        ..TrainConfig::default()
    };
    let bank: SemanticPriorBank<f64> = SemanticPriorBank::seeded_random(
        dataset.partition.names(),
        config.embed_dim,
        "gradcheck",
        seed.wrapping_add(1),
    );
    let mut prior_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let prior = PriorInteraction::new(
        dataset.partition.names().to_vec(),
        random_stochastic(dataset.partition.n_subnetworks(), &mut prior_rng),
    )?;

    let state = ModelState::init(&dataset.partition, dataset.n_channels, Some(&bank), &config)?;
    let blocks: Vec<Vec<Vec<Tensor<f64>>>> = dataset
        .samples
        .iter()
        .map(|s| sample_blocks(s, &dataset.partition))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = dataset.samples.iter().map(|s| s.label).collect();

    let named: Vec<(String, Tensor<f64>)> = state
        .params
        .names()
        .into_iter()
        .zip(state.params.tensors().into_iter().cloned())
        .collect();
    let n_subnetworks = dataset.partition.n_subnetworks();
    let n_channels = dataset.n_channels;
    let params_meta = state.params.clone();
    let bank_vectors = bank.vectors.clone();

    let loss_fn = move |tape: &mut Tape<f64>, ids: &[ValueId]| -> Result<ValueId> {
        let model_ids = ModelParamIds::from_canonical(ids, n_subnetworks, n_channels)?;
        let bank_id = Some(tape.leaf(bank_vectors.clone()));
        let batch_blocks: Vec<&Vec<Vec<Tensor<f64>>>> = blocks.iter().collect();
        let (total, _, _) = build_batch_objective(
            tape,
            &model_ids,
            &params_meta,
            &batch_blocks,
            &labels,
            bank_id,
            Some(&prior),
            &config,
        )?;
        Ok(total)
    };
    crate::diffcore::grad_check(&named, &loss_fn, step, tolerance)
}

// ── Evaluation ───────────────────────────────────────────────────────

/// One evaluated sample: the model's patient-probability score and the
/// predicted class.
#[derive(Clone, Debug, Serialize)]
pub struct SampleScore {
    pub id: String,
    pub label: u8,
    pub score: f64,
    pub predicted: u8,
}

/// Evaluation metrics plus class-conditional mean attention.
#[derive(Clone, Debug)]
pub struct EvalReport<T> {
    pub acc: f64,
    /// `None` when the dataset holds a single class.
    pub auc: Option<f64>,
    pub n: usize,
    pub class_counts: [usize; 2],
    pub scores: Vec<SampleScore>,
    /// Per class (0 = control, 1 = patient): mean coefficient matrix per
    /// order, `None` if the class is absent.
    pub mean_alphas: [Option<Vec<Tensor<T>>>; 2],
}

/// Rank-based AUC with ties counted one half. `None` if either class is
/// absent.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // Tie groups share the average of their 1-based ranks.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Evaluate a trained model: accuracy, AUC, per-sample scores, and
/// class-conditional mean attention matrices.
pub fn evaluate<T: Scalar>(state: &ModelState<T>, dataset: &Dataset<T>) -> Result<EvalReport<T>> {
    state.validate_dataset(dataset)?;
    if dataset.is_empty() {
        return Err(KdError::validation("evaluation dataset is empty"));
    }
    let mut scores = Vec::with_capacity(dataset.len());
    let mut alpha_sums: [Option<Vec<Tensor<T>>>; 2] = [None, None];
    let mut counts = [0usize; 2];
    let mut correct = 0usize;

    for sample in &dataset.samples {
        let (logits, trace) = state.forward_sample_values(sample)?;
        let predicted = predict(&logits);
        if predicted == sample.label {
            correct += 1;
        }
        scores.push(SampleScore {
            id: sample.id.clone(),
            label: sample.label,
            score: patient_score(&logits),
            predicted,
        });
        let class = sample.label as usize;
        counts[class] += 1;
        match &mut alpha_sums[class] {
            None => alpha_sums[class] = Some(trace.alphas),
            Some(sums) => {
                for (sum, alpha) in sums.iter_mut().zip(&trace.alphas) {
                    sum.add_assign(alpha);
                }
            }
        }
    }

    let mean_alphas = {
        let mut out: [Option<Vec<Tensor<T>>>; 2] = [None, None];
        for class in 0..2 {
            if let Some(sums) = &alpha_sums[class] {
                let inv = T::one() / T::from_f64_lossy(counts[class] as f64);
                out[class] = Some(sums.iter().map(|s| s.scale(inv)).collect());
            }
        }
        out
    };

    let score_values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let label_values: Vec<u8> = scores.iter().map(|s| s.label).collect();
    Ok(EvalReport {
        acc: correct as f64 / dataset.len() as f64,
        auc: auc(&score_values, &label_values),
        n: dataset.len(),
        class_counts: counts,
        scores,
        mean_alphas,
    })
}
