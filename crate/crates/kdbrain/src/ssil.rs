//! Subnetwork semantic interaction learning.
//!
//! Subnetwork embeddings attend to each other for q stacked orders. The
//! disorder-specific semantic prior H_sp enters the query side only,
//! scaled by lambda_sp; keys are computed from the embeddings alone.
//! Attention coefficients are softmax-normalized per source subnetwork,
//! the representation update is the coefficient-weighted mix of the
//! previous embeddings, and the final stack output feeds a small MLP
//! classification head.

use crate::diffcore::{Tape, Tensor, ValueId};
use crate::error::{KdError, Result};
use crate::graphdata::Partition;
use crate::scalar::Scalar;
use crate::LEAKY_SLOPE;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// Fixed per-subnetwork prior embeddings, aligned to a partition's
/// subnetwork order.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticPriorBank<T> {
    pub disorder: String,
    pub names: Vec<String>,
    /// |T|×d, row k belonging to `names[k]`.
    pub vectors: Tensor<T>,
}

#[derive(Serialize, Deserialize)]
struct BankFile {
    disorder: String,
    dim: usize,
    subnetworks: serde_json::Map<String, serde_json::Value>,
}

/// Human-readable difference of two name sets, for mismatch errors.
pub(crate) fn name_set_diff(expected: &[String], found: &[String]) -> String {
    let exp: BTreeSet<&String> = expected.iter().collect();
    let got: BTreeSet<&String> = found.iter().collect();
    let missing: Vec<&str> = exp.difference(&got).map(|s| s.as_str()).collect();
    let extra: Vec<&str> = got.difference(&exp).map(|s| s.as_str()).collect();
    format!(
        "expected {{{}}}, found {{{}}}; missing: [{}], unexpected: [{}]",
        expected.join(", "),
        found.join(", "),
        missing.join(", "),
        extra.join(", ")
    )
}

impl<T: Scalar> SemanticPriorBank<T> {
    /// Load a bank file and align its rows to the partition's subnetwork
    /// order. The file's name set must equal the partition's and every
    /// vector must have length `embed_dim`.
    pub fn load(path: &Path, partition: &Partition, embed_dim: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KdError::io(path, e))?;
        let file: BankFile =
            serde_json::from_str(&text).map_err(|e| KdError::parse(path, e.to_string()))?;
        if file.dim != embed_dim {
            return Err(KdError::validation(format!(
                "semantic prior bank dimension {} does not match model embedding dimension {}",
                file.dim, embed_dim
            )));
        }
        let found: Vec<String> = file.subnetworks.keys().cloned().collect();
        let expected = partition.names().to_vec();
        if found.len() != expected.len()
            || !expected.iter().all(|n| file.subnetworks.contains_key(n))
        {
            return Err(KdError::validation(format!(
                "semantic prior bank subnetworks do not match partition: {}",
                name_set_diff(&expected, &found)
            )));
        }
        let mut rows = Vec::with_capacity(expected.len());
        for name in &expected {
            let arr = file.subnetworks[name].as_array().ok_or_else(|| {
                KdError::parse(path, format!("subnetwork '{name}' must map to an array"))
            })?;
            if arr.len() != embed_dim {
                return Err(KdError::validation(format!(
                    "subnetwork '{name}': {} values, expected {embed_dim}",
                    arr.len()
                )));
            }
            let mut row = Vec::with_capacity(embed_dim);
            for v in arr {
                let x = v.as_f64().ok_or_else(|| {
                    KdError::parse(path, format!("subnetwork '{name}': non-numeric entry"))
                })?;
                if !x.is_finite() {
                    return Err(KdError::NonFinite(format!(
                        "semantic prior for '{name}' contains {x}"
                    )));
                }
                row.push(T::from_f64_lossy(x));
            }
            rows.push(row);
        }
        Ok(SemanticPriorBank {
            disorder: file.disorder,
            names: expected,
            vectors: Tensor::from_rows(&rows)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut map = serde_json::Map::new();
        for (k, name) in self.names.iter().enumerate() {
            let row: Vec<serde_json::Value> = self
                .vectors
                .row_slice(k)
                .iter()
                .map(|v| serde_json::json!(v.to_f64_lossy()))
                .collect();
            map.insert(name.clone(), serde_json::Value::Array(row));
        }
        let file = BankFile {
            disorder: self.disorder.clone(),
            dim: self.vectors.cols(),
            subnetworks: map,
        };
        let mut text =
            serde_json::to_string_pretty(&file).map_err(|e| KdError::parse(path, e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| KdError::io(path, e))
    }

    /// Seeded unit-scale Gaussian bank, for synthetic experiments and tests.
    pub fn seeded_random(names: &[String], embed_dim: usize, disorder: &str, seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<T>> = names
            .iter()
            .map(|_| {
                (0..embed_dim)
                    .map(|_| T::from_f64_lossy(normal.sample(&mut rng)))
                    .collect()
            })
            .collect();
        SemanticPriorBank {
            disorder: disorder.to_string(),
            names: names.to_vec(),
            vectors: Tensor::from_rows(&rows).expect("positive dims"),
        }
    }
}

/// Learnable attention projections, the injection strength, the stack
/// depth, and the classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub lambda_sp: T,
    pub q_orders: usize,
    pub clf_w1: Tensor<T>,
    pub clf_b1: Tensor<T>,
    pub clf_w2: Tensor<T>,
    pub clf_b2: Tensor<T>,
}

impl<T: Scalar> AttentionParams<T> {
    /// Seeded init; draw order: w_q, w_k, clf_w1, clf_b1, clf_w2, clf_b2.
    pub fn init(
        n_subnetworks: usize,
        embed_dim: usize,
        classifier_hidden: usize,
        lambda_sp: f64,
        q_orders: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let uniform = |rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<T> = (0..rows * cols)
                .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
                .collect();
            Tensor::from_vec(rows, cols, data).expect("positive dims")
        };
        let flat = n_subnetworks * embed_dim;
        AttentionParams {
            w_q: uniform(rng, embed_dim, embed_dim, embed_dim),
            w_k: uniform(rng, embed_dim, embed_dim, embed_dim),
            lambda_sp: T::from_f64_lossy(lambda_sp),
            q_orders,
            clf_w1: uniform(rng, flat, classifier_hidden, flat),
            clf_b1: uniform(rng, 1, classifier_hidden, flat),
            clf_w2: uniform(rng, classifier_hidden, 2, classifier_hidden),
            clf_b2: uniform(rng, 1, 2, classifier_hidden),
        }
    }

    pub fn validate(&self, n_subnetworks: usize) -> Result<()> {
        if self.q_orders == 0 {
            return Err(KdError::validation("interaction order q must be >= 1"));
        }
        if self.lambda_sp < T::zero() {
            return Err(KdError::validation("lambda_sp must be >= 0"));
        }
        let d = self.w_q.rows();
        if self.w_q.shape() != (d, d) || self.w_k.shape() != (d, d) {
            return Err(KdError::ShapeMismatch {
                op: "attention projections",
                lhs: self.w_q.shape_string(),
                rhs: self.w_k.shape_string(),
            });
        }
        if self.clf_w1.rows() != n_subnetworks * d {
            return Err(KdError::ShapeMismatch {
                op: "classifier input",
                lhs: self.clf_w1.shape_string(),
                rhs: format!("{}x*", n_subnetworks * d),
            });
        }
        if self.clf_w2.rows() != self.clf_w1.cols() || self.clf_w2.cols() != 2 {
            return Err(KdError::ShapeMismatch {
                op: "classifier output",
                lhs: self.clf_w2.shape_string(),
                rhs: format!("{}x2", self.clf_w1.cols()),
            });
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        self.w_q.rows()
    }
}

/// Tape handles for attention parameters.
pub struct AttentionParamIds {
    pub w_q: ValueId,
    pub w_k: ValueId,
    pub clf_w1: ValueId,
    pub clf_b1: ValueId,
    pub clf_w2: ValueId,
    pub clf_b2: ValueId,
}

/// Register attention tensors as tape leaves, in init draw order.
pub fn register_attention<T: Scalar>(
    tape: &mut Tape<T>,
    params: &AttentionParams<T>,
) -> AttentionParamIds {
    AttentionParamIds {
        w_q: tape.leaf(params.w_q.clone()),
        w_k: tape.leaf(params.w_k.clone()),
        clf_w1: tape.leaf(params.clf_w1.clone()),
        clf_b1: tape.leaf(params.clf_b1.clone()),
        clf_w2: tape.leaf(params.clf_w2.clone()),
        clf_b2: tape.leaf(params.clf_b2.clone()),
    }
}

/// Query/key projection. The prior enters queries only: Q = (Z + λ·H_sp)·W_Q,
/// K = Z·W_K. `scaled_prior` is the already-scaled λ·H_sp leaf (None skips
/// injection entirely, the λ = 0 code path).
pub fn inject_query<T: Scalar>(
    tape: &mut Tape<T>,
    z_prev: ValueId,
    scaled_prior: Option<ValueId>,
    ids: &AttentionParamIds,
) -> Result<(ValueId, ValueId)> {
    let query_input = match scaled_prior {
        Some(prior) => tape.add(z_prev, prior)?,
        None => z_prev,
    };
    let q = tape.matmul(query_input, ids.w_q)?;
    let k = tape.matmul(z_prev, ids.w_k)?;
    Ok((q, k))
}

/// Row-stochastic interaction coefficients: softmax over targets of
/// Q·Kᵀ/√d.
pub fn interaction_coefficients<T: Scalar>(
    tape: &mut Tape<T>,
    q: ValueId,
    k: ValueId,
) -> Result<ValueId> {
    let d = tape.value(q).cols();
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, T::one() / T::from_f64_lossy((d as f64).sqrt()));
    Ok(tape.softmax_rows(scaled))
}

/// Coefficient-weighted mix of the previous embeddings: Z_next = α·Z_prev.
/// The softmax row already covers the self term.
pub fn update_representations<T: Scalar>(
    tape: &mut Tape<T>,
    alpha: ValueId,
    z_prev: ValueId,
) -> Result<ValueId> {
    tape.matmul(alpha, z_prev)
}

/// Tape handles produced by [`run_stack`].
pub struct StackOutput {
    /// One |T|×|T| coefficient matrix per order, l = 1..q.
    pub alpha_ids: Vec<ValueId>,
    /// Final |T|×d embedding Ẑ.
    pub z_final: ValueId,
}

/// Per-sample attention record: coefficient matrices for every order plus
/// the final embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace<T> {
    pub alphas: Vec<Tensor<T>>,
    pub z_hat: Tensor<T>,
}

impl StackOutput {
    pub fn trace<T: Scalar>(&self, tape: &Tape<T>) -> AttentionTrace<T> {
        AttentionTrace {
            alphas: self
                .alpha_ids
                .iter()
                .map(|&id| tape.value(id).clone())
                .collect(),
            z_hat: tape.value(self.z_final).clone(),
        }
    }
}

/// Run q attention orders with weight-tied projections and the same prior
/// injection at every order.
pub fn run_stack<T: Scalar>(
    tape: &mut Tape<T>,
    z0: ValueId,
    prior_bank_id: Option<ValueId>,
    params: &AttentionParams<T>,
    ids: &AttentionParamIds,
) -> Result<StackOutput> {
    if params.q_orders == 0 {
        return Err(KdError::validation("interaction order q must be >= 1"));
    }
    let scaled_prior = if params.lambda_sp == T::zero() {
        None
    } else {
        let bank = prior_bank_id
            .ok_or_else(|| KdError::validation("lambda_sp > 0 requires a semantic prior bank"))?;
        Some(tape.scale(bank, params.lambda_sp))
    };
    let mut z = z0;
    let mut alpha_ids = Vec::with_capacity(params.q_orders);
    for _ in 0..params.q_orders {
        let (q, k) = inject_query(tape, z, scaled_prior, ids)?;
        let alpha = interaction_coefficients(tape, q, k)?;
        z = update_representations(tape, alpha, z)?;
        alpha_ids.push(alpha);
    }
    Ok(StackOutput {
        alpha_ids,
        z_final: z,
    })
}

/// MLP head: flatten Ẑ row-major, one LeakyReLU hidden layer, two logits.
pub fn classify<T: Scalar>(
    tape: &mut Tape<T>,
    z_hat: ValueId,
    ids: &AttentionParamIds,
) -> Result<ValueId> {
    let (rows, cols) = tape.value(z_hat).shape();
    let flat = tape.reshape(z_hat, 1, rows * cols)?;
    let pre_hidden = tape.matmul(flat, ids.clf_w1)?;
    let hidden = tape.add(pre_hidden, ids.clf_b1)?;
    let activated = tape.leaky_relu(hidden, T::from_f64_lossy(LEAKY_SLOPE));
    let pre_logits = tape.matmul(activated, ids.clf_w2)?;
    tape.add(pre_logits, ids.clf_b2)
}
