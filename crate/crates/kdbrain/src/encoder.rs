//! Subnetwork topology encoder.
//!
//! Each subnetwork's connectivity block is passed through per-subnetwork
//! row and column convolutions (summed over input channels), then the
//! fused features are activated, mean-pooled over the subnetwork's regions,
//! and projected into the shared embedding space. Output: one d-dimensional
//! embedding per subnetwork, stacked |T|×d.

use crate::diffcore::{Tape, Tensor, ValueId};
use crate::error::{KdError, Result};
use crate::scalar::Scalar;
use crate::LEAKY_SLOPE;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Learnable encoder weights.
///
/// Row/column kernels are per subnetwork and channel with shape N_k×C_out;
/// the fuse (C_out×h) and projection (h×d) matrices are shared across
/// subnetworks.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub w_row: Vec<Vec<Tensor<T>>>,
    pub w_col: Vec<Vec<Tensor<T>>>,
    pub w_fuse: Tensor<T>,
    pub w_proj: Tensor<T>,
}

fn uniform_init<T: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<T> = (0..rows * cols)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("positive dims")
}

impl<T: Scalar> EncoderParams<T> {
    /// Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
    /// Draw order is fixed: w_row[k][c], w_col[k][c], w_fuse, w_proj.
    pub fn init(
        subnetwork_sizes: &[usize],
        n_channels: usize,
        c_out: usize,
        fuse_hidden: usize,
        embed_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let kernels = |rng: &mut ChaCha8Rng| {
            subnetwork_sizes
                .iter()
                .map(|&nk| {
                    (0..n_channels)
                        .map(|_| uniform_init(rng, nk, c_out, nk))
                        .collect()
                })
                .collect()
        };
        let w_row = kernels(rng);
        let w_col = kernels(rng);
        let w_fuse = uniform_init(rng, c_out, fuse_hidden, c_out);
        let w_proj = uniform_init(rng, fuse_hidden, embed_dim, fuse_hidden);
        EncoderParams {
            w_row,
            w_col,
            w_fuse,
            w_proj,
        }
    }

    pub fn n_subnetworks(&self) -> usize {
        self.w_row.len()
    }

    pub fn validate(&self, subnetwork_sizes: &[usize], n_channels: usize) -> Result<()> {
        if self.w_row.len() != subnetwork_sizes.len() || self.w_col.len() != subnetwork_sizes.len()
        {
            return Err(KdError::validation(format!(
                "encoder kernels cover {} subnetworks, partition has {}",
                self.w_row.len(),
                subnetwork_sizes.len()
            )));
        }
        for (k, &nk) in subnetwork_sizes.iter().enumerate() {
            for bank in [&self.w_row, &self.w_col] {
                if bank[k].len() != n_channels {
                    return Err(KdError::validation(format!(
                        "subnetwork {k}: {} channel kernels, expected {n_channels}",
                        bank[k].len()
                    )));
                }
                for t in &bank[k] {
                    if t.rows() != nk {
                        return Err(KdError::ShapeMismatch {
                            op: "encoder kernel",
                            lhs: t.shape_string(),
                            rhs: format!("{nk}x{}", t.cols()),
                        });
                    }
                    if !t.is_finite() {
                        return Err(KdError::NonFinite(format!("encoder kernel {k}")));
                    }
                }
            }
        }
        if self.w_fuse.rows() != self.w_row[0][0].cols() {
            return Err(KdError::ShapeMismatch {
                op: "encoder fuse",
                lhs: self.w_fuse.shape_string(),
                rhs: format!("{}x*", self.w_row[0][0].cols()),
            });
        }
        if self.w_proj.rows() != self.w_fuse.cols() {
            return Err(KdError::ShapeMismatch {
                op: "encoder projection",
                lhs: self.w_proj.shape_string(),
                rhs: format!("{}x*", self.w_fuse.cols()),
            });
        }
        Ok(())
    }
}

/// Tape handles for encoder parameters, registered in canonical order.
pub struct EncoderParamIds {
    pub w_row: Vec<Vec<ValueId>>,
    pub w_col: Vec<Vec<ValueId>>,
    pub w_fuse: ValueId,
    pub w_proj: ValueId,
}

/// Put every encoder tensor on the tape as a leaf. Order matches
/// [`EncoderParams::init`]'s draw order.
pub fn register_encoder<T: Scalar>(
    tape: &mut Tape<T>,
    params: &EncoderParams<T>,
) -> EncoderParamIds {
    let register_bank = |tape: &mut Tape<T>, bank: &Vec<Vec<Tensor<T>>>| {
        bank.iter()
            .map(|per_k| per_k.iter().map(|t| tape.leaf(t.clone())).collect())
            .collect()
    };
    let w_row = register_bank(tape, &params.w_row);
    let w_col = register_bank(tape, &params.w_col);
    let w_fuse = tape.leaf(params.w_fuse.clone());
    let w_proj = tape.leaf(params.w_proj.clone());
    EncoderParamIds {
        w_row,
        w_col,
        w_fuse,
        w_proj,
    }
}

/// H_k: sum over channels of A_k·W_row + A_kᵀ·W_col, yielding N_k×C_out.
pub fn bidirectional_features<T: Scalar>(
    tape: &mut Tape<T>,
    block_ids: &[ValueId],
    ids: &EncoderParamIds,
    k: usize,
) -> Result<ValueId> {
    let mut acc: Option<ValueId> = None;
    for (c, &a_kc) in block_ids.iter().enumerate() {
        let forward = tape.matmul(a_kc, ids.w_row[k][c])?;
        let transposed = tape.transpose(a_kc);
        let backward = tape.matmul(transposed, ids.w_col[k][c])?;
        let channel = tape.add(forward, backward)?;
        acc = Some(match acc {
            None => channel,
            Some(prev) => tape.add(prev, channel)?,
        });
    }
    acc.ok_or_else(|| KdError::validation("connectome has no channels"))
}

/// Z_k: mean-pool LeakyReLU(H_k·W_fuse) over regions, then project to 1×d.
pub fn fuse_project<T: Scalar>(
    tape: &mut Tape<T>,
    h_k: ValueId,
    ids: &EncoderParamIds,
) -> Result<ValueId> {
    let fused = tape.matmul(h_k, ids.w_fuse)?;
    let activated = tape.leaky_relu(fused, T::from_f64_lossy(LEAKY_SLOPE));
    let pooled = tape.mean_rows(activated)?;
    tape.matmul(pooled, ids.w_proj)
}

/// Encode every subnetwork block and stack the embeddings into |T|×d.
/// `block_ids[k][c]` holds the tape leaf of subnetwork k's channel-c block.
pub fn encode_all<T: Scalar>(
    tape: &mut Tape<T>,
    block_ids: &[Vec<ValueId>],
    ids: &EncoderParamIds,
) -> Result<ValueId> {
    let mut rows = Vec::with_capacity(block_ids.len());
    for (k, blocks) in block_ids.iter().enumerate() {
        let h_k = bidirectional_features(tape, blocks, ids, k)?;
        rows.push(fuse_project(tape, h_k, ids)?);
    }
    tape.concat_rows(&rows)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // oracle re-implementations index on purpose
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    fn single_kernel_params(w_row: Tensor<f64>, w_col: Tensor<f64>) -> EncoderParams<f64> {
        EncoderParams {
            w_row: vec![vec![w_row]],
            w_col: vec![vec![w_col]],
            w_fuse: Tensor::scalar(1.0),
            w_proj: Tensor::scalar(1.0),
        }
    }

    #[test]
    fn bidirectional_hand_case() {
        // A = [[0,1],[1,0]], W_row = [1,1]ᵀ, W_col = [1,-1]ᵀ → H = [0,2]ᵀ.
        let params = single_kernel_params(
            tensor(&[vec![1.0], vec![1.0]]),
            tensor(&[vec![1.0], vec![-1.0]]),
        );
        let mut tape = Tape::new();
        let ids = register_encoder(&mut tape, &params);
        let a = tape.leaf(tensor(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
        let h = bidirectional_features(&mut tape, &[a], &ids, 0).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0, 2.0]);
    }

    #[test]
    fn zero_block_gives_zero_features() {
        let params = single_kernel_params(
            tensor(&[vec![1.0], vec![2.0]]),
            tensor(&[vec![3.0], vec![4.0]]),
        );
        let mut tape = Tape::new();
        let ids = register_encoder(&mut tape, &params);
        let a = tape.leaf(Tensor::zeros(2, 2));
        let h = bidirectional_features(&mut tape, &[a], &ids, 0).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_block_with_tied_kernels_collapses() {
        // Symmetric A with W_col = W_row gives H = 2·A·W_row.
        let w = tensor(&[vec![0.5], vec![-1.5]]);
        let params = single_kernel_params(w.clone(), w.clone());
        let mut tape = Tape::new();
        let ids = register_encoder(&mut tape, &params);
        let a_val = tensor(&[vec![0.0, 2.0], vec![2.0, 0.0]]);
        let a = tape.leaf(a_val.clone());
        let h = bidirectional_features(&mut tape, &[a], &ids, 0).unwrap();
        let expected = a_val.matmul(&w).unwrap().scale(2.0);
        assert_eq!(tape.value(h), &expected);
    }

    #[test]
    fn kernel_size_mismatch_is_a_shape_error() {
        let params = single_kernel_params(
            tensor(&[vec![1.0], vec![1.0], vec![1.0]]), // 3 rows for a 2-region block
            tensor(&[vec![1.0], vec![1.0], vec![1.0]]),
        );
        let mut tape = Tape::new();
        let ids = register_encoder(&mut tape, &params);
        let a = tape.leaf(Tensor::zeros(2, 2));
        assert!(bidirectional_features(&mut tape, &[a], &ids, 0).is_err());
    }

    #[test]
    fn fuse_project_zero_propagates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = EncoderParams::<f64>::init(&[4], 1, 3, 5, 6, &mut rng);
        let mut tape = Tape::new();
        let ids = register_encoder(&mut tape, &params);
        let h = tape.leaf(Tensor::zeros(4, 3));
        let z = fuse_project(&mut tape, h, &ids).unwrap();
        assert_eq!(tape.value(z).shape(), (1, 6));
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_project_matches_straight_line_oracle() {
        // Independent re-implementation with raw loops, no Tensor methods.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (nk, c_out, h_dim, d) = (5, 3, 4, 6);
        let params = EncoderParams::<f64>::init(&[nk], 1, c_out, h_dim, d, &mut rng);
        let h_vals: Vec<Vec<f64>> = (0..nk)
            .map(|_| (0..c_out).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();

        let mut tape = Tape::new();
        let ids = register_encoder(&mut tape, &params);
        let h_leaf = tape.leaf(Tensor::from_rows(&h_vals).unwrap());
        let z = fuse_project(&mut tape, h_leaf, &ids).unwrap();

        // fused[i][j] = sum_c h[i][c] * w_fuse[c][j]; activate; column mean; project.
        let mut activated = vec![vec![0.0; h_dim]; nk];
        for i in 0..nk {
            for j in 0..h_dim {
                let mut s = 0.0;
                for c in 0..c_out {
                    s += h_vals[i][c] * params.w_fuse.get(c, j);
                }
                activated[i][j] = if s >= 0.0 { s } else { 0.2 * s };
            }
        }
        let mut pooled = vec![0.0; h_dim];
        for (j, slot) in pooled.iter_mut().enumerate() {
            for row in &activated {
                *slot += row[j];
            }
            *slot /= nk as f64;
        }
        for j in 0..d {
            let mut expected = 0.0;
            for (c, &p) in pooled.iter().enumerate() {
                expected += p * params.w_proj.get(c, j);
            }
            assert!(
                (tape.value(z).get(0, j) - expected).abs() < 1e-12,
                "column {j}"
            );
        }
    }

    #[test]
    fn encode_all_output_shape_and_zero_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sizes = [3, 4, 2];
        let params = EncoderParams::<f64>::init(&sizes, 1, 4, 5, 8, &mut rng);
        let mut tape = Tape::new();
        let ids = register_encoder(&mut tape, &params);
        let blocks: Vec<Vec<ValueId>> = sizes
            .iter()
            .map(|&nk| vec![tape.leaf(Tensor::zeros(nk, nk))])
            .collect();
        let z = encode_all(&mut tape, &blocks, &ids).unwrap();
        assert_eq!(tape.value(z).shape(), (3, 8));
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn joint_region_and_kernel_permutation_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let nk = 5;
        let params = EncoderParams::<f64>::init(&[nk], 1, 3, 4, 6, &mut rng);
        let mut block = Tensor::<f64>::zeros(nk, nk);
        for i in 0..nk {
            for j in 0..nk {
                if i != j {
                    block.set(i, j, rng.gen_range(-1.0..1.0));
                }
            }
        }
        let perm = [2usize, 0, 4, 1, 3];

        let encode = |block: &Tensor<f64>, params: &EncoderParams<f64>| {
            let mut tape = Tape::new();
            let ids = register_encoder(&mut tape, params);
            let a = tape.leaf(block.clone());
            let z = encode_all(&mut tape, &[vec![a]], &ids).unwrap();
            tape.value(z).clone()
        };

        let base = encode(&block, &params);

        let mut permuted_block = Tensor::<f64>::zeros(nk, nk);
        for i in 0..nk {
            for j in 0..nk {
                permuted_block.set(i, j, block.get(perm[i], perm[j]));
            }
        }
        let mut permuted_params = params.clone();
        let mut w_row = params.w_row[0][0].zeros_like();
        let mut w_col = params.w_col[0][0].zeros_like();
        for i in 0..nk {
            for c in 0..3 {
                w_row.set(i, c, params.w_row[0][0].get(perm[i], c));
                w_col.set(i, c, params.w_col[0][0].get(perm[i], c));
            }
        }
        permuted_params.w_row[0][0] = w_row;
        permuted_params.w_col[0][0] = w_col;
        let permuted = encode(&permuted_block, &permuted_params);

        for (a, b) in base.data().iter().zip(permuted.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
