//! Synthetic labeled connectome datasets with planted class signal.
//!
//! Two plant modes: `MeanShift` raises every within-DMN edge of class-1
//! samples by a fixed offset (solvable from one subnetwork alone), while
//! `CoupledBlocks` adds a shared per-sample latent to the DMN and CEN
//! blocks so the class signal lives only in their co-variation — a
//! classifier must combine both subnetworks' embeddings to find it.

use crate::diffcore::Tensor;
use crate::error::{KdError, Result};
use crate::graphdata::{Connectome, Dataset, Partition};
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// How the class-1 signal is planted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    MeanShift,
    CoupledBlocks,
}

/// Recipe for one synthetic dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_regions: usize,
    /// Region count per subnetwork; consecutive index blocks, named
    /// DMN, SN, CEN, then NET4, NET5, ... Regions beyond the total stay
    /// unassigned.
    pub subnetwork_sizes: Vec<usize>,
    pub samples_per_class: usize,
    pub mode: SynthMode,
    /// Effect size δ added to planted blocks.
    pub effect_size: f64,
    /// Standard deviation σ of the symmetric Gaussian edge noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_regions: 60,
            subnetwork_sizes: vec![12, 12, 12],
            samples_per_class: 100,
            mode: SynthMode::MeanShift,
            effect_size: 1.0,
            noise_scale: 1.0,
            seed: 42,
        }
    }
}

fn subnetwork_name(k: usize) -> String {
    match k {
        0 => "DMN".to_string(),
        1 => "SN".to_string(),
        2 => "CEN".to_string(),
        _ => format!("NET{}", k + 1),
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_regions == 0 {
            return Err(KdError::validation("n_regions must be positive"));
        }
        if self.subnetwork_sizes.is_empty() {
            return Err(KdError::validation("at least one subnetwork required"));
        }
        if self.subnetwork_sizes.iter().any(|&s| s < 2) {
            return Err(KdError::validation(
                "every subnetwork needs at least 2 regions",
            ));
        }
        let total: usize = self.subnetwork_sizes.iter().sum();
        if total > self.n_regions {
            return Err(KdError::validation(format!(
                "subnetwork sizes sum to {total}, exceeding {} regions",
                self.n_regions
            )));
        }
        if self.samples_per_class == 0 {
            return Err(KdError::validation("samples_per_class must be positive"));
        }
        if self.effect_size < 0.0 {
            return Err(KdError::validation(format!(
                "effect size must be >= 0, got {}",
                self.effect_size
            )));
        }
        if self.noise_scale.is_nan() || self.noise_scale <= 0.0 {
            return Err(KdError::validation(format!(
                "noise scale must be > 0, got {}",
                self.noise_scale
            )));
        }
        if self.mode == SynthMode::CoupledBlocks && self.subnetwork_sizes.len() < 3 {
            return Err(KdError::validation(
                "coupled_blocks plants into the DMN and CEN blocks; the partition needs at least 3 subnetworks (DMN, SN, CEN)",
            ));
        }
        Ok(())
    }

    pub fn partition(&self) -> Result<Partition> {
        let mut names = Vec::new();
        let mut lists = Vec::new();
        let mut next = 0;
        for (k, &size) in self.subnetwork_sizes.iter().enumerate() {
            names.push(subnetwork_name(k));
            lists.push((next..next + size).collect());
            next += size;
        }
        Partition::new(names, lists, self.n_regions, None)
    }
}

/// Generate the dataset described by `spec`. Deterministic: one seeded
/// stream, class-0 samples drawn first so their bytes do not depend on
/// the plant mode or effect size.
pub fn generate<T: Scalar>(spec: &SynthSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let partition = spec.partition()?;
    let dmn = partition.regions_of(0);
    let cen = if partition.n_subnetworks() > 2 {
        partition.regions_of(2)
    } else {
        Vec::new()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_scale).expect("validated sigma");
    let latent = Normal::new(0.0, 1.0).unwrap();
    let n = spec.n_regions;

    let mut samples = Vec::with_capacity(2 * spec.samples_per_class);
    for class in 0..2u8 {
        for s in 0..spec.samples_per_class {
            let mut matrix = vec![0.0_f64; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let v = noise.sample(&mut rng);
                    matrix[i * n + j] = v;
                    matrix[j * n + i] = v;
                }
            }
            if class == 1 && spec.effect_size != 0.0 {
                match spec.mode {
                    SynthMode::MeanShift => {
                        add_to_block(&mut matrix, n, &dmn, spec.effect_size);
                    }
                    SynthMode::CoupledBlocks => {
                        let u: f64 = latent.sample(&mut rng);
                        add_to_block(&mut matrix, n, &dmn, spec.effect_size * u);
                        add_to_block(&mut matrix, n, &cen, spec.effect_size * u);
                    }
                }
            } else if class == 1 && spec.mode == SynthMode::CoupledBlocks {
                // Keep the draw schedule independent of delta.
                let _: f64 = latent.sample(&mut rng);
            }
            let data: Vec<T> = matrix.into_iter().map(T::from_f64_lossy).collect();
            let name = if class == 0 { "control" } else { "patient" };
            samples.push(Connectome {
                id: format!("{name}_{s:04}"),
                label: class,
                channels: vec![Tensor::from_vec(n, n, data)?],
            });
        }
    }
    Ok(Dataset {
        partition,
        samples,
        n_regions: n,
        n_channels: 1,
    })
}

fn add_to_block(matrix: &mut [f64], n: usize, regions: &[usize], amount: f64) {
    for (a, &i) in regions.iter().enumerate() {
        for &j in regions.iter().skip(a + 1) {
            matrix[i * n + j] += amount;
            matrix[j * n + i] += amount;
        }
    }
}
