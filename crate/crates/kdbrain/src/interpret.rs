//! Interpretation of trained models: class-conditional mean attention,
//! functional pathway scores (products of per-order coefficients), and
//! gradient-based critical-region saliency.

use crate::diffcore::{Tape, Tensor};
use crate::error::{KdError, Result};
use crate::graphdata::Dataset;
use crate::scalar::Scalar;
use crate::train::{build_sample_forward, register_model, sample_blocks, ModelState};
use serde::Serialize;

/// Ordered subnetwork sequence k_0 → … → k_q with its joint interaction
/// probability.
#[derive(Clone, Debug, Serialize)]
pub struct Pathway {
    pub names: Vec<String>,
    pub score: f64,
}

impl Pathway {
    /// "DMN→CEN→CEN" rendering used in CSV output.
    pub fn label(&self) -> String {
        self.names.join("→")
    }

    pub fn start(&self) -> &str {
        &self.names[0]
    }
}

/// One region's saliency entry.
#[derive(Clone, Debug, Serialize)]
pub struct RegionSaliency {
    pub region: usize,
    pub name: String,
    /// `None` for regions outside every subnetwork (their score is 0).
    pub subnetwork: Option<String>,
    pub score: f64,
}

/// Regions ranked by saliency, descending; ties break on region index.
#[derive(Clone, Debug, Serialize)]
pub struct BiomarkerReport {
    pub regions: Vec<RegionSaliency>,
    /// How many correctly classified samples the mean is over.
    pub n_samples: usize,
}

/// Element-wise mean of per-sample coefficient matrices over the selected
/// class (`None` selects every sample). One matrix per order; rows stay
/// stochastic.
pub fn mean_trace<T: Scalar>(
    state: &ModelState<T>,
    dataset: &Dataset<T>,
    class_filter: Option<u8>,
) -> Result<Vec<Tensor<T>>> {
    state.validate_dataset(dataset)?;
    let mut sums: Option<Vec<Tensor<T>>> = None;
    let mut count = 0usize;
    for sample in &dataset.samples {
        if let Some(class) = class_filter {
            if sample.label != class {
                continue;
            }
        }
        let (_, trace) = state.forward_sample_values(sample)?;
        count += 1;
        match &mut sums {
            None => sums = Some(trace.alphas),
            Some(acc) => {
                for (sum, alpha) in acc.iter_mut().zip(&trace.alphas) {
                    sum.add_assign(alpha);
                }
            }
        }
    }
    let sums = sums.ok_or_else(|| {
        KdError::validation(match class_filter {
            Some(c) => format!("no samples with class {c} to average over"),
            None => "no samples to average over".to_string(),
        })
    })?;
    let inv = T::one() / T::from_f64_lossy(count as f64);
    Ok(sums.into_iter().map(|s| s.scale(inv)).collect())
}

/// Enumerate and score every |T|^q pathway continuation, for one start
/// subnetwork or all of them. Result is sorted by score descending with a
/// deterministic lexicographic tie-break.
pub fn pathway_scores<T: Scalar>(
    mean_alphas: &[Tensor<T>],
    names: &[String],
    start: Option<&str>,
) -> Result<Vec<Pathway>> {
    if mean_alphas.is_empty() {
        return Err(KdError::validation("no attention orders to score"));
    }
    let t = names.len();
    for alpha in mean_alphas {
        if alpha.shape() != (t, t) {
            return Err(KdError::ShapeMismatch {
                op: "pathway_scores",
                lhs: alpha.shape_string(),
                rhs: format!("{t}x{t}"),
            });
        }
    }
    let starts: Vec<usize> = match start {
        Some(name) => vec![names.iter().position(|n| n == name).ok_or_else(|| {
            KdError::validation(format!(
                "unknown start subnetwork '{name}' (have: {})",
                names.join(", ")
            ))
        })?],
        None => (0..t).collect(),
    };

    let q = mean_alphas.len();
    let mut pathways = Vec::new();
    for &k0 in &starts {
        // Iterate the |T|^q continuations in lexicographic order.
        let mut digits = vec![0usize; q];
        loop {
            let mut score = T::one();
            let mut prev = k0;
            let mut seq = Vec::with_capacity(q + 1);
            seq.push(k0);
            for (l, &next) in digits.iter().enumerate() {
                score = score * mean_alphas[l].get(prev, next);
                prev = next;
                seq.push(next);
            }
            pathways.push((seq.clone(), score.to_f64_lossy()));

            // Advance the odometer.
            let mut pos = q;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                digits[pos] += 1;
                if digits[pos] < t {
                    break;
                }
                digits[pos] = 0;
            }
            if digits.iter().all(|&d| d == 0) {
                break;
            }
        }
    }
    pathways.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite scores")
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(pathways
        .into_iter()
        .map(|(seq, score)| Pathway {
            names: seq.iter().map(|&k| names[k].clone()).collect(),
            score,
        })
        .collect())
}

/// Gradient saliency of the true-class logit w.r.t. the input connectivity,
/// averaged over correctly classified samples. A region's score sums the
/// absolute gradient of its row and column inside its subnetwork block,
/// over channels; unassigned regions score 0.
pub fn biomarker_saliency<T: Scalar>(
    state: &ModelState<T>,
    dataset: &Dataset<T>,
) -> Result<BiomarkerReport> {
    state.validate_dataset(dataset)?;
    let partition = &dataset.partition;
    let n = partition.n_regions();
    let mut totals = vec![0.0_f64; n];
    let mut n_correct = 0usize;

    for sample in &dataset.samples {
        let blocks = sample_blocks(sample, partition)?;
        let mut tape = Tape::new();
        let ids = register_model(&mut tape, &state.params);
        let bank_id = state.bank.as_ref().map(|b| tape.leaf(b.vectors.clone()));
        let fwd = build_sample_forward(&mut tape, &ids, &state.params, &blocks, bank_id)?;
        let logits = tape.value(fwd.logits);
        let predicted = u8::from(logits.get(0, 1) > logits.get(0, 0));
        if predicted != sample.label {
            continue;
        }
        n_correct += 1;
        let true_logit = tape.select(fwd.logits, 0, usize::from(sample.label))?;
        let grads = tape.backward(true_logit)?;
        for (k, per_channel) in fwd.block_ids.iter().enumerate() {
            let regions = partition.regions_of(k);
            for &block_id in per_channel {
                let grad = grads.wrt_or_zeros(block_id, tape.value(block_id));
                for (local, &region) in regions.iter().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..regions.len() {
                        acc += grad.get(local, j).to_f64_lossy().abs();
                        acc += grad.get(j, local).to_f64_lossy().abs();
                    }
                    totals[region] += acc;
                }
            }
        }
    }
    if n_correct == 0 {
        return Err(KdError::validation(
            "no correctly classified samples; saliency undefined",
        ));
    }

    let mut regions: Vec<RegionSaliency> = (0..n)
        .map(|region| RegionSaliency {
            region,
            name: partition.region_name(region),
            subnetwork: partition
                .subnetwork_of(region)
                .map(|k| partition.names()[k].clone()),
            score: totals[region] / n_correct as f64,
        })
        .collect();
    regions.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite saliency")
            .then_with(|| a.region.cmp(&b.region))
    });
    Ok(BiomarkerReport {
        regions,
        n_samples: n_correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::Partition;
    use crate::ssil::SemanticPriorBank;
    use crate::synthgen::{generate, SynthMode, SynthSpec};
    use crate::train::{train, PriorInteraction, TrainConfig};

    fn tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    fn names3() -> Vec<String> {
        vec!["DMN".into(), "CEN".into(), "SN".into()]
    }

    #[test]
    fn pathway_hand_case() {
        // Order DMN, CEN, SN. Score(DMN→CEN→CEN) = 0.2 · 0.6.
        let a1 = tensor(&[
            vec![0.7, 0.2, 0.1],
            vec![0.3, 0.4, 0.3],
            vec![0.2, 0.2, 0.6],
        ]);
        let a2 = tensor(&[
            vec![0.5, 0.25, 0.25],
            vec![0.1, 0.6, 0.3],
            vec![0.4, 0.4, 0.2],
        ]);
        let pathways = pathway_scores(&[a1, a2], &names3(), Some("DMN")).unwrap();
        let target = pathways
            .iter()
            .find(|p| p.label() == "DMN→CEN→CEN")
            .unwrap();
        assert!((target.score - 0.12).abs() < 1e-12);
        assert_eq!(pathways.len(), 9);
    }

    #[test]
    fn uniform_first_order_scores_are_one_third() {
        let uniform = Tensor::filled(3, 3, 1.0 / 3.0);
        let pathways = pathway_scores(&[uniform], &names3(), None).unwrap();
        assert_eq!(pathways.len(), 9);
        for p in &pathways {
            assert!((p.score - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_for_fixed_start_sum_to_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let stochastic = |rng: &mut rand_chacha::ChaCha8Rng| {
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|_| {
                    let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let sum: f64 = raw.iter().sum();
                    raw.into_iter().map(|v| v / sum).collect()
                })
                .collect();
            Tensor::from_rows(&rows).unwrap()
        };
        let alphas = vec![
            stochastic(&mut rng),
            stochastic(&mut rng),
            stochastic(&mut rng),
        ];
        for start in ["DMN", "CEN", "SN"] {
            let pathways = pathway_scores(&alphas, &names3(), Some(start)).unwrap();
            assert_eq!(pathways.len(), 27);
            let total: f64 = pathways.iter().map(|p| p.score).sum();
            assert!((total - 1.0).abs() < 1e-9, "start {start}: {total}");
        }
    }

    #[test]
    fn ranking_is_invariant_under_monotone_rescaling() {
        let a1 = tensor(&[
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.5, 0.3],
            vec![0.25, 0.25, 0.5],
        ]);
        let pathways = pathway_scores(&[a1], &names3(), Some("DMN")).unwrap();
        let rescaled: Vec<f64> = pathways.iter().map(|p| 3.0 * p.score + 1.0).collect();
        let top_rescaled = rescaled
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(top_rescaled, 0, "descending order must survive rescaling");
    }

    #[test]
    fn unknown_start_is_rejected() {
        let uniform = Tensor::filled(3, 3, 1.0 / 3.0);
        assert!(pathway_scores(&[uniform], &names3(), Some("FPN")).is_err());
    }

    fn tiny_setup() -> (Dataset<f64>, ModelState<f64>) {
        let data = generate::<f64>(&SynthSpec {
            n_regions: 10,
            subnetwork_sizes: vec![3, 3, 3],
            samples_per_class: 5,
            mode: SynthMode::MeanShift,
            effect_size: 2.0,
            noise_scale: 1.0,
            seed: 8,
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
            epochs: 2,
            batch_size: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let bank = SemanticPriorBank::seeded_random(data.partition.names(), 4, "synthetic", 10);
        let prior = PriorInteraction::uniform(data.partition.names());
        let (state, _) = train(&data, Some(&bank), Some(&prior), &config).unwrap();
        (data, state)
    }

    #[test]
    fn mean_trace_is_exact_for_one_sample_and_idempotent() {
        let (data, state) = tiny_setup();
        let mut one = data.clone();
        one.samples.truncate(1);
        let single = mean_trace(&state, &one, None).unwrap();
        let (_, trace) = state.forward_sample_values(&one.samples[0]).unwrap();
        assert_eq!(single, trace.alphas);

        // Duplicating the sample leaves the mean unchanged.
        let mut two = one.clone();
        two.samples.push(two.samples[0].clone());
        let doubled = mean_trace(&state, &two, None).unwrap();
        for (a, b) in doubled.iter().zip(&single) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mean_trace_rows_stay_stochastic_and_filters_work() {
        let (data, state) = tiny_setup();
        let patient = mean_trace(&state, &data, Some(1)).unwrap();
        let control = mean_trace(&state, &data, Some(0)).unwrap();
        assert_ne!(patient, control);
        for alphas in [&patient, &control] {
            for alpha in alphas.iter() {
                for r in 0..alpha.rows() {
                    let sum: f64 = alpha.row_slice(r).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                }
            }
        }
        let mut patients_only = data.clone();
        patients_only.samples.retain(|s| s.label == 1);
        assert!(mean_trace(&state, &patients_only, Some(0)).is_err());
    }

    #[test]
    fn zero_weight_model_has_zero_saliency() {
        let (data, state) = tiny_setup();
        let mut zeroed = state.clone();
        for t in zeroed.params.tensors_mut() {
            *t = t.zeros_like();
        }
        // Zero weights give logits [0,0]; ties predict control, so control
        // samples count as correct and saliency is identically zero.
        let report = biomarker_saliency(&zeroed, &data).unwrap();
        assert!(report.regions.iter().all(|r| r.score == 0.0));
        assert_eq!(report.n_samples, 5);

        let mut patients_only = data.clone();
        patients_only.samples.retain(|s| s.label == 1);
        assert!(biomarker_saliency(&zeroed, &patients_only).is_err());
    }

    #[test]
    fn saliency_is_nonnegative_ranked_and_zero_off_partition() {
        let (data, state) = tiny_setup();
        let report = biomarker_saliency(&state, &data).unwrap();
        assert_eq!(report.regions.len(), 10);
        for w in report.regions.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for r in &report.regions {
            assert!(r.score >= 0.0);
            if r.subnetwork.is_none() {
                assert_eq!(r.score, 0.0, "unassigned region {} must score 0", r.region);
            }
        }
        // Region 9 is unassigned in the 3x3-of-10 layout.
        assert!(report
            .regions
            .iter()
            .any(|r| r.region == 9 && r.subnetwork.is_none()));
    }

    #[test]
    fn mean_trace_validates_partition() {
        let (data, state) = tiny_setup();
        let mut other = data.clone();
        other.partition = Partition::new(
            vec!["X".into(), "Y".into(), "Z".into()],
            vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]],
            10,
            None,
        )
        .unwrap();
        assert!(mean_trace(&state, &other, None).is_err());
    }
}
