//! Brain-network data model: connectomes, subnetwork partitions, dataset
//! manifest I/O, and stratified splitting.
//!
//! A connectome is an N×N connectivity matrix per channel; a partition
//! groups region indices into named subnetworks via binary masks. The
//! manifest format is JSON (`n_regions`, `n_channels`, `partition`,
//! `samples`) with one no-header CSV per channel per sample.

use crate::diffcore::Tensor;
use crate::error::{KdError, Result};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

/// Named, disjoint grouping of region indices into subnetworks.
///
/// Masks are binary vectors over `0..n_regions`; regions assigned to no
/// subnetwork are ignored by the model. Region order inside a subnetwork
/// follows ascending region index.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    names: Vec<String>,
    masks: Vec<Vec<bool>>,
    region_labels: Option<Vec<String>>,
    n_regions: usize,
}

impl Partition {
    pub fn new(
        names: Vec<String>,
        index_lists: Vec<Vec<usize>>,
        n_regions: usize,
        region_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if names.len() != index_lists.len() {
            return Err(KdError::validation(format!(
                "{} subnetwork names but {} index lists",
                names.len(),
                index_lists.len()
            )));
        }
        if names.is_empty() {
            return Err(KdError::validation("partition defines no subnetworks"));
        }
        let mut seen_names = BTreeSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(KdError::validation("empty subnetwork name"));
            }
            if !seen_names.insert(name.clone()) {
                return Err(KdError::validation(format!(
                    "duplicate subnetwork name '{name}'"
                )));
            }
        }
        if let Some(labels) = &region_labels {
            if labels.len() != n_regions {
                return Err(KdError::validation(format!(
                    "{} region labels for {} regions",
                    labels.len(),
                    n_regions
                )));
            }
        }
        let mut assigned = vec![false; n_regions];
        let mut masks = Vec::with_capacity(names.len());
        for (name, indices) in names.iter().zip(&index_lists) {
            let mut mask = vec![false; n_regions];
            for &idx in indices {
                if idx >= n_regions {
                    return Err(KdError::validation(format!(
                        "subnetwork '{name}': region index {idx} out of range (N = {n_regions})"
                    )));
                }
                if mask[idx] {
                    return Err(KdError::validation(format!(
                        "subnetwork '{name}': region index {idx} listed twice"
                    )));
                }
                if assigned[idx] {
                    return Err(KdError::validation(format!(
                        "region index {idx} assigned to more than one subnetwork (masks must be disjoint)"
                    )));
                }
                mask[idx] = true;
                assigned[idx] = true;
            }
            let size = mask.iter().filter(|&&b| b).count();
            if size < 2 {
                return Err(KdError::validation(format!(
                    "subnetwork '{name}' selects {size} regions; at least 2 required"
                )));
            }
            masks.push(mask);
        }
        Ok(Partition {
            names,
            masks,
            region_labels,
            n_regions,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of subnetworks |T|.
    pub fn n_subnetworks(&self) -> usize {
        self.names.len()
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn mask(&self, k: usize) -> &[bool] {
        &self.masks[k]
    }

    /// Ascending region indices of subnetwork `k`.
    pub fn regions_of(&self, k: usize) -> Vec<usize> {
        self.masks[k]
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// N_k, the region count of subnetwork `k`.
    pub fn size_of(&self, k: usize) -> usize {
        self.masks[k].iter().filter(|&&b| b).count()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Subnetwork index a region belongs to, if any.
    pub fn subnetwork_of(&self, region: usize) -> Option<usize> {
        self.masks.iter().position(|m| m[region])
    }

    pub fn region_labels(&self) -> Option<&[String]> {
        self.region_labels.as_deref()
    }

    pub fn region_name(&self, region: usize) -> String {
        match &self.region_labels {
            Some(labels) => labels[region].clone(),
            None => format!("R{region}"),
        }
    }
}

/// One subject: per-channel N×N connectivity plus a class label
/// (0 = control, 1 = patient).
#[derive(Clone, Debug, PartialEq)]
pub struct Connectome<T> {
    pub id: String,
    pub label: u8,
    pub channels: Vec<Tensor<T>>,
}

/// Validated collection of connectomes sharing one partition.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub partition: Partition,
    pub samples: Vec<Connectome<T>>,
    pub n_regions: usize,
    pub n_channels: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0usize; 2];
        for s in &self.samples {
            counts[s.label as usize] += 1;
        }
        counts
    }
}

/// Principal submatrix of each channel restricted to subnetwork `k`'s
/// regions, in ascending region order.
pub fn extract_subnetwork<T: Scalar>(
    connectome: &Connectome<T>,
    partition: &Partition,
    k: usize,
) -> Result<Vec<Tensor<T>>> {
    if k >= partition.n_subnetworks() {
        return Err(KdError::validation(format!(
            "subnetwork index {k} out of range ({} subnetworks)",
            partition.n_subnetworks()
        )));
    }
    let regions = partition.regions_of(k);
    if regions.len() < 2 {
        return Err(KdError::validation(format!(
            "subnetwork '{}' selects fewer than 2 regions",
            partition.names()[k]
        )));
    }
    let nk = regions.len();
    let mut out = Vec::with_capacity(connectome.channels.len());
    for channel in &connectome.channels {
        let mut sub = Tensor::zeros(nk, nk);
        for (i, &ri) in regions.iter().enumerate() {
            for (j, &rj) in regions.iter().enumerate() {
                sub.set(i, j, channel.get(ri, rj));
            }
        }
        out.push(sub);
    }
    Ok(out)
}

// ── Manifest I/O ─────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    n_regions: usize,
    n_channels: usize,
    partition: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region_labels: Option<Vec<String>>,
    samples: Vec<ManifestSample>,
}

#[derive(Serialize, Deserialize)]
struct ManifestSample {
    id: String,
    label: u8,
    matrix: MatrixPaths,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixPaths {
    One(String),
    Many(Vec<String>),
}

impl MatrixPaths {
    fn as_vec(&self) -> Vec<&str> {
        match self {
            MatrixPaths::One(p) => vec![p.as_str()],
            MatrixPaths::Many(ps) => ps.iter().map(String::as_str).collect(),
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| KdError::io(path, e))
}

/// Parse one N×N matrix CSV: N rows of N comma-separated decimal floats,
/// no header. Errors cite the 1-based row/column.
fn parse_matrix_csv<T: Scalar>(path: &Path, n: usize) -> Result<Tensor<T>> {
    let text = read_to_string(path)?;
    let mut data: Vec<T> = Vec::with_capacity(n * n);
    let mut n_rows = 0;
    for (row_idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        n_rows += 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n {
            return Err(KdError::parse(
                path,
                format!(
                    "row {} has {} columns, expected {}",
                    row_idx + 1,
                    cells.len(),
                    n
                ),
            ));
        }
        for (col_idx, cell) in cells.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                KdError::parse(
                    path,
                    format!(
                        "row {} column {}: '{}' is not a number",
                        row_idx + 1,
                        col_idx + 1,
                        cell.trim()
                    ),
                )
            })?;
            if !value.is_finite() {
                return Err(KdError::parse(
                    path,
                    format!(
                        "row {} column {}: non-finite entry {}",
                        row_idx + 1,
                        col_idx + 1,
                        value
                    ),
                ));
            }
            data.push(T::from_f64_lossy(value));
        }
    }
    if n_rows != n {
        return Err(KdError::parse(
            path,
            format!("{n_rows} rows, expected {n} (matrix must be square)"),
        ));
    }
    Tensor::from_vec(n, n, data)
}

fn write_matrix_csv<T: Scalar>(path: &Path, matrix: &Tensor<T>) -> Result<()> {
    let mut out = String::new();
    for r in 0..matrix.rows() {
        let row = matrix.row_slice(r);
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{}", v.to_f64_lossy()).expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| KdError::io(path, e))
}

fn parse_partition_object(
    object: &serde_json::Map<String, serde_json::Value>,
    manifest_path: &Path,
) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let mut names = Vec::new();
    let mut lists = Vec::new();
    for (name, value) in object {
        let arr = value.as_array().ok_or_else(|| {
            KdError::parse(
                manifest_path,
                format!("partition entry '{name}' must be an array of region indices"),
            )
        })?;
        let mut indices = Vec::with_capacity(arr.len());
        for v in arr {
            let idx = v.as_u64().ok_or_else(|| {
                KdError::parse(
                    manifest_path,
                    format!("partition entry '{name}' contains a non-integer region index: {v}"),
                )
            })?;
            indices.push(idx as usize);
        }
        names.push(name.clone());
        lists.push(indices);
    }
    Ok((names, lists))
}

/// Load and validate a dataset from its manifest. Sample order follows the
/// manifest; nonzero diagonals are zeroed with a warning.
pub fn load_dataset<T: Scalar>(manifest_path: &Path) -> Result<Dataset<T>> {
    let text = read_to_string(manifest_path)?;
    let manifest: ManifestFile =
        serde_json::from_str(&text).map_err(|e| KdError::parse(manifest_path, e.to_string()))?;
    if manifest.n_regions == 0 {
        return Err(KdError::parse(manifest_path, "n_regions must be positive"));
    }
    if manifest.n_channels == 0 {
        return Err(KdError::parse(manifest_path, "n_channels must be positive"));
    }
    let (names, lists) = parse_partition_object(&manifest.partition, manifest_path)?;
    let partition = Partition::new(names, lists, manifest.n_regions, manifest.region_labels)?;

    if manifest.samples.is_empty() {
        return Err(KdError::validation(format!(
            "{}: manifest lists no samples",
            manifest_path.display()
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        if entry.label > 1 {
            return Err(KdError::validation(format!(
                "sample '{}': label {} is not a binary class index",
                entry.id, entry.label
            )));
        }
        let paths = entry.matrix.as_vec();
        if paths.len() != manifest.n_channels {
            return Err(KdError::validation(format!(
                "sample '{}': {} matrix files for {} channels",
                entry.id,
                paths.len(),
                manifest.n_channels
            )));
        }
        let mut channels = Vec::with_capacity(paths.len());
        for rel in paths {
            let mut matrix: Tensor<T> = parse_matrix_csv(&base.join(rel), manifest.n_regions)?;
            let mut zeroed = false;
            for i in 0..matrix.rows() {
                if matrix.get(i, i) != T::zero() {
                    matrix.set(i, i, T::zero());
                    zeroed = true;
                }
            }
            if zeroed {
                log::warn!(
                    "sample '{}': nonzero diagonal in {} zeroed (self-connectivity excluded)",
                    entry.id,
                    rel
                );
            }
            channels.push(matrix);
        }
        samples.push(Connectome {
            id: entry.id.clone(),
            label: entry.label,
            channels,
        });
    }
    Ok(Dataset {
        partition,
        samples,
        n_regions: manifest.n_regions,
        n_channels: manifest.n_channels,
    })
}

/// Write a dataset as manifest + per-channel CSVs under `dir`.
pub fn save_dataset<T: Scalar>(dataset: &Dataset<T>, dir: &Path) -> Result<()> {
    let matrices_dir = dir.join("matrices");
    std::fs::create_dir_all(&matrices_dir).map_err(|e| KdError::io(&matrices_dir, e))?;

    let mut partition_map = serde_json::Map::new();
    for (k, name) in dataset.partition.names().iter().enumerate() {
        let indices: Vec<serde_json::Value> = dataset
            .partition
            .regions_of(k)
            .into_iter()
            .map(|i| serde_json::Value::from(i as u64))
            .collect();
        partition_map.insert(name.clone(), serde_json::Value::Array(indices));
    }

    let mut entries = Vec::with_capacity(dataset.samples.len());
    for sample in &dataset.samples {
        let rels: Vec<String> = (0..sample.channels.len())
            .map(|c| {
                if dataset.n_channels == 1 {
                    format!("matrices/{}.csv", sample.id)
                } else {
                    format!("matrices/{}_c{}.csv", sample.id, c)
                }
            })
            .collect();
        for (rel, matrix) in rels.iter().zip(&sample.channels) {
            write_matrix_csv(&dir.join(rel), matrix)?;
        }
        let matrix = if dataset.n_channels == 1 {
            MatrixPaths::One(rels.into_iter().next().unwrap())
        } else {
            MatrixPaths::Many(rels)
        };
        entries.push(ManifestSample {
            id: sample.id.clone(),
            label: sample.label,
            matrix,
        });
    }

    let manifest = ManifestFile {
        n_regions: dataset.n_regions,
        n_channels: dataset.n_channels,
        partition: partition_map,
        region_labels: dataset.partition.region_labels().map(<[String]>::to_vec),
        samples: entries,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| KdError::parse(&path, e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| KdError::io(&path, e))
}

/// Stratified-by-label shuffle split, deterministic under `seed`.
pub fn split<T: Scalar>(
    dataset: &Dataset<T>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if train_fraction.is_nan() || train_fraction <= 0.0 || train_fraction >= 1.0 {
        return Err(KdError::validation(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for class in 0..2u8 {
        let mut members: Vec<usize> = dataset
            .samples
            .iter()
            .enumerate()
            .filter_map(|(i, s)| (s.label == class).then_some(i))
            .collect();
        if members.is_empty() {
            continue;
        }
        let n_train = (train_fraction * members.len() as f64).round() as usize;
        if n_train == 0 || n_train == members.len() {
            return Err(KdError::validation(format!(
                "class {class} would be empty in one split ({} samples, fraction {train_fraction})",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        train_indices.extend_from_slice(&members[..n_train]);
        test_indices.extend_from_slice(&members[n_train..]);
    }
    // Keep manifest order within each side.
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    let pick = |indices: &[usize]| Dataset {
        partition: dataset.partition.clone(),
        samples: indices
            .iter()
            .map(|&i| dataset.samples[i].clone())
            .collect(),
        n_regions: dataset.n_regions,
        n_channels: dataset.n_channels,
    };
    Ok((pick(&train_indices), pick(&test_indices)))
}
