pub mod evaluate;
pub mod generate;
pub mod gradcheck;
pub mod interpret;
pub mod train;

use kdbrain::{KdError, Result};
use serde::Serialize;
use std::path::Path;

/// Write a serializable value as pretty JSON with a trailing newline.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| KdError::parse(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| KdError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| KdError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| KdError::io(path, e))
}

/// CSV rendering of a matrix, one row per line.
pub fn matrix_csv(matrix: &kdbrain::Tensor64) -> String {
    let mut out = String::new();
    for r in 0..matrix.rows() {
        let cells: Vec<String> = matrix.row_slice(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
