//! Shared helpers for the integration tests.
#![allow(dead_code)]

use divens::{LabeledPointSet, PointSet};
use std::path::PathBuf;

pub fn iris_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/iris.csv")
}

/// Expected digest of the bundled Iris fixture (150 rows, 4 features,
/// label in the last column).
pub const IRIS_SHA256: &str = "095355cf230a415a6c3dbaa144e6344b0dcce894c619fab5568cfc78637dd772";

/// Loads a labeled CSV: numeric columns then a trailing label column.
pub fn load_labeled_csv(path: &std::path::Path) -> LabeledPointSet {
    let text = std::fs::read_to_string(path).expect("fixture readable");
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let (nums, label) = fields.split_at(fields.len() - 1);
        rows.push(
            nums.iter()
                .map(|s| s.trim().parse::<f64>().expect("numeric field"))
                .collect::<Vec<f64>>(),
        );
        labels.push(label[0].trim().to_string());
    }
    LabeledPointSet::new(PointSet::from_rows(&rows).unwrap(), labels).unwrap()
}

pub fn load_iris() -> LabeledPointSet {
    load_labeled_csv(&iris_path())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
