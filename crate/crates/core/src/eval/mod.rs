//! Downstream evaluation of frozen embeddings.

mod link;
mod probe;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::GraphError;
use crate::tensor::TensorError;

pub use link::{link_prediction, roc_auc, Decoder, LinkConfig};
pub use probe::{fit_probe, node_classification, node_classification_with_workers, standardize, Probe, ProbeConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("training set contains fewer than two classes")]
    SingleClass,
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("node {0} has no label")]
    Unlabeled(usize),
    #[error("embeddings have {rows} rows for {nodes} nodes")]
    Shape { rows: usize, nodes: usize },
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Per-split metrics with their mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub dataset: String,
    pub config_fingerprint: String,
    pub per_split: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Probe regularisation chosen on validation, per split.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selected_l2: Vec<f64>,
}

impl EvalReport {
    pub fn new(task: &str, dataset: &str, config_fingerprint: String, per_split: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_split);
        Self {
            task: task.to_string(),
            dataset: dataset.to_string(),
            config_fingerprint,
            per_split,
            mean,
            std,
            selected_l2: Vec::new(),
        }
    }

    /// True when `mean` and `std` agree with `per_split`.
    pub fn is_consistent(&self) -> bool {
        let (m, s) = mean_std(&self.per_split);
        (m - self.mean).abs() <= 1e-12 * m.abs().max(1.0) && (s - self.std).abs() <= 1e-12 * s.abs().max(1.0)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Short hex digest of any serialisable config.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serialises");
    hex(&Sha256::digest(bytes))[..16].to_string()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Node-classification results as a table with one row per label rate.
pub fn node_table_csv(rows: &[(usize, &EvalReport)]) -> String {
    let mut out = String::from("dataset,c,mean_acc,std_acc,splits\n");
    for (c, r) in rows {
        out.push_str(&format!("{},{},{:.2},{:.2},{}\n", r.dataset, c, r.mean, r.std, r.per_split.len()));
    }
    out
}
