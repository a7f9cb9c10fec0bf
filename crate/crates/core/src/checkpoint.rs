//! Run artifacts: parameter checkpoints, embedding tables, manifests.
//!
//! A checkpoint is `params.json` (versioned header plus a tensor table)
//! next to `params.bin`, the concatenated little-endian `f64` payload.
//! Every file is written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoder::{AttentionHead, EncoderParams};
use crate::eval::hex;
use crate::tensor::Tensor;
use crate::train::ModelParams;

pub const PARAMS_FORMAT: &str = "afecl-params";
pub const PARAMS_VERSION: u32 = 1;
pub const PARAMS_JSON: &str = "params.json";
pub const PARAMS_BIN: &str = "params.bin";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| corrupt(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset into the sidecar, in `f64` elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsHeader {
    pub format: String,
    pub version: u32,
    pub num_features: usize,
    pub hidden: usize,
    pub heads: usize,
    pub init_seed: u64,
    pub tensors: Vec<TensorEntry>,
    pub sidecar: String,
    pub sidecar_sha256: String,
}

fn named_tensors(p: &ModelParams) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    for (k, h) in p.encoder.heads.iter().enumerate() {
        out.push((format!("head{k}.weight"), &h.weight));
        out.push((format!("head{k}.attention"), &h.attention));
    }
    if let Some(w) = &p.edge_map {
        out.push(("edge_map".to_string(), w));
    }
    out
}

pub fn save_params(dir: &Path, p: &ModelParams) -> Result<()> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in named_tensors(p) {
        tensors.push(TensorEntry {
            name,
            rows: t.rows(),
            cols: t.cols(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = ParamsHeader {
        format: PARAMS_FORMAT.into(),
        version: PARAMS_VERSION,
        num_features: p.encoder.num_features,
        hidden: p.encoder.hidden,
        heads: p.encoder.num_heads(),
        init_seed: p.encoder.init_seed,
        tensors,
        sidecar: PARAMS_BIN.into(),
        sidecar_sha256: sha256_hex(&payload),
    };
    atomic_write(&dir.join(PARAMS_BIN), &payload)?;
    write_json(&dir.join(PARAMS_JSON), &header)
}

pub fn load_params(dir: &Path) -> Result<ModelParams> {
    let json_path = dir.join(PARAMS_JSON);
    let header: ParamsHeader = read_json(&json_path)?;
    if header.format != PARAMS_FORMAT {
        return Err(corrupt(&json_path, format!("unknown format {:?}", header.format)));
    }
    if header.version != PARAMS_VERSION {
        return Err(corrupt(&json_path, format!("unsupported version {}", header.version)));
    }
    let bin_path = dir.join(&header.sidecar);
    let bytes = fs::read(&bin_path).map_err(io_err(&bin_path))?;
    if sha256_hex(&bytes) != header.sidecar_sha256 {
        return Err(corrupt(&bin_path, "checksum mismatch"));
    }
    if bytes.len() % 8 != 0 {
        return Err(corrupt(&bin_path, "length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let take = |name: &str, rows: usize, cols: usize| -> Result<Tensor> {
        let e = header
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| corrupt(&json_path, format!("missing tensor {name}")))?;
        if (e.rows, e.cols) != (rows, cols) {
            return Err(corrupt(&json_path, format!("tensor {name} has shape {}x{}", e.rows, e.cols)));
        }
        let data = values
            .get(e.offset..e.offset + rows * cols)
            .ok_or_else(|| corrupt(&bin_path, format!("tensor {name} runs past the end")))?;
        Ok(Tensor::from_vec(rows, cols, data.to_vec()).expect("sized"))
    };
    let (f, h) = (header.num_features, header.hidden);
    let mut heads = Vec::with_capacity(header.heads);
    for k in 0..header.heads {
        heads.push(AttentionHead {
            weight: take(&format!("head{k}.weight"), h, f)?,
            attention: take(&format!("head{k}.attention"), 2 * h, 1)?,
        });
    }
    let edge_map = match header.tensors.iter().find(|e| e.name == "edge_map") {
        Some(e) => {
            if e.cols != 2 * h * header.heads {
                return Err(corrupt(&json_path, "edge_map width does not match the encoder"));
            }
            Some(take("edge_map", e.rows, e.cols)?)
        }
        None => None,
    };
    let p = ModelParams {
        encoder: EncoderParams {
            num_features: f,
            hidden: h,
            heads,
            init_seed: header.init_seed,
        },
        edge_map,
    };
    if !p.encoder.is_finite() {
        return Err(corrupt(&bin_path, "non-finite parameter"));
    }
    Ok(p)
}

/// One row per node, tab-separated, shortest round-trip decimal form.
pub fn embeddings_tsv(h: &Tensor) -> String {
    let mut out = String::with_capacity(h.len() * 20);
    for r in 0..h.rows() {
        for (c, v) in h.row(r).iter().enumerate() {
            if c > 0 {
                out.push('\t');
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn read_embeddings_tsv(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split('\t').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| corrupt(path, format!("line {}: {e}", ln + 1)))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(corrupt(path, format!("line {}: expected {c} columns, found {}", ln + 1, row.len())))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    Tensor::from_vec(rows, cols.unwrap_or(0), data).map_err(|e| corrupt(path, e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Content hash of a dataset directory's four files.
pub fn dataset_fingerprint(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in ["meta.json", "features.tsv", "labels.tsv", "edges.tsv"] {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex(&hasher.finalize()))
}

pub fn version_string() -> String {
    match option_env!("AFECL_GIT_DESCRIBE") {
        Some(d) => d.to_string(),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Provenance record written once into every output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Where each config key came from: `cli`, `file`, `env` or `default`.
    pub config_sources: serde_json::Map<String, serde_json::Value>,
    pub dataset: Option<String>,
    pub dataset_fingerprint: Option<String>,
    pub version: String,
    pub started_at: f64,
    pub finished_at: f64,
}
