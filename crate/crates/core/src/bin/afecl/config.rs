//! Training config resolution: flags, then the config file, then
//! `AFECL_SEED`, then built-in defaults.

use std::path::{Path, PathBuf};

use afecl::train::TrainConfig;
use serde_json::{json, Map, Value};

use crate::{AnchorArg, Failure, Global, LossPathArg, TrainArgs};

pub const SEED_ENV: &str = "AFECL_SEED";

pub struct Resolved {
    pub cfg: TrainConfig,
    pub data: Option<PathBuf>,
    /// Key → `cli`, `file`, `env` or `default`.
    pub sources: Map<String, Value>,
}

/// The `AFECL_SEED` fallback, if set.
pub fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn seed_or_env(flag: Option<u64>) -> Result<u64, Failure> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn read_file(path: &Path) -> Result<Map<String, Value>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Failure::config(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(Failure::config(format!("{}: {e}", path.display()))),
    }
}

fn flag_overrides(a: &TrainArgs, g: &Global) -> Map<String, Value> {
    let mut m = Map::new();
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            m.insert(k.to_string(), v);
        }
    };
    put("temperature", a.temperature.map(|v| json!(v)));
    put("heads", a.heads.map(|v| json!(v)));
    put("hidden", a.hidden.map(|v| json!(v)));
    put("epochs", a.epochs.map(|v| json!(v)));
    put("learning_rate", a.learning_rate.map(|v| json!(v)));
    put("weight_decay", a.weight_decay.map(|v| json!(v)));
    put("edge_sample_rate", a.edge_sample_rate.map(|v| json!(v)));
    put("seed", a.seed.map(|v| json!(v)));
    put("negatives", a.negatives.map(|q| json!({"subsample": {"q": q}})));
    put("positives", a.wo_ecl.then(|| json!("anchor_only")));
    put(
        "anchor_orientation",
        a.anchors.map(|o| match o {
            AnchorArg::Both => json!("both"),
            AnchorArg::Canonical => json!("canonical"),
        }),
    );
    put("edge_dim", a.edge_dim.map(|v| json!(v)));
    put(
        "loss_path",
        a.loss_path.map(|p| match p {
            LossPathArg::Auto => json!("auto"),
            LossPathArg::Naive => json!("naive"),
            LossPathArg::Gram => json!("gram"),
        }),
    );
    put("deterministic", g.deterministic.then_some(json!(true)));
    m
}

pub fn resolve(a: &TrainArgs, g: &Global) -> Result<Resolved, Failure> {
    let mut merged = match &a.config {
        Some(p) => read_file(p)?,
        None => Map::new(),
    };
    let mut sources = Map::new();
    for k in merged.keys() {
        sources.insert(k.clone(), json!("file"));
    }
    let file_data = match merged.remove("data") {
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(other) => return Err(Failure::config(format!("config key \"data\" must be a path string, found {other}"))),
        None => None,
    };
    if !merged.contains_key("seed") && a.seed.is_none() {
        if let Some(s) = env_seed()? {
            merged.insert("seed".into(), json!(s));
            sources.insert("seed".into(), json!("env"));
        }
    }
    for (k, v) in flag_overrides(a, g) {
        merged.insert(k.clone(), v);
        sources.insert(k, json!("cli"));
    }
    let data = match &a.data {
        Some(d) => {
            sources.insert("data".into(), json!("cli"));
            Some(d.clone())
        }
        None => file_data,
    };
    let cfg: TrainConfig = serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::config(format!("config: {e}")))?;
    cfg.validate().map_err(Failure::config)?;
    if let Value::Object(all) = serde_json::to_value(&cfg).expect("serialisable") {
        for k in all.keys() {
            sources.entry(k.clone()).or_insert(json!("default"));
        }
    }
    Ok(Resolved { cfg, data, sources })
}

/// The resolved config as written to `config.json`; usable again as `--config`.
pub fn config_json(cfg: &TrainConfig, data: &Path) -> Value {
    let mut v = serde_json::to_value(cfg).expect("serialisable");
    v["data"] = json!(data.display().to_string());
    v
}
