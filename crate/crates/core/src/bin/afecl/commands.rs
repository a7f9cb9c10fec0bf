use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use afecl::checkpoint::{
    atomic_write, dataset_fingerprint, embeddings_tsv, load_params, read_embeddings_tsv, read_json, save_params,
    unix_now, version_string, write_json, CheckpointError, RunManifest, MANIFEST_JSON,
};
use afecl::contrastive::{LossConfig, LossError, LossPath};
use afecl::diagnostics::{check_model_gradient, random_instance, sampling_stats};
use afecl::edges::EdgeError;
use afecl::encoder::encode;
use afecl::eval::{
    link_prediction, node_classification_with_workers, node_table_csv, Decoder, EvalError, LinkConfig, ProbeConfig,
};
use afecl::graph::{load_graph, Graph};
use afecl::splits::{make_edge_splits, make_node_splits_with, EdgeSplit, ValidationSize};
use afecl::tensor::{GradCheckConfig, TensorError};
use afecl::train::{train_with, TrainError};
use serde_json::{json, Map, Value};

use crate::config::{self, seed_or_env};
use crate::{
    CmdResult, DecoderArg, EvalLinkArgs, EvalNodeArgs, ExportArgs, Failure, Global, GradcheckArgs, SampleStatsArgs,
    TrainArgs,
};

const EDGE_SPLIT_JSON: &str = "edge_split.json";

fn tensor_failure(e: TensorError) -> Failure {
    match e {
        TensorError::NonFinite { .. } | TensorError::ZeroNorm { .. } => Failure::numeric(e),
        other => Failure::other(other),
    }
}

fn loss_failure(e: LossError) -> Failure {
    match e {
        LossError::Tensor(t) => tensor_failure(t),
        LossError::EmptyAnchors | LossError::NodeCount { .. } => Failure::data(e),
        other => Failure::config(other),
    }
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Config(_) => Failure::config(e),
        TrainError::EmptyAnchors { .. } => Failure::data(e),
        TrainError::NonFinite { .. } => Failure::numeric(e),
        TrainError::Edge(EdgeError::BadRate(_)) => Failure::config(e),
        TrainError::Edge(_) => Failure::data(e),
        TrainError::Loss(l) => loss_failure(l),
        TrainError::Tensor(t) => tensor_failure(t),
    }
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::Config(_) => Failure::config(e),
        EvalError::Tensor(t) => tensor_failure(t),
        EvalError::Pool(_) => Failure::other(e),
        other => Failure::data(other),
    }
}

fn ckpt_failure(e: CheckpointError) -> Failure {
    Failure::data(e)
}

fn load_data(path: &Path) -> Result<Graph, Failure> {
    load_graph(path).map_err(Failure::data)
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::other(format!("{}: {e}", path.display()))
}

fn read_manifest(ckpt: &Path) -> Result<RunManifest, Failure> {
    read_json(&ckpt.join(MANIFEST_JSON)).map_err(ckpt_failure)
}

/// `--data` if given, otherwise the dataset recorded in the checkpoint's manifest.
fn resolve_data(flag: &Option<PathBuf>, ckpt: &Path) -> Result<PathBuf, Failure> {
    if let Some(d) = flag {
        return Ok(d.clone());
    }
    read_manifest(ckpt)?
        .dataset
        .map(PathBuf::from)
        .ok_or_else(|| Failure::data(format!("{}: manifest records no dataset; pass --data", ckpt.display())))
}

struct ManifestInput<'a> {
    dir: &'a Path,
    argv: &'a [String],
    config: Value,
    sources: Map<String, Value>,
    data: Option<&'a Path>,
    started_at: f64,
}

fn write_manifest(m: ManifestInput<'_>) -> CmdResult {
    let dataset_fingerprint = match m.data {
        Some(d) => Some(dataset_fingerprint(d).map_err(Failure::data)?),
        None => None,
    };
    let manifest = RunManifest {
        command: m.argv.join(" "),
        config: m.config,
        config_sources: m.sources,
        dataset: m.data.map(|d| d.display().to_string()),
        dataset_fingerprint,
        version: version_string(),
        started_at: m.started_at,
        finished_at: unix_now(),
    };
    write_json(&m.dir.join(MANIFEST_JSON), &manifest).map_err(Failure::other)
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64), Failure> {
    let parts: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match parts.as_deref() {
        Ok([a, b, c]) => Ok((*a, *b, *c)),
        _ => Err(Failure::config(format!("--link-ratios {s:?}: expected three comma-separated fractions"))),
    }
}

pub fn train(a: &TrainArgs, g: &Global, argv: &[String]) -> CmdResult {
    let started_at = unix_now();
    let resolved = config::resolve(a, g)?;
    let cfg = resolved.cfg;
    let data = resolved
        .data
        .ok_or_else(|| Failure::config("no dataset: pass --data or set \"data\" in the config"))?;
    let graph = load_data(&data)?;
    let data = fs::canonicalize(&data).unwrap_or(data);

    let mut manifest_config = config::config_json(&cfg, &data);
    let split = if a.link_split {
        let ratios = parse_ratios(&a.link_ratios)?;
        let seed = a.link_split_seed.unwrap_or(cfg.seed);
        let split = make_edge_splits(&graph, ratios, seed).map_err(Failure::data)?;
        manifest_config["link_split"] = json!({"ratios": [ratios.0, ratios.1, ratios.2], "seed": seed});
        Some(split)
    } else {
        None
    };
    let train_graph = match &split {
        Some(s) => s.train_graph(&graph).map_err(Failure::data)?,
        None => graph,
    };

    fs::create_dir_all(&a.out).map_err(io_failure(&a.out))?;
    let trace_tmp = a.out.join(format!(".metrics.jsonl.tmp{}", std::process::id()));
    let mut trace = File::create(&trace_tmp).map_err(io_failure(&trace_tmp))?;
    let mut trace_err = None;
    let epochs = cfg.epochs;
    let output = train_with(&train_graph, &cfg, |rec| {
        let line = json!({"epoch": rec.epoch, "L": rec.loss, "wall_ms": rec.wall_ms});
        if trace_err.is_none() {
            if let Err(e) = writeln!(trace, "{line}") {
                trace_err = Some(e);
            }
        }
        let every = a.log_every.max(1);
        if !g.quiet && (rec.epoch == 1 || rec.epoch % every == 0 || rec.epoch == epochs) {
            eprintln!("epoch {:>5}  L = {:.6}  ({:.0} ms)", rec.epoch, rec.loss, rec.wall_ms);
        }
    });
    let output = match output {
        Ok(o) => o,
        Err(e) => {
            let _ = fs::remove_file(&trace_tmp);
            return Err(train_failure(e));
        }
    };
    if let Some(e) = trace_err {
        return Err(io_failure(&trace_tmp)(e));
    }
    trace.sync_all().map_err(io_failure(&trace_tmp))?;
    drop(trace);

    save_params(&a.out, &output.params).map_err(Failure::other)?;
    atomic_write(&a.out.join("embeddings.tsv"), embeddings_tsv(&output.embeddings.h).as_bytes()).map_err(Failure::other)?;
    let metrics = a.out.join("metrics.jsonl");
    fs::rename(&trace_tmp, &metrics).map_err(io_failure(&metrics))?;
    write_json(&a.out.join("config.json"), &config::config_json(&cfg, &data)).map_err(Failure::other)?;
    if let Some(s) = &split {
        write_json(&a.out.join(EDGE_SPLIT_JSON), s).map_err(Failure::other)?;
    }
    write_manifest(ManifestInput {
        dir: &a.out,
        argv,
        config: manifest_config,
        sources: resolved.sources,
        data: Some(&data),
        started_at,
    })?;
    if !g.quiet {
        let last = output.trace.last().map(|r| r.loss).unwrap_or(f64::NAN);
        eprintln!("wrote {} (final L = {last:.6})", a.out.display());
    }
    Ok(())
}

fn seed_source(flag: Option<u64>) -> Value {
    if flag.is_some() {
        json!("cli")
    } else if std::env::var(config::SEED_ENV).is_ok() {
        json!("env")
    } else {
        json!("default")
    }
}

pub fn eval_node(a: &EvalNodeArgs, g: &Global, argv: &[String]) -> CmdResult {
    let started_at = unix_now();
    let data = resolve_data(&a.data, &a.ckpt)?;
    let graph = load_data(&data)?;
    let h = read_embeddings_tsv(&a.ckpt.join("embeddings.tsv")).map_err(ckpt_failure)?;
    if a.c.is_empty() || a.c.contains(&0) || a.splits == 0 {
        return Err(Failure::config("--c values and --splits must be positive"));
    }
    let split_seed = seed_or_env(a.split_seed)?;
    let validation = match a.val_per_class {
        Some(k) => ValidationSize::PerClass(k),
        None => ValidationSize::Total(a.val_total),
    };
    let probe = ProbeConfig::default();
    let mut reports = Vec::new();
    for &c in &a.c {
        let splits = make_node_splits_with(&graph, c, a.splits, split_seed, validation).map_err(Failure::data)?;
        let r = node_classification_with_workers(&h, &graph, &splits, &probe, g.workers.max(1)).map_err(eval_failure)?;
        if !g.quiet {
            eprintln!("c = {c:>2}  accuracy {:.2} ± {:.2} over {} splits", r.mean, r.std, r.per_split.len());
        }
        reports.push((c, r));
    }

    let out = a.out.clone().unwrap_or_else(|| a.ckpt.join("eval-node"));
    let metrics = if reports.len() == 1 {
        serde_json::to_value(&reports[0].1)
    } else {
        serde_json::to_value(reports.iter().map(|(_, r)| r).collect::<Vec<_>>())
    }
    .expect("serialisable");
    write_json(&out.join("metrics.json"), &metrics).map_err(Failure::other)?;
    let rows: Vec<_> = reports.iter().map(|(c, r)| (*c, r)).collect();
    atomic_write(&out.join("node_classification.csv"), node_table_csv(&rows).as_bytes()).map_err(Failure::other)?;
    let mut sources = Map::new();
    sources.insert("split_seed".into(), seed_source(a.split_seed));
    write_manifest(ManifestInput {
        dir: &out,
        argv,
        config: json!({
            "ckpt": a.ckpt.display().to_string(),
            "c": a.c,
            "splits": a.splits,
            "split_seed": split_seed,
            "validation": validation,
            "probe": probe,
            "workers": g.workers,
        }),
        sources,
        data: Some(&data),
        started_at,
    })
}

pub fn eval_link(a: &EvalLinkArgs, g: &Global, argv: &[String]) -> CmdResult {
    let started_at = unix_now();
    let data = resolve_data(&a.data, &a.ckpt)?;
    let graph = load_data(&data)?;
    let params = load_params(&a.ckpt).map_err(ckpt_failure)?;
    let split_path = a.ckpt.join(EDGE_SPLIT_JSON);
    if !split_path.exists() {
        return Err(Failure::data(format!(
            "{}: not found; train with --link-split to hold out edges",
            split_path.display()
        )));
    }
    let split: EdgeSplit = read_json(&split_path).map_err(ckpt_failure)?;
    if params.encoder.num_features != graph.num_features() {
        return Err(Failure::data(format!(
            "checkpoint expects {} features, dataset has {}",
            params.encoder.num_features,
            graph.num_features()
        )));
    }
    let cfg = LinkConfig {
        decoder: match a.decoder {
            DecoderArg::Dot => Decoder::Dot,
            DecoderArg::Bilinear => Decoder::Bilinear,
        },
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        seed: seed_or_env(a.seed)?,
    };
    let r = link_prediction(&params.encoder, &graph, &split, &cfg, a.runs).map_err(eval_failure)?;
    if !g.quiet {
        eprintln!("ROC-AUC {:.4} ± {:.4} over {} runs", r.mean, r.std, r.per_split.len());
    }
    let out = a.out.clone().unwrap_or_else(|| a.ckpt.join("eval-link"));
    write_json(&out.join("metrics.json"), &r).map_err(Failure::other)?;
    let mut sources = Map::new();
    sources.insert("seed".into(), seed_source(a.seed));
    write_manifest(ManifestInput {
        dir: &out,
        argv,
        config: json!({"ckpt": a.ckpt.display().to_string(), "link": cfg, "runs": a.runs}),
        sources,
        data: Some(&data),
        started_at,
    })
}

pub fn gradcheck(a: &GradcheckArgs, g: &Global) -> CmdResult {
    if a.n < 2 || a.features == 0 || a.hidden == 0 || a.heads == 0 {
        return Err(Failure::config("--n must be at least 2 and all widths positive"));
    }
    let seed = seed_or_env(a.seed)?;
    let (graph, params) = random_instance(a.n, a.features, a.hidden, a.heads, seed);
    let check = GradCheckConfig {
        epsilon: a.epsilon,
        tolerance: a.tolerance,
        seed,
        ..GradCheckConfig::default()
    };
    let loss = LossConfig::new(a.temperature);
    let mut worst = 0.0f64;
    let mut coords = 0;
    for path in [LossPath::Gram, LossPath::Naive] {
        let r = check_model_gradient(&graph, &params, &loss, path, &check).map_err(loss_failure)?;
        if !g.quiet {
            eprintln!("{path:?}: max_rel_err {:.3e} over {} coordinates", r.max_rel_err, r.coords_checked);
        }
        worst = worst.max(r.max_rel_err);
        coords += r.coords_checked;
    }
    if worst < a.tolerance {
        println!("max_rel_err < {:e} (observed {worst:.3e} over {coords} coordinates)", a.tolerance);
        Ok(())
    } else {
        println!("max_rel_err >= {:e} (observed {worst:.3e} over {coords} coordinates)", a.tolerance);
        Err(Failure::numeric(format!("gradient check failed: max_rel_err {worst:.3e}")))
    }
}

pub fn sample_stats(a: &SampleStatsArgs, _g: &Global) -> CmdResult {
    let graph = load_data(&a.data)?;
    if a.trials == 0 {
        return Err(Failure::config("--trials must be positive"));
    }
    let seed = seed_or_env(a.seed)?;
    let s = sampling_stats(&graph, a.ps, a.trials, seed).map_err(|e| match e {
        EdgeError::BadRate(_) => Failure::config(e),
        other => Failure::data(other),
    })?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&s).expect("serialisable"));
        return Ok(());
    }
    println!("dataset          {}", graph.name());
    println!("undirected edges {}", s.undirected_edges);
    println!("p_s              {}", s.p_s);
    println!("trials           {} (seeds {}..{})", s.trials, seed, seed + s.trials as u64);
    println!("expected kept    {:.1}", s.expected);
    println!("binomial sd      {:.3}", s.trial_sd);
    println!("mean kept        {:.2}", s.mean);
    println!("3-sigma band     [{:.2}, {:.2}]", s.band.0, s.band.1);
    println!("within band      {}", s.within_band);
    println!("symmetric        {}", s.all_symmetric);
    print!("{}", s.histogram(a.bins));
    Ok(())
}

pub fn export_embeddings(a: &ExportArgs, _g: &Global, argv: &[String]) -> CmdResult {
    let started_at = unix_now();
    let data = resolve_data(&a.data, &a.ckpt)?;
    let graph = load_data(&data)?;
    let params = load_params(&a.ckpt).map_err(ckpt_failure)?;
    let h = encode(&graph, &params.encoder).map_err(|e| match e {
        TensorError::ShapeMismatch { .. } => Failure::data(format!("checkpoint does not match the dataset: {e}")),
        other => tensor_failure(other),
    })?;
    atomic_write(&a.out, embeddings_tsv(&h.h).as_bytes()).map_err(Failure::other)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !dir.join(MANIFEST_JSON).exists() {
        write_manifest(ManifestInput {
            dir,
            argv,
            config: json!({"ckpt": a.ckpt.display().to_string()}),
            sources: Map::new(),
            data: Some(&data),
            started_at,
        })?;
    }
    Ok(())
}
