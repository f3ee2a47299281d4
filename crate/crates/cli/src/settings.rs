//! Run settings: defaults, presets, config files and flags, in increasing
//! precedence.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::Serialize;

use ctembed::eval::SplitSpec;
use ctembed::pipeline::{EmbedConfig, Method};
use ctembed::sgd::{PairSource, TrainConfig};

use crate::usage;

const PRESETS_HELP: &str = "Dataset preset: cora (K=4, alpha=0.5, d=170), butterfly (K=5, alpha=0.5, d=27), \
amazon (K=4, alpha=0.5, d=480), emails (K=5, alpha=0.75, d=180), xray (K=6, alpha=0.5, d=3)";

fn preset(name: &str) -> Option<[(&'static str, &'static str); 3]> {
    let (levels, retain, dim) = match name {
        "cora" => ("4", "0.5", "170"),
        "butterfly" => ("5", "0.5", "27"),
        "amazon" => ("4", "0.5", "480"),
        "emails" => ("5", "0.75", "180"),
        "xray" => ("6", "0.5", "3"),
        _ => return None,
    };
    Some([("levels", levels), ("retain", retain), ("dim", dim)])
}

#[derive(Args, Debug, Clone, Default)]
pub struct SharedArgs {
    /// Edge list, `src dst [weight]` per line.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Numeric CSV, one feature vector per row; builds a Gaussian kNN graph.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// `node_id<TAB>class_label` per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// svd-ct or dwa-ct.
    #[arg(long)]
    pub method: Option<String>,
    /// Number of compression levels K.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Fraction of singular values kept per level.
    #[arg(long)]
    pub retain: Option<f64>,
    /// Threshold truncation instead of a retained fraction.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Embedding dimension d.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Use the lazy walk (I + T) / 2; needed for bipartite graphs.
    #[arg(long)]
    pub lazy: bool,
    /// Square the compressed operator after projecting it.
    #[arg(long)]
    pub square_projection: bool,
    /// Drop compressed-operator entries below this magnitude.
    #[arg(long)]
    pub drop_tolerance: Option<f64>,
    /// Kernel bandwidth for --features (default: median neighbor distance).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Nearest neighbors per point for --features.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Refine with SGD (always on for `train`).
    #[arg(long)]
    pub refine: bool,
    /// Learning rate.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Probability of reintroducing a residual direction per batch.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Negative samples per positive pair.
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Sample positive pairs from random walks of this length instead of edges.
    #[arg(long)]
    pub walk_length: Option<usize>,
    #[arg(long)]
    pub walks_per_node: Option<usize>,
    /// Training fraction of each split.
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Number of random splits.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Stratify splits by class (true or false).
    #[arg(long)]
    pub stratified: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Basis-chain cache file; read when present, written otherwise.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, help = PRESETS_HELP)]
    pub preset: Option<String>,
    /// Settings file: `key = value` lines, or a provenance.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub preset: Option<String>,
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub method: Method,
    pub levels: usize,
    pub retain: f64,
    pub epsilon: Option<f64>,
    pub dim: usize,
    pub lazy: bool,
    pub square_projection: bool,
    pub drop_tolerance: Option<f64>,
    pub sigma: Option<f64>,
    pub neighbors: usize,
    pub refine: bool,
    pub eta: f64,
    pub delta: f64,
    pub negatives: usize,
    pub epochs: usize,
    pub batch: usize,
    pub walk_length: Option<usize>,
    pub walks_per_node: usize,
    pub train_frac: f64,
    pub trials: usize,
    pub stratified: bool,
    pub seed: u64,
    pub cache: Option<PathBuf>,
    #[serde(skip)]
    pub out: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        let e = EmbedConfig::default();
        let t = TrainConfig::default();
        let s = SplitSpec::default();
        Self {
            preset: None,
            edges: None,
            features: None,
            labels: None,
            method: e.method,
            levels: e.levels,
            retain: e.retain,
            epsilon: e.epsilon,
            dim: e.dim,
            lazy: e.lazy,
            square_projection: e.square_projection,
            drop_tolerance: e.drop_tolerance,
            sigma: None,
            neighbors: 10,
            refine: false,
            eta: t.eta,
            delta: t.delta,
            negatives: t.negatives,
            epochs: t.epochs,
            batch: t.batch_size,
            walk_length: None,
            walks_per_node: 1,
            train_frac: s.train_fraction,
            trials: s.trials,
            stratified: s.stratified,
            seed: 0,
            cache: None,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> anyhow::Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| usage(format!("invalid value {value:?} for {key}")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> anyhow::Result<Option<T>> {
    match value.trim() {
        "" | "none" | "null" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

/// Reads `key = value` lines (`#` starts a comment), or the `config` object
/// of a provenance file.
fn read_config_file(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: invalid JSON: {e}", path.display())))?;
        let object = value
            .get("config")
            .unwrap_or(&value)
            .as_object()
            .ok_or_else(|| usage(format!("{}: expected a JSON object", path.display())))?;
        return Ok(object
            .iter()
            .map(|(k, v)| {
                let text = match v {
                    serde_json::Value::Null => String::new(),
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), text)
            })
            .collect());
    }
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| usage(format!("{}:{}: expected key = value", path.display(), k + 1)))?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    pub fn resolve(args: &SharedArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(path) => read_config_file(path)?,
            None => Vec::new(),
        };
        let preset_name = args.preset.clone().or_else(|| {
            file.iter()
                .find(|(k, v)| k.replace('-', "_") == "preset" && !v.is_empty())
                .map(|(_, v)| v.clone())
        });
        let mut s = Settings::default();
        if let Some(name) = &preset_name {
            let values = preset(name).ok_or_else(|| {
                usage(format!("unknown preset {name:?}; known presets: cora, butterfly, amazon, emails, xray"))
            })?;
            for (k, v) in values {
                s.set(k, v)?;
            }
        }
        for (k, v) in &file {
            s.set(k, v)?;
        }
        s.preset = preset_name;
        s.apply_flags(args)?;
        Ok(s)
    }

    fn set(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        let path = |v: &str| if v.trim().is_empty() { None } else { Some(PathBuf::from(v.trim())) };
        match key.replace('-', "_").as_str() {
            "preset" | "out" | "config" => {}
            "edges" => self.edges = path(value),
            "features" => self.features = path(value),
            "labels" => self.labels = path(value),
            "cache" => self.cache = path(value),
            "method" => self.method = value.trim().parse().map_err(|e: ctembed::Error| usage(e.to_string()))?,
            "levels" => self.levels = parse(key, value)?,
            "retain" => self.retain = parse(key, value)?,
            "epsilon" => self.epsilon = optional(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "lazy" => self.lazy = parse(key, value)?,
            "square_projection" => self.square_projection = parse(key, value)?,
            "drop_tolerance" => self.drop_tolerance = optional(key, value)?,
            "sigma" => self.sigma = optional(key, value)?,
            "neighbors" => self.neighbors = parse(key, value)?,
            "refine" => self.refine = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "walk_length" => self.walk_length = optional(key, value)?,
            "walks_per_node" => self.walks_per_node = parse(key, value)?,
            "train_frac" => self.train_frac = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "stratified" => self.stratified = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(usage(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    fn apply_flags(&mut self, a: &SharedArgs) -> anyhow::Result<()> {
        fn take<T: Clone>(slot: &mut T, flag: &Option<T>) {
            if let Some(v) = flag {
                *slot = v.clone();
            }
        }
        fn take_opt<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        take_opt(&mut self.edges, &a.edges);
        take_opt(&mut self.features, &a.features);
        take_opt(&mut self.labels, &a.labels);
        take_opt(&mut self.cache, &a.cache);
        if let Some(m) = &a.method {
            self.set("method", m)?;
        }
        take(&mut self.levels, &a.levels);
        take(&mut self.retain, &a.retain);
        take_opt(&mut self.epsilon, &a.epsilon);
        take(&mut self.dim, &a.dim);
        self.lazy |= a.lazy;
        self.square_projection |= a.square_projection;
        take_opt(&mut self.drop_tolerance, &a.drop_tolerance);
        take_opt(&mut self.sigma, &a.sigma);
        take(&mut self.neighbors, &a.neighbors);
        self.refine |= a.refine;
        take(&mut self.eta, &a.eta);
        take(&mut self.delta, &a.delta);
        take(&mut self.negatives, &a.negatives);
        take(&mut self.epochs, &a.epochs);
        take(&mut self.batch, &a.batch);
        take_opt(&mut self.walk_length, &a.walk_length);
        take(&mut self.walks_per_node, &a.walks_per_node);
        take(&mut self.train_frac, &a.train_frac);
        take(&mut self.trials, &a.trials);
        take(&mut self.stratified, &a.stratified);
        take(&mut self.seed, &a.seed);
        take(&mut self.out, &a.out);
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eta: self.eta,
            delta: self.delta,
            negatives: self.negatives,
            epochs: self.epochs,
            batch_size: self.batch,
            source: match self.walk_length {
                Some(length) => PairSource::Walks {
                    length,
                    walks_per_node: self.walks_per_node,
                },
                None => PairSource::Edges,
            },
            seed: self.seed,
            ..Default::default()
        }
    }

    /// Pipeline settings; numeric bounds are checked here so that bad values
    /// are reported as usage errors.
    pub fn embed_config(&self) -> anyhow::Result<EmbedConfig> {
        let cfg = EmbedConfig {
            method: self.method,
            levels: self.levels,
            retain: self.retain,
            epsilon: self.epsilon,
            dim: self.dim,
            lazy: self.lazy,
            square_projection: self.square_projection,
            drop_tolerance: self.drop_tolerance,
            train: self.refine.then(|| self.train_config()),
            seed: self.seed,
        };
        cfg.chain_config().map_err(|e| usage(e.to_string()))?;
        if let Some(t) = &cfg.train {
            t.validate().map_err(|e| usage(e.to_string()))?;
        }
        if cfg.dim == 0 {
            return Err(usage("--dim must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_frac,
            stratified: self.stratified,
            seed: self.seed,
            trials: self.trials,
        }
    }
}
