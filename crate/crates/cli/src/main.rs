//! `ctembed`: commute-time node embeddings from the command line.

mod settings;

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use ctembed::eval::{evaluate_embedding, render_table, MetricsReport, DEFAULT_NEIGHBORS};
use ctembed::graph::{
    dense_vectors_to_graph, load_edge_list, load_feature_csv, read_label_file, Bandwidth, EdgeListOptions,
    KernelParams, LabeledGraph,
};
use ctembed::green::{commute_time, exact_commute_oracle, ORACLE_LIMIT};
use ctembed::io::{read_embedding_csv, write_commute_csv, write_embedding_csv, write_loss_trace, write_plot_csv, CommuteRow};
use ctembed::pipeline::{embed_with_cache, green_stage, Method};

use settings::{Settings, SharedArgs};

/// Error caused by bad input or usage rather than a failed computation.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "ctembed", version, about = "Commute-time node embeddings for undirected graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a graph and write embedding.csv, loss_trace.csv and provenance.json.
    Embed(SharedArgs),
    /// Embed and refine the coordinate scaling with negative-sampling SGD.
    Train(SharedArgs),
    /// Score an embedding with kNN classification and write metrics.json.
    Evaluate(EvaluateArgs),
    /// Commute times for node pairs, optionally checked against the exact value.
    Commute(CommuteArgs),
    /// Run svd-ct and dwa-ct at matched settings and write compare.json.
    Compare(SharedArgs),
    /// Write the leading 2 or 3 coordinates with labels to plot.csv.
    ExportPlot(PlotArgs),
}

#[derive(Args)]
struct EvaluateArgs {
    /// Embedding CSV written by `embed` or `train`.
    #[arg(long)]
    embedding: PathBuf,
    #[command(flatten)]
    shared: SharedArgs,
}

#[derive(Args)]
struct CommuteArgs {
    /// Node pair `a,b` by node id; repeatable.
    #[arg(long = "pair", required = true)]
    pairs: Vec<String>,
    /// Also compute exact commute times (at most 2000 nodes).
    #[arg(long)]
    verify: bool,
    #[command(flatten)]
    shared: SharedArgs,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    embedding: PathBuf,
    /// Number of leading coordinates, 2 or 3.
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[command(flatten)]
    shared: SharedArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() || is_input_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_input_error(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<ctembed::Error>(),
        Some(ctembed::Error::Parse { .. }) | Some(ctembed::Error::Csv(_))
    )
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Embed(args) => cmd_embed(Settings::resolve(&args)?, "embed"),
        Command::Train(args) => {
            let mut s = Settings::resolve(&args)?;
            s.refine = true;
            cmd_embed(s, "train")
        }
        Command::Evaluate(args) => cmd_evaluate(&args.embedding, Settings::resolve(&args.shared)?),
        Command::Commute(args) => cmd_commute(&args.pairs, args.verify, Settings::resolve(&args.shared)?),
        Command::Compare(args) => cmd_compare(Settings::resolve(&args)?),
        Command::ExportPlot(args) => cmd_export_plot(&args.embedding, args.dims, Settings::resolve(&args.shared)?),
    }
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| usage(format!("cannot open {}: {e}", path.display())))
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn read_labels(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    read_label_file(open(path)?).with_context(|| format!("reading labels {}", path.display()))
}

/// Loads the input graph and attaches labels when given.
fn load_graph(s: &Settings) -> anyhow::Result<LabeledGraph> {
    let mut g = match (&s.edges, &s.features) {
        (Some(path), None) => load_edge_list(open(path)?, &EdgeListOptions::default())
            .with_context(|| format!("reading edge list {}", path.display()))?,
        (None, Some(path)) => {
            let vectors =
                load_feature_csv(open(path)?).with_context(|| format!("reading features {}", path.display()))?;
            let ids = (0..vectors.len()).map(|k| k.to_string()).collect();
            let kernel = KernelParams {
                bandwidth: s.sigma.map_or(Bandwidth::Auto, Bandwidth::Fixed),
                neighbors: s.neighbors,
            };
            dense_vectors_to_graph(&vectors, &kernel, Some(ids)).context("building the feature graph")?
        }
        (Some(_), Some(_)) => return Err(usage("give either --edges or --features, not both")),
        (None, None) => return Err(usage("an input graph is required: --edges PATH or --features PATH")),
    };
    if let Some(path) = &s.labels {
        let unknown = g.attach_labels(&read_labels(path)?);
        if !unknown.is_empty() {
            warn!("{} labeled ids are not graph nodes, e.g. {}", unknown.len(), first_ids(&unknown));
        }
    }
    Ok(g)
}

fn first_ids(ids: &[String]) -> String {
    ids.iter().take(5).map(String::as_str).collect::<Vec<_>>().join(", ")
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_embed(s: Settings, command: &str) -> anyhow::Result<()> {
    let g = load_graph(&s)?;
    let cfg = s.embed_config()?;
    let r = embed_with_cache(&g, &cfg, s.cache.as_deref()).context("embedding")?;

    let mut w = create(&s.out, "embedding.csv")?;
    write_embedding_csv(&mut w, r.graph.ids(), &r.coords)?;
    w.flush()?;
    let trace = r.training.as_ref().map(|t| t.loss_trace.clone()).unwrap_or_default();
    let mut w = create(&s.out, "loss_trace.csv")?;
    write_loss_trace(&mut w, &trace)?;
    w.flush()?;

    let chain = r.green.chain();
    let provenance = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": s,
        "nodes": r.graph.node_count(),
        "dropped_nodes": r.dropped_nodes,
        "time_scale": r.green.time_scale(),
        "chain": {
            "dimensions": chain.dimensions(),
            "retained": chain.retained,
            "residuals": chain.residuals,
        },
        "eigenvalues": r.base.eigenvalues,
        "residual_eigenvalue": r.base.residual_eigenvalue,
        "output_dimension": r.coords.nrows(),
        "reintroduced": r.training.as_ref().map(|t| t.reintroduced.clone()),
        "scaling": r.training.as_ref().map(|t| t.scaling.values().to_vec()),
        "runtime_seconds": r.runtime_seconds,
    });
    write_json(&s.out, "provenance.json", &provenance)?;
    println!(
        "embedded {} nodes into {} dimensions in {:.3} s; wrote {}",
        r.graph.node_count(),
        r.coords.nrows(),
        r.runtime_seconds,
        s.out.display()
    );
    Ok(())
}

fn cmd_evaluate(embedding: &Path, s: Settings) -> anyhow::Result<()> {
    let labels_path = s.labels.as_ref().ok_or_else(|| usage("evaluate needs --labels PATH"))?;
    let (ids, coords) =
        read_embedding_csv(open(embedding)?).with_context(|| format!("reading embedding {}", embedding.display()))?;
    let pairs = read_labels(labels_path)?;
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let missing: Vec<String> = pairs
        .iter()
        .filter(|(id, _)| !index.contains_key(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(usage(format!(
            "{} labeled ids are missing from the embedding; first: {}",
            missing.len(),
            first_ids(&missing)
        )));
    }
    let classes: BTreeSet<&str> = pairs.iter().map(|(_, c)| c.as_str()).collect();
    let class_id: HashMap<&str, u32> = classes.iter().enumerate().map(|(k, c)| (*c, k as u32)).collect();
    let labels = pairs
        .iter()
        .map(|(id, c)| (index[id.as_str()], class_id[c.as_str()]))
        .collect();
    s.split_spec().validate().map_err(|e| usage(e.to_string()))?;
    let f1 = evaluate_embedding(&coords, &labels, &s.split_spec(), DEFAULT_NEIGHBORS).context("evaluating")?;
    let report = MetricsReport::new(s.method.name(), coords.nrows(), 0.0, f1);
    write_json(&s.out, "metrics.json", &serde_json::to_value(&report)?)?;
    print!("{}", render_table(&[(dataset_name(&s, embedding), report)]));
    Ok(())
}

fn dataset_name(s: &Settings, fallback: &Path) -> String {
    let path = s.edges.as_ref().or(s.features.as_ref()).map(PathBuf::as_path).unwrap_or(fallback);
    path.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
}

fn parse_pair(g: &LabeledGraph, text: &str) -> anyhow::Result<(usize, usize)> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| usage(format!("pair {text:?} must look like a,b")))?;
    let (a, b) = (a.trim(), b.trim());
    if a == b {
        return Err(usage(format!("pair {text:?} repeats a node; commute time needs two distinct nodes")));
    }
    let find = |id: &str| {
        g.index_of(id)
            .ok_or_else(|| usage(format!("node {id:?} is not in the working component of the graph")))
    };
    Ok((find(a)?, find(b)?))
}

fn cmd_commute(pairs: &[String], verify: bool, s: Settings) -> anyhow::Result<()> {
    let g = load_graph(&s)?;
    let cfg = s.embed_config()?;
    let stage = green_stage(&g, &cfg, s.cache.as_deref()).context("building the Green function")?;
    let nodes: Vec<(usize, usize)> = pairs.iter().map(|p| parse_pair(&stage.graph, p)).collect::<Result<_, _>>()?;
    let exact = if verify {
        if stage.graph.node_count() <= ORACLE_LIMIT {
            Some(exact_commute_oracle(&stage.graph).context("exact oracle")?)
        } else {
            warn!(
                "skipping verification: {} nodes exceed the exact-oracle limit of {ORACLE_LIMIT}",
                stage.graph.node_count()
            );
            None
        }
    } else {
        None
    };
    let mut rows = Vec::new();
    for &(i, j) in &nodes {
        let ct = commute_time(&stage.green, i, j, &stage.degrees)?;
        let exact = exact.as_ref().map(|m| {
            let e = m[(i, j)];
            (e, (ct - e).abs() / e)
        });
        rows.push(CommuteRow {
            source: stage.graph.id(i).to_string(),
            target: stage.graph.id(j).to_string(),
            commute_time: ct,
            exact,
        });
    }
    let mut w = create(&s.out, "commute.csv")?;
    write_commute_csv(&mut w, &rows)?;
    w.flush()?;
    for r in &rows {
        match r.exact {
            Some((e, rel)) => println!(
                "{} {} commute time {:.6} exact {:.6} relative error {:.3e}",
                r.source, r.target, r.commute_time, e, rel
            ),
            None => println!("{} {} commute time {:.6}", r.source, r.target, r.commute_time),
        }
    }
    Ok(())
}

fn cmd_compare(s: Settings) -> anyhow::Result<()> {
    let g = load_graph(&s)?;
    if g.labels().is_empty() {
        return Err(usage("compare needs --labels PATH"));
    }
    let split = s.split_spec();
    let name = dataset_name(&s, Path::new("data"));
    let mut entries = Vec::new();
    for method in [Method::SvdCt, Method::DwaCt] {
        let mut cfg = s.embed_config()?;
        cfg.method = method;
        info!("running {}", method.name());
        let r = embed_with_cache(&g, &cfg, None).with_context(|| format!("embedding with {}", method.name()))?;
        let f1 = evaluate_embedding(&r.coords, r.graph.labels(), &split, DEFAULT_NEIGHBORS)?;
        entries.push((name.clone(), MetricsReport::new(method.name(), cfg.dim, r.runtime_seconds, f1)));
    }
    let reports: Vec<&MetricsReport> = entries.iter().map(|(_, r)| r).collect();
    write_json(
        &s.out,
        "compare.json",
        &json!({ "dataset": name, "config": s, "methods": reports }),
    )?;
    print!("{}", render_table(&entries));
    Ok(())
}

fn cmd_export_plot(embedding: &Path, dims: usize, s: Settings) -> anyhow::Result<()> {
    let (ids, coords) =
        read_embedding_csv(open(embedding)?).with_context(|| format!("reading embedding {}", embedding.display()))?;
    let labels: Option<HashMap<String, String>> = match &s.labels {
        Some(path) => Some(read_labels(path)?.into_iter().collect()),
        None => None,
    };
    if !(dims == 2 || dims == 3) {
        return Err(usage(format!("--dims must be 2 or 3, not {dims}")));
    }
    if coords.nrows() < dims {
        return Err(usage(format!(
            "the embedding has {} coordinates, fewer than the {dims} requested",
            coords.nrows()
        )));
    }
    if ids.is_empty() {
        return Err(anyhow!("the embedding has no rows"));
    }
    let mut w = create(&s.out, "plot.csv")?;
    write_plot_csv(&mut w, &ids, &coords, dims, labels.as_ref())?;
    w.flush()?;
    println!("wrote {} points to {}", ids.len(), s.out.join("plot.csv").display());
    Ok(())
}
