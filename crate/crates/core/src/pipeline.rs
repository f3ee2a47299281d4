//! End-to-end embedding: component extraction, walk, deflation, chain,
//! Green function, factorization and optional refinement.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::info;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_embedding, MetricsReport, SplitSpec, DEFAULT_NEIGHBORS};
use crate::graph::{giant_component_with_report, lazy_walk, transition_matrix, DegreeData, LabeledGraph};
use crate::green::{deflate_stationary, embedding_from_green, schultz_green, EmbeddingMatrix, GreenApprox};
use crate::linalg::LinearOperator;
use crate::multiscale::{read_chain_cache, write_chain_cache, Backend, ChainConfig, Squaring, Truncation, TruncationPolicy};
use crate::sgd::{train, PairSampler, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "svd-ct")]
    SvdCt,
    #[serde(rename = "dwa-ct")]
    DwaCt,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::SvdCt => "svd-ct",
            Method::DwaCt => "dwa-ct",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd-ct" | "svd" => Ok(Method::SvdCt),
            "dwa-ct" | "dwa" => Ok(Method::DwaCt),
            other => Err(Error::Domain(format!("unknown method {other:?} (expected svd-ct or dwa-ct)"))),
        }
    }
}

pub const DEFAULT_DWA_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub method: Method,
    pub levels: usize,
    /// Fraction of singular values kept per level (SVD backend).
    pub retain: f64,
    /// Threshold; selects threshold truncation for the SVD backend and is
    /// the pivot precision of the DWA backend.
    pub epsilon: Option<f64>,
    pub dim: usize,
    /// Use the lazy walk `(I + T) / 2`, required for bipartite graphs.
    pub lazy: bool,
    /// Square after projecting instead of before.
    pub square_projection: bool,
    pub drop_tolerance: Option<f64>,
    pub train: Option<TrainConfig>,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            method: Method::SvdCt,
            levels: 4,
            retain: 0.5,
            epsilon: None,
            dim: 16,
            lazy: false,
            square_projection: false,
            drop_tolerance: None,
            train: None,
            seed: 0,
        }
    }
}

impl EmbedConfig {
    pub fn chain_config(&self) -> Result<ChainConfig> {
        let (mode, backend) = match self.method {
            Method::SvdCt => match self.epsilon {
                Some(e) => (Truncation::Threshold(e), Backend::Svd),
                None => (Truncation::RetainFraction(self.retain), Backend::Svd),
            },
            Method::DwaCt => (
                Truncation::Threshold(self.epsilon.unwrap_or(DEFAULT_DWA_EPSILON)),
                Backend::Dwa,
            ),
        };
        Ok(ChainConfig {
            policy: TruncationPolicy::new(mode, self.levels)?,
            backend,
            squaring: if self.square_projection {
                Squaring::SquareProjection
            } else {
                Squaring::ProjectSquare
            },
            drop_tolerance: self.drop_tolerance,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EmbedResult {
    /// The component that was embedded.
    pub graph: LabeledGraph,
    pub dropped_nodes: usize,
    pub degrees: DegreeData,
    pub green: GreenApprox,
    /// Factorization before refinement.
    pub base: EmbeddingMatrix,
    /// Final coordinates, `d' x N` (`d' >= d` when rows were reintroduced).
    pub coords: DMatrix<f64>,
    pub training: Option<TrainOutcome>,
    /// Chain, Green function, factorization and training; excludes I/O.
    pub runtime_seconds: f64,
}

pub fn embed(g: &LabeledGraph, cfg: &EmbedConfig) -> Result<EmbedResult> {
    embed_with_cache(g, cfg, None)
}

/// Working component, its degrees and the Green function, without the
/// embedding step. `cache` behaves as in [`embed_with_cache`].
pub struct GreenStage {
    pub graph: LabeledGraph,
    pub dropped_nodes: usize,
    pub degrees: DegreeData,
    pub green: GreenApprox,
}

pub fn green_stage(g: &LabeledGraph, cfg: &EmbedConfig, cache: Option<&Path>) -> Result<GreenStage> {
    let chain_cfg = cfg.chain_config()?;
    let (graph, dropped_nodes) = giant_component_with_report(g)?;
    if dropped_nodes > 0 {
        info!("kept the largest component; dropped {dropped_nodes} nodes");
    }
    if graph.node_count() < 2 {
        return Err(Error::Domain("the largest component has a single node".into()));
    }
    if !cfg.lazy && graph.is_bipartite() {
        return Err(Error::Divergence(
            "the graph is bipartite, so the walk has eigenvalue -1 and the Green series diverges; \
             rerun with the lazy walk option"
                .into(),
        ));
    }
    let (t, degrees) = transition_matrix(&graph)?;
    let (walk, time_scale) = if cfg.lazy { (lazy_walk(&t)?, 0.5) } else { (t, 1.0) };
    let deflated: Arc<dyn LinearOperator> = Arc::new(deflate_stationary(Arc::new(walk), &degrees.stationary)?);

    let green = match cache.filter(|p| p.exists()) {
        Some(path) => {
            info!("reading basis chain from {}", path.display());
            let (chain, ops) = read_chain_cache(BufReader::new(File::open(path)?))?;
            GreenApprox::from_chain(deflated, chain, ops)?
        }
        None => {
            let green = schultz_green(deflated, &chain_cfg)?;
            if let Some(path) = cache {
                write_chain_cache(BufWriter::new(File::create(path)?), green.chain(), green.operators())?;
            }
            green
        }
    }
    .with_time_scale(time_scale);
    info!("chain dimensions {:?}", green.chain().dimensions());
    Ok(GreenStage {
        graph,
        dropped_nodes,
        degrees,
        green,
    })
}

/// As [`embed`], reading the basis chain from `cache` when the file exists
/// and writing it there otherwise. The cache is only checked for matching
/// dimensions, so it must come from a run with the same settings.
pub fn embed_with_cache(g: &LabeledGraph, cfg: &EmbedConfig, cache: Option<&Path>) -> Result<EmbedResult> {
    cfg.chain_config()?;
    if let Some(t) = &cfg.train {
        t.validate()?;
    }
    let start = Instant::now();
    let GreenStage {
        graph,
        dropped_nodes,
        degrees,
        green,
    } = green_stage(g, cfg, cache)?;
    let n = graph.node_count();
    if cfg.dim == 0 || cfg.dim > n {
        return Err(Error::Domain(format!(
            "embedding dimension {} must lie in 1..={n} (nodes in the working component)",
            cfg.dim
        )));
    }

    let base = embedding_from_green(&green, &degrees, cfg.dim)?;
    let training = match &cfg.train {
        Some(tc) => {
            let sampler = PairSampler::new(&graph, &degrees, tc.source, tc.seed)?;
            Some(train(&base.coords, Some(green.chain()), &sampler, tc)?)
        }
        None => None,
    };
    let runtime_seconds = start.elapsed().as_secs_f64();
    let coords = training
        .as_ref()
        .map(|t| t.embedding.clone())
        .unwrap_or_else(|| base.coords.clone());
    Ok(EmbedResult {
        graph,
        dropped_nodes,
        degrees,
        green,
        base,
        coords,
        training,
        runtime_seconds,
    })
}

/// Embeds `dataset` once (timed) and scores kNN over the split trials.
pub fn benchmark_run(dataset: &LabeledGraph, cfg: &EmbedConfig, split: &SplitSpec) -> Result<MetricsReport> {
    let result = embed(dataset, cfg)?;
    let f1 = evaluate_embedding(&result.coords, result.graph.labels(), split, DEFAULT_NEIGHBORS)?;
    Ok(MetricsReport::new(cfg.method.name(), cfg.dim, result.runtime_seconds, f1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cliques() -> LabeledGraph {
        let mut edges = Vec::new();
        for block in 0..2 {
            for a in 0..5 {
                for b in (a + 1)..5 {
                    edges.push((5 * block + a, 5 * block + b, 1.0));
                }
            }
        }
        edges.push((4, 5, 1.0));
        let mut g = LabeledGraph::from_edges(10, edges, None).unwrap();
        let labels: Vec<(String, String)> = (0..10).map(|n| (n.to_string(), (n / 5).to_string())).collect();
        assert!(g.attach_labels(&labels).is_empty());
        g
    }

    #[test]
    fn triangle_end_to_end() {
        let g = LabeledGraph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], None).unwrap();
        let cfg = EmbedConfig {
            levels: 2,
            retain: 1.0,
            dim: 2,
            ..Default::default()
        };
        let r = embed(&g, &cfg).unwrap();
        let d = (r.coords.column(0) - r.coords.column(1)).norm_squared();
        assert!((d - 4.0).abs() < 0.2, "{d}");
    }

    #[test]
    fn bipartite_needs_lazy_walk() {
        let g = LabeledGraph::from_edges(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)], None).unwrap();
        let cfg = EmbedConfig {
            levels: 8,
            retain: 1.0,
            dim: 3,
            ..Default::default()
        };
        assert!(matches!(embed(&g, &cfg), Err(Error::Divergence(_))));
        let lazy = EmbedConfig { lazy: true, levels: 12, ..cfg };
        let r = embed(&g, &lazy).unwrap();
        // Path of 4 nodes: CT(0, 3) = vol * 3 = 18.
        let ct = crate::green::commute_time(&r.green, 0, 3, &r.degrees).unwrap();
        assert!((ct - 18.0).abs() < 1e-6, "{ct}");
    }

    #[test]
    fn cliques_classify_perfectly() {
        let g = two_cliques();
        let cfg = EmbedConfig {
            levels: 4,
            retain: 0.5,
            dim: 2,
            ..Default::default()
        };
        let split = SplitSpec {
            trials: 3,
            ..Default::default()
        };
        let report = benchmark_run(&g, &cfg, &split).unwrap();
        assert_eq!(report.f1_mean, 1.0);
        assert_eq!(report.f1_trials.len(), 3);
    }

    #[test]
    fn cache_round_trip_reproduces_embedding() {
        let g = two_cliques();
        let cfg = EmbedConfig {
            dim: 3,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.bin");
        let first = embed_with_cache(&g, &cfg, Some(&path)).unwrap();
        assert!(path.exists());
        let second = embed_with_cache(&g, &cfg, Some(&path)).unwrap();
        assert_eq!(first.coords, second.coords);
    }

    #[test]
    fn dimension_must_fit_component() {
        let g = two_cliques();
        let cfg = EmbedConfig {
            dim: 11,
            ..Default::default()
        };
        assert!(embed(&g, &cfg).is_err());
    }
}
