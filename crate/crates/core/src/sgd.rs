//! Refinement of the embedding by a learned diagonal scaling.
//!
//! Node `n` is encoded as `z_n = C . Theta[:, n]`, so `z_i . z_j =
//! sum_m C_m^2 Theta_mi Theta_mj`. The loss for a positive pair `(i, j)` with
//! negatives `l` is the negative-sampling cross entropy
//!
//! ```text
//! -log s(z_i . z_j) - sum_l log s(-z_i . z_l),    s(x) = 1 / (1 + e^-x)
//! ```
//!
//! minimized by plain SGD on `C`. With probability `delta` per batch a
//! residual direction from the previous chain level is appended as a new row.

use log::info;
use nalgebra::DMatrix;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DegreeData, LabeledGraph};
use crate::multiscale::{lift_to_original, BasisChain};

/// Where positive pairs come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PairSource {
    /// Each edge is a positive pair, drawn proportionally to its weight.
    Edges,
    /// Every pair of distinct nodes co-occurring on a simulated walk of
    /// `length` steps (`walks_per_node` walks from each node).
    Walks { length: usize, walks_per_node: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub delta: f64,
    pub negatives: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub source: PairSource,
    pub seed: u64,
    /// Number of fixed samples the per-epoch loss is measured on.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            delta: 0.01,
            negatives: 5,
            epochs: 5,
            batch_size: 64,
            source: PairSource::Edges,
            seed: 0,
            eval_samples: 512,
        }
    }
}

impl TrainConfig {
    /// `eta = 0` and `delta = 0` are accepted: they switch off updates and
    /// reintroduction respectively.
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Domain(format!("learning rate {} must be finite and non-negative", self.eta)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Domain(format!("reintroduction probability {} must lie in [0, 1)", self.delta)));
        }
        if self.negatives == 0 || self.epochs == 0 || self.batch_size == 0 || self.eval_samples == 0 {
            return Err(Error::Domain(
                "negatives, epochs, batch size and evaluation samples must be at least 1".into(),
            ));
        }
        if let PairSource::Walks { length, walks_per_node } = self.source {
            if length == 0 || walks_per_node == 0 {
                return Err(Error::Domain("walk length and walks per node must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// The trainable diagonal `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingDiag {
    values: Vec<f64>,
}

impl ScalingDiag {
    pub fn ones(m: usize) -> Self {
        Self { values: vec![1.0; m] }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, v: f64) {
        self.values.push(v);
    }

    /// `C Theta`
    pub fn apply(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = theta.clone();
        for (r, c) in self.values.iter().enumerate() {
            out.row_mut(r).scale_mut(*c);
        }
        out
    }
}

/// `p_i = d_i^{3/4} / sum_j d_j^{3/4}`
pub fn negative_distribution(deg: &DegreeData) -> Vec<f64> {
    let powered: Vec<f64> = deg.degrees.iter().map(|d| d.powf(0.75)).collect();
    let total: f64 = powered.iter().sum();
    powered.iter().map(|p| p / total).collect()
}

/// Positive pairs and the negative-sampling distribution.
#[derive(Debug, Clone)]
pub struct PairSampler {
    pairs: Vec<(usize, usize)>,
    pair_dist: WeightedIndex<f64>,
    negative_probs: Vec<f64>,
    negative_dist: WeightedIndex<f64>,
    nodes: usize,
}

impl PairSampler {
    /// Builds the sampler; walk contexts are simulated from `seed`.
    pub fn new(g: &LabeledGraph, deg: &DegreeData, source: PairSource, seed: u64) -> Result<Self> {
        let n = g.node_count();
        if deg.len() != n {
            return Err(Error::Dimension("degree data does not match the graph".into()));
        }
        let (pairs, weights): (Vec<(usize, usize)>, Vec<f64>) = match source {
            PairSource::Edges => g
                .edges()
                .iter()
                .filter(|e| e.i != e.j && e.w > 0.0)
                .map(|e| ((e.i, e.j), e.w))
                .unzip(),
            PairSource::Walks { length, walks_per_node } => {
                let pairs = walk_contexts(g, length, walks_per_node, seed);
                let weights = vec![1.0; pairs.len()];
                (pairs, weights)
            }
        };
        if pairs.is_empty() {
            return Err(Error::Domain("no positive pairs: the graph has no edges between distinct nodes".into()));
        }
        let pair_dist = WeightedIndex::new(&weights).map_err(|e| Error::Domain(format!("pair weights: {e}")))?;
        let negative_probs = negative_distribution(deg);
        let negative_dist =
            WeightedIndex::new(&negative_probs).map_err(|e| Error::Domain(format!("negative weights: {e}")))?;
        Ok(Self {
            pairs,
            pair_dist,
            negative_probs,
            negative_dist,
            nodes: n,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn negative_probabilities(&self) -> &[f64] {
        &self.negative_probs
    }

    /// A positive pair in random orientation.
    pub fn positive<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let (a, b) = self.pairs[self.pair_dist.sample(rng)];
        if rng.gen_bool(0.5) {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn negative<R: Rng>(&self, rng: &mut R) -> usize {
        self.negative_dist.sample(rng)
    }

    pub fn sample<R: Rng>(&self, negatives: usize, rng: &mut R) -> Sample {
        let (i, j) = self.positive(rng);
        let negatives = (0..negatives).map(|_| self.negative(rng)).collect();
        Sample { i, j, negatives }
    }
}

fn walk_contexts(g: &LabeledGraph, length: usize, walks_per_node: usize, seed: u64) -> Vec<(usize, usize)> {
    let n = g.node_count();
    let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in g.edges() {
        if e.w > 0.0 {
            neighbors[e.i].push((e.j, e.w));
            if e.i != e.j {
                neighbors[e.j].push((e.i, e.w));
            }
        }
    }
    let steppers: Vec<Option<WeightedIndex<f64>>> = neighbors
        .iter()
        .map(|nb| WeightedIndex::new(nb.iter().map(|p| p.1)).ok())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for _ in 0..walks_per_node {
        for start in 0..n {
            let mut walk = vec![start];
            let mut at = start;
            for _ in 0..length {
                let Some(step) = &steppers[at] else { break };
                at = neighbors[at][step.sample(&mut rng)].0;
                walk.push(at);
            }
            for a in 0..walk.len() {
                for b in (a + 1)..walk.len() {
                    if walk[a] != walk[b] {
                        pairs.push((walk[a], walk[b]));
                    }
                }
            }
        }
    }
    pairs
}

/// One positive pair with its negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub i: usize,
    pub j: usize,
    pub negatives: Vec<usize>,
}

/// `log(1 + e^{-x}) = -log s(x)`, stable for large `|x|`.
fn softplus_neg(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sum_m C_m^2 Theta_ma Theta_mb`
pub fn scaled_dot(c: &[f64], theta: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    c.iter()
        .enumerate()
        .map(|(m, cm)| cm * cm * theta[(m, a)] * theta[(m, b)])
        .sum()
}

/// Negative-sampling loss of one positive pair.
pub fn pair_loss(c: &ScalingDiag, theta: &DMatrix<f64>, i: usize, j: usize, negatives: &[usize]) -> f64 {
    let c = c.values();
    let mut loss = softplus_neg(scaled_dot(c, theta, i, j));
    for &l in negatives {
        loss += softplus_neg(-scaled_dot(c, theta, i, l));
    }
    loss
}

pub fn batch_loss(c: &ScalingDiag, theta: &DMatrix<f64>, batch: &[Sample]) -> f64 {
    batch.iter().map(|s| pair_loss(c, theta, s.i, s.j, &s.negatives)).sum()
}

/// Gradient of the summed batch loss with respect to `C`.
pub fn loss_gradient(c: &ScalingDiag, theta: &DMatrix<f64>, batch: &[Sample]) -> Vec<f64> {
    let cv = c.values();
    let mut grad = vec![0.0; cv.len()];
    for s in batch {
        // d/dC_m of -log s(x) is -(1 - s(x)) dx/dC_m, and dx/dC_m = 2 C_m Theta_ma Theta_mb.
        let w = -(1.0 - sigmoid(scaled_dot(cv, theta, s.i, s.j)));
        accumulate(&mut grad, cv, theta, s.i, s.j, w);
        for &l in &s.negatives {
            let w = sigmoid(scaled_dot(cv, theta, s.i, l));
            accumulate(&mut grad, cv, theta, s.i, l, w);
        }
    }
    grad
}

fn accumulate(grad: &mut [f64], c: &[f64], theta: &DMatrix<f64>, a: usize, b: usize, weight: f64) {
    for (m, g) in grad.iter_mut().enumerate() {
        *g += weight * 2.0 * c[m] * theta[(m, a)] * theta[(m, b)];
    }
}

/// Columns of the previous level that can still be reintroduced.
#[derive(Debug, Clone)]
pub struct ResidualPool {
    /// Lifted basis of the last level, `N x j_K`.
    lifted: DMatrix<f64>,
    /// Level-relative basis of the last level, `j_{K-1} x j_K`.
    relative: DMatrix<f64>,
    remaining: Vec<usize>,
}

impl ResidualPool {
    /// Pool over the columns of `U_{K-1}` for a chain of depth `K >= 1`.
    pub fn from_chain(chain: &BasisChain) -> Result<Option<Self>> {
        let depth = chain.depth();
        if depth == 0 {
            return Ok(None);
        }
        let lifted = lift_to_original(chain, depth)?;
        let relative = chain.bases[depth - 1].clone();
        let remaining = (0..relative.nrows()).collect();
        Ok(Some(Self {
            lifted,
            relative,
            remaining,
        }))
    }

    pub fn remaining(&self) -> usize {
        self.remaining.len()
    }

    /// `U_K U_K^T u` for column `col` of the lifted `U_{K-1}`; since
    /// `U_K = U_{K-1} B_K`, this is `U_K B_K[col, :]^T`.
    pub fn projected_column(&self, col: usize) -> nalgebra::DVector<f64> {
        &self.lifted * self.relative.row(col).transpose()
    }
}

/// Appends the projection of a random unused residual column as a new row of
/// `theta` and a 1 to `c`. Returns the column used, or `None` when the pool
/// is exhausted.
pub fn reintroduce_residual<R: Rng>(
    theta: &mut DMatrix<f64>,
    c: &mut ScalingDiag,
    pool: &mut ResidualPool,
    rng: &mut R,
) -> Option<usize> {
    if pool.remaining.is_empty() {
        info!("no residual columns left to reintroduce");
        return None;
    }
    let pick = rng.gen_range(0..pool.remaining.len());
    let col = pool.remaining.swap_remove(pick);
    let row = pool.projected_column(col);
    let m = theta.nrows();
    let grown = std::mem::replace(theta, DMatrix::zeros(0, 0)).insert_row(m, 0.0);
    *theta = grown;
    theta.row_mut(m).copy_from(&row.transpose());
    c.push(1.0);
    Some(col)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// `C Theta`, with any reintroduced rows.
    pub embedding: DMatrix<f64>,
    pub scaling: ScalingDiag,
    /// Mean loss on the fixed evaluation samples after each epoch.
    pub loss_trace: Vec<f64>,
    pub reintroduced: usize,
    /// Power of two the loss scale was divided by; see [`working_scale`].
    pub scale: f64,
}

/// Power of two closest to the RMS column norm of `theta`.
///
/// Commute-time coordinates carry a factor of `sqrt(vol)`, which puts dot
/// products far into the linear part of the softplus, where the gradient in
/// `C` does not shrink and any fixed step overshoots. The loss is therefore
/// taken on `theta / scale`. A power of two keeps `scale * (theta / scale)`
/// exact.
pub fn working_scale(theta: &DMatrix<f64>) -> f64 {
    if theta.ncols() == 0 {
        return 1.0;
    }
    let rms = (theta.norm_squared() / theta.ncols() as f64).sqrt();
    if !(rms > 0.0 && rms.is_finite()) {
        return 1.0;
    }
    2f64.powi(rms.log2().round() as i32)
}

/// Runs SGD on `C` starting from the identity scaling. Each batch moves `C`
/// by `eta` times the mean per-sample gradient.
pub fn train(
    theta: &DMatrix<f64>,
    chain: Option<&BasisChain>,
    sampler: &PairSampler,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if theta.ncols() != sampler.node_count() {
        return Err(Error::Dimension(format!(
            "embedding has {} columns but the sampler covers {} nodes",
            theta.ncols(),
            sampler.node_count()
        )));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("embedding has non-finite entries".into()));
    }
    let scale = working_scale(theta);
    let mut theta = theta / scale;
    let mut c = ScalingDiag::ones(theta.nrows());
    let mut pool = match chain {
        Some(ch) if cfg.delta > 0.0 => {
            if ch.original_dim != theta.ncols() {
                return Err(Error::Dimension("chain and embedding sizes differ".into()));
            }
            ResidualPool::from_chain(ch)?
        }
        _ => None,
    };

    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    eval_rng.set_stream(1);
    let eval_set: Vec<Sample> = (0..cfg.eval_samples)
        .map(|_| sampler.sample(cfg.negatives, &mut eval_rng))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_epoch = sampler.pairs().len();
    let batches = per_epoch.div_ceil(cfg.batch_size);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut reintroduced = 0;

    for epoch in 0..cfg.epochs {
        for b in 0..batches {
            let size = cfg.batch_size.min(per_epoch - b * cfg.batch_size);
            if let Some(p) = pool.as_mut() {
                if cfg.delta > 0.0 && rng.gen_bool(cfg.delta) && reintroduce_residual(&mut theta, &mut c, p, &mut rng).is_some() {
                    reintroduced += 1;
                }
            }
            let batch: Vec<Sample> = (0..size).map(|_| sampler.sample(cfg.negatives, &mut rng)).collect();
            let loss = batch_loss(&c, &theta, &batch);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, eta: cfg.eta });
            }
            if cfg.eta > 0.0 {
                let grad = loss_gradient(&c, &theta, &batch);
                let step = cfg.eta / size as f64;
                for (cm, g) in c.values.iter_mut().zip(&grad) {
                    *cm -= step * g;
                }
                if c.values.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteLoss { epoch, batch: b, eta: cfg.eta });
                }
            }
        }
        let mean = batch_loss(&c, &theta, &eval_set) / eval_set.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: batches,
                eta: cfg.eta,
            });
        }
        trace.push(mean);
    }

    Ok(TrainOutcome {
        embedding: c.apply(&theta) * scale,
        scaling: c,
        loss_trace: trace,
        reintroduced,
        scale,
    })
}
