//! Node-classification evaluation and a simulation oracle for commute times.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;

pub const DEFAULT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
    pub trials: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            stratified: true,
            seed: 0,
            trials: 10,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Domain(format!(
                "train fraction {} must lie in (0, 1)",
                self.train_fraction
            )));
        }
        if self.trials == 0 {
            return Err(Error::Domain("at least one trial is required".into()));
        }
        Ok(())
    }

    /// Train and test node lists for one trial.
    ///
    /// Stratified splits put `round(fraction * n_c)` members of each class in
    /// the training set, at least one, and leave at least one member of every
    /// class with two or more members for testing.
    pub fn split(&self, labels: &BTreeMap<usize, u32>, trial: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate()?;
        if labels.len() < 2 {
            return Err(Error::Domain("need at least two labeled nodes to split".into()));
        }
        let mut rng = trial_rng(self.seed, trial);
        let mut train = Vec::new();
        let mut test = Vec::new();
        if self.stratified {
            let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (&node, &class) in labels {
                by_class.entry(class).or_default().push(node);
            }
            for members in by_class.values_mut() {
                members.shuffle(&mut rng);
                let n = members.len();
                let take = ((self.train_fraction * n as f64).round() as usize).clamp(1, (n - 1).max(1));
                train.extend_from_slice(&members[..take]);
                test.extend_from_slice(&members[take..]);
            }
        } else {
            let mut nodes: Vec<usize> = labels.keys().copied().collect();
            nodes.shuffle(&mut rng);
            let n = nodes.len();
            let take = ((self.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
            train.extend_from_slice(&nodes[..take]);
            test.extend_from_slice(&nodes[take..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((train, test))
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// k-nearest-neighbor vote over columns of `coords` (`d x N`).
///
/// Distance ties go to the lower node index, vote ties to the smaller class.
pub fn knn_classify(
    coords: &DMatrix<f64>,
    labels: &BTreeMap<usize, u32>,
    train: &[usize],
    test: &[usize],
    k: usize,
) -> Result<Vec<u32>> {
    if train.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    if k == 0 || k > train.len() {
        return Err(Error::Domain(format!("k = {k} must lie in 1..={}", train.len())));
    }
    let n = coords.ncols();
    if let Some(&bad) = train.iter().chain(test).find(|&&x| x >= n) {
        return Err(Error::IndexOutOfRange(format!("node {bad} outside 0..{n}")));
    }
    if coords.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("embedding has non-finite entries".into()));
    }
    let mut train_labels = Vec::with_capacity(train.len());
    for &t in train {
        let l = labels
            .get(&t)
            .ok_or_else(|| Error::Domain(format!("training node {t} has no label")))?;
        train_labels.push(*l);
    }
    Ok(test
        .par_iter()
        .map(|&q| {
            let query = coords.column(q);
            let mut dist: Vec<(f64, usize, u32)> = train
                .iter()
                .zip(&train_labels)
                .map(|(&t, &l)| ((coords.column(t) - query).norm_squared(), t, l))
                .collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
            for &(_, _, l) in &dist[..k] {
                *votes.entry(l).or_default() += 1;
            }
            // BTreeMap iterates classes in increasing order; keep the first maximum.
            let mut best = (0u32, 0usize);
            for (&class, &count) in &votes {
                if count > best.1 {
                    best = (class, count);
                }
            }
            best.0
        })
        .collect())
}

/// Unweighted mean over the classes present in `truth` of
/// `TP / (TP + (FP + FN) / 2)`.
pub fn f1_macro(predicted: &[u32], truth: &[u32]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Domain("no labels to score".into()));
    }
    let classes: BTreeSet<u32> = truth.iter().copied().collect();
    let mut total = 0.0;
    for &c in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fneg = 0usize;
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let denom = tp as f64 + 0.5 * (fp + fneg) as f64;
        total += if denom > 0.0 { tp as f64 / denom } else { 0.0 };
    }
    Ok(total / classes.len() as f64)
}

/// Per-trial F1 macro of kNN on `coords`.
pub fn evaluate_embedding(
    coords: &DMatrix<f64>,
    labels: &BTreeMap<usize, u32>,
    split: &SplitSpec,
    k: usize,
) -> Result<Vec<f64>> {
    split.validate()?;
    (0..split.trials)
        .into_par_iter()
        .map(|trial| {
            let (train, test) = split.split(labels, trial)?;
            if test.is_empty() {
                return Err(Error::Domain("split left no test nodes".into()));
            }
            let predicted = knn_classify(coords, labels, &train, &test, k.min(train.len()))?;
            let truth: Vec<u32> = test.iter().map(|t| labels[t]).collect();
            f1_macro(&predicted, &truth)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub dimension: usize,
    pub runtime_seconds: f64,
    pub f1_trials: Vec<f64>,
    pub f1_mean: f64,
}

impl MetricsReport {
    pub fn new(method: impl Into<String>, dimension: usize, runtime_seconds: f64, f1_trials: Vec<f64>) -> Self {
        let f1_mean = if f1_trials.is_empty() {
            0.0
        } else {
            f1_trials.iter().sum::<f64>() / f1_trials.len() as f64
        };
        Self {
            method: method.into(),
            dimension,
            runtime_seconds,
            f1_trials,
            f1_mean,
        }
    }
}

/// Aligned text table: one row per method, an `RT` and `F1` column pair per
/// dataset.
pub fn render_table(entries: &[(String, MetricsReport)]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for (ds, r) in entries {
        if !datasets.contains(&ds.as_str()) {
            datasets.push(ds);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let method_width = methods.iter().map(|m| m.len()).max().unwrap_or(0).max("Method".len());
    let cell = 10;
    let mut out = String::new();
    let _ = write!(out, "{:<method_width$}", "Method");
    for ds in &datasets {
        let width = (2 * cell + 1).max(ds.len());
        let _ = write!(out, " | {ds:^width$}");
    }
    out.push('\n');
    let _ = write!(out, "{:<method_width$}", "");
    for ds in &datasets {
        let width = (2 * cell + 1).max(ds.len());
        let pair = format!("{:>cell$} {:>cell$}", "RT", "F1");
        let _ = write!(out, " | {pair:>width$}");
    }
    out.push('\n');
    for m in &methods {
        let _ = write!(out, "{m:<method_width$}");
        for ds in &datasets {
            let width = (2 * cell + 1).max(ds.len());
            let found = entries.iter().find(|(d, r)| d == ds && r.method == *m);
            let pair = match found {
                Some((_, r)) => format!("{:>cell$.2} {:>cell$.4}", r.runtime_seconds, r.f1_mean),
                None => format!("{:>cell$} {:>cell$}", "-", "-"),
            };
            let _ = write!(out, " | {pair:>width$}");
        }
        out.push('\n');
    }
    out
}

const WALK_CHUNK: usize = 1000;

/// Mean and standard error of simulated `i -> j -> i` round-trip step counts.
pub fn mc_commute_oracle(g: &LabeledGraph, i: usize, j: usize, trials: usize, seed: u64) -> Result<(f64, f64)> {
    let n = g.node_count();
    if i >= n || j >= n {
        return Err(Error::IndexOutOfRange(format!("pair ({i}, {j}) outside 0..{n}")));
    }
    if trials < 100 {
        return Err(Error::Domain(format!("{trials} trials is too few; use at least 100")));
    }
    if g.components().len() != 1 {
        return Err(Error::Domain("walks cannot cross between components".into()));
    }
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut cumulative: Vec<Vec<f64>> = vec![Vec::new(); n];
    for e in g.edges() {
        if e.w <= 0.0 {
            continue;
        }
        let mut push = |a: usize, b: usize| {
            let last = cumulative[a].last().copied().unwrap_or(0.0);
            neighbors[a].push(b);
            cumulative[a].push(last + e.w);
        };
        push(e.i, e.j);
        if e.i != e.j {
            push(e.j, e.i);
        }
    }
    let step = |at: usize, rng: &mut ChaCha8Rng| -> usize {
        let cum = &cumulative[at];
        let total = *cum.last().expect("connected graph has no isolated nodes");
        let u = rng.gen::<f64>() * total;
        let k = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        neighbors[at][k]
    };
    let hit = |from: usize, to: usize, rng: &mut ChaCha8Rng| -> u64 {
        let mut at = from;
        let mut steps = 0u64;
        loop {
            at = step(at, rng);
            steps += 1;
            if at == to {
                return steps;
            }
        }
    };
    let chunks = trials.div_ceil(WALK_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = trial_rng(seed, c);
            let count = WALK_CHUNK.min(trials - c * WALK_CHUNK);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..count {
                let t = if i == j {
                    0.0
                } else {
                    (hit(i, j, &mut rng) + hit(j, i, &mut rng)) as f64
                };
                s += t;
                s2 += t * t;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    let n = trials as f64;
    let mean = s / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}
