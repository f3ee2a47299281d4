//! Edge lists, label files and dense feature vectors.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::LabeledGraph;

#[derive(Debug, Clone)]
pub struct EdgeListOptions {
    /// Field separator; `None` splits on any whitespace.
    pub delimiter: Option<char>,
    pub default_weight: f64,
    pub keep_self_loops: bool,
}

impl Default for EdgeListOptions {
    fn default() -> Self {
        Self {
            delimiter: None,
            default_weight: 1.0,
            keep_self_loops: false,
        }
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

/// Reads `src dst [weight]` lines into a canonical undirected graph.
///
/// Node IDs are arbitrary strings, indexed in order of first appearance.
/// Repeated edges (in either orientation) have their weights summed.
pub fn load_edge_list<R: BufRead>(reader: R, options: &EdgeListOptions) -> Result<LabeledGraph> {
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut edges = Vec::new();

    let mut intern = |id: &str, ids: &mut Vec<String>| -> usize {
        if let Some(&k) = index.get(id) {
            return k;
        }
        ids.push(id.to_string());
        index.insert(id.to_string(), ids.len() - 1);
        ids.len() - 1
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let body = strip_comment(&line).trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = match options.delimiter {
            Some(d) => body.split(d).map(str::trim).filter(|f| !f.is_empty()).collect(),
            None => body.split_whitespace().collect(),
        };
        let line_no = lineno + 1;
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected \"src dst [weight]\", found {} fields", fields.len()),
            });
        }
        let weight = match fields.get(2) {
            Some(text) => text.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid weight {text:?}"),
            })?,
            None => options.default_weight,
        };
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::Domain(format!(
                "line {line_no}: edge weight {weight} must be a nonnegative finite number"
            )));
        }
        let a = intern(fields[0], &mut ids);
        let b = intern(fields[1], &mut ids);
        if a == b && !options.keep_self_loops {
            continue;
        }
        edges.push((a, b, weight));
    }

    if ids.is_empty() {
        return Err(Error::Domain("edge list contains no edges".into()));
    }
    LabeledGraph::from_edges(ids.len(), edges, Some(ids))
}

/// Reads `node_id<TAB>class_label` lines. Lines without a tab fall back to
/// whitespace separation.
pub fn read_label_file<R: BufRead>(reader: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, String> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.trim_end_matches(['\r', '\n']);
        if body.trim().is_empty() || body.trim_start().starts_with('#') {
            continue;
        }
        let (id, class) = match body.split_once('\t') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => {
                let mut parts = body.split_whitespace();
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(a), Some(b), None) => (a, b),
                    _ => {
                        return Err(Error::Parse {
                            line: lineno + 1,
                            message: "expected \"node_id<TAB>class_label\"".into(),
                        })
                    }
                }
            }
        };
        if id.is_empty() || class.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "empty node id or class label".into(),
            });
        }
        if let Some(prev) = seen.get(id) {
            if prev != class {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("node {id:?} labeled both {prev:?} and {class:?}"),
                });
            }
            continue;
        }
        seen.insert(id.to_string(), class.to_string());
        out.push((id.to_string(), class.to_string()));
    }
    Ok(out)
}

/// Kernel bandwidth for [`dense_vectors_to_graph`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median distance among the retained neighbor pairs (positive ones, if
    /// the median itself is zero).
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub bandwidth: Bandwidth,
    pub neighbors: usize,
}

/// Gaussian-kernel similarity graph over the `neighbors` nearest points of
/// each vector, symmetrized by taking the union (the kernel is symmetric, so
/// this equals max-symmetrization).
pub fn dense_vectors_to_graph(
    vectors: &[Vec<f64>],
    kernel: &KernelParams,
    ids: Option<Vec<String>>,
) -> Result<LabeledGraph> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 vectors, got {n}")));
    }
    let dim = vectors[0].len();
    if let Some(bad) = vectors.iter().position(|v| v.len() != dim) {
        return Err(Error::Dimension(format!(
            "vector {bad} has length {} but vector 0 has length {dim}",
            vectors[bad].len()
        )));
    }
    if kernel.neighbors == 0 || kernel.neighbors >= n {
        return Err(Error::Domain(format!(
            "neighbor count {} must lie in [1, {})",
            kernel.neighbors, n
        )));
    }
    if let Bandwidth::Fixed(s) = kernel.bandwidth {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("bandwidth {s} must be positive")));
        }
    }

    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let mut pairs: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sq(&vectors[i], &vectors[j]), j))
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d2, j) in cand.iter().take(kernel.neighbors) {
            pairs.insert((i.min(j), i.max(j)), d2);
        }
    }

    let sigma = match kernel.bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Auto => {
            let mut dists: Vec<f64> = pairs.values().map(|d2| d2.sqrt()).collect();
            dists.sort_by(f64::total_cmp);
            let mut med = median_sorted(&dists);
            if med <= 0.0 {
                let positive: Vec<f64> = dists.iter().copied().filter(|&d| d > 0.0).collect();
                med = median_sorted(&positive);
            }
            if !(med > 0.0) {
                return Err(Error::Domain(
                    "degenerate kernel: all retained pairwise distances are zero".into(),
                ));
            }
            med
        }
    };

    let edges: Vec<(usize, usize, f64)> = pairs
        .into_iter()
        .map(|((i, j), d2)| (i, j, (-d2 / (sigma * sigma)).exp()))
        .filter(|&(_, _, w)| w > 0.0)
        .collect();
    LabeledGraph::from_edges(n, edges, ids)
}

fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Numeric CSV matrix, one vector per row, no header.
pub fn load_feature_csv<R: std::io::Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: k + 1,
                    message: format!("invalid number {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.is_empty() {
            continue;
        }
        out.push(row);
    }
    Ok(out)
}

/// Loads 8-bit grayscale images flattened row-major. Files ending in `.raw`
/// or `.gray` are taken as bare pixel bytes; anything else is decoded and
/// converted to luma. Returns the vectors and the file stems as node IDs.
pub fn load_grayscale_images(paths: &[PathBuf]) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let mut vectors = Vec::with_capacity(paths.len());
    let mut ids = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = read_gray_pixels(path)?;
        if let Some(first) = vectors.first() {
            let first: &Vec<f64> = first;
            if first.len() != bytes.len() {
                return Err(Error::Dimension(format!(
                    "{} has {} pixels, expected {}",
                    path.display(),
                    bytes.len(),
                    first.len()
                )));
            }
        }
        vectors.push(bytes.into_iter().map(f64::from).collect());
        ids.push(
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
        );
    }
    Ok((vectors, ids))
}

fn read_gray_pixels(path: &Path) -> Result<Vec<u8>> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if ext == "raw" || ext == "gray" {
        return Ok(std::fs::read(path)?);
    }
    Ok(image::open(path)?.to_luma8().into_raw())
}
