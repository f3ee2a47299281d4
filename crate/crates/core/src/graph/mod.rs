//! Graph data model and the random-walk operators built from it.

mod ingest;
mod sparse;

use std::collections::{BTreeMap, HashMap, VecDeque};

pub use ingest::{
    dense_vectors_to_graph, load_edge_list, load_feature_csv, load_grayscale_images, read_label_file,
    Bandwidth, EdgeListOptions, KernelParams,
};
pub use sparse::SparseOperator;

use crate::error::{Error, Result};

/// One undirected edge, stored with `i <= j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Weighted undirected graph with optional class labels and external IDs.
///
/// Edges are kept in canonical form: each undirected edge appears once with
/// `i <= j`, sorted, with duplicate weights summed. The symmetric adjacency
/// is produced on demand by [`LabeledGraph::adjacency`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    node_count: usize,
    edges: Vec<Edge>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    labels: BTreeMap<usize, u32>,
    class_names: Vec<String>,
}

impl LabeledGraph {
    /// Builds a graph from edges in any orientation. Node IDs default to the
    /// decimal index when `ids` is `None`.
    pub fn from_edges<I>(node_count: usize, edges: I, ids: Option<Vec<String>>) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if node_count == 0 {
            return Err(Error::Domain("graph has no nodes".into()));
        }
        let ids = match ids {
            Some(ids) if ids.len() != node_count => {
                return Err(Error::Dimension(format!(
                    "{} node ids supplied for {node_count} nodes",
                    ids.len()
                )))
            }
            Some(ids) => ids,
            None => (0..node_count).map(|i| i.to_string()).collect(),
        };
        let mut index = HashMap::with_capacity(node_count);
        for (k, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), k).is_some() {
                return Err(Error::Domain(format!("duplicate node id {id:?}")));
            }
        }

        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (a, b, w) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::IndexOutOfRange(format!(
                    "edge ({a}, {b}) in a graph with {node_count} nodes"
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Domain(format!("edge ({a}, {b}) has invalid weight {w}")));
            }
            *merged.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
        let edges = merged.into_iter().map(|((i, j), w)| Edge { i, j, w }).collect();

        Ok(Self {
            node_count,
            edges,
            ids,
            index,
            labels: BTreeMap::new(),
            class_names: Vec::new(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn labels(&self) -> &BTreeMap<usize, u32> {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn label(&self, node: usize) -> Option<u32> {
        self.labels.get(&node).copied()
    }

    /// Attaches `(node id, class label)` pairs. Class ids are assigned in
    /// sorted order of the label strings so they do not depend on file order.
    /// Returns the IDs that do not name a node of this graph.
    pub fn attach_labels(&mut self, pairs: &[(String, String)]) -> Vec<String> {
        let mut names: Vec<String> = pairs.iter().map(|(_, c)| c.clone()).collect();
        names.sort();
        names.dedup();
        let class_of: HashMap<&str, u32> = names
            .iter()
            .enumerate()
            .map(|(k, n)| (n.as_str(), k as u32))
            .collect();
        let mut unknown = Vec::new();
        let mut labels = BTreeMap::new();
        for (id, class) in pairs {
            match self.index.get(id) {
                Some(&node) => {
                    labels.insert(node, class_of[class.as_str()]);
                }
                None => unknown.push(id.clone()),
            }
        }
        self.labels = labels;
        self.class_names = names;
        unknown
    }

    /// Symmetric adjacency matrix `A`.
    pub fn adjacency(&self) -> SparseOperator {
        let triplets = self.edges.iter().flat_map(|e| {
            let back = (e.i != e.j).then_some((e.j, e.i, e.w));
            std::iter::once((e.i, e.j, e.w)).chain(back)
        });
        SparseOperator::from_triplets(self.node_count, self.node_count, triplets, 0.0)
            .expect("canonical edges are in range")
    }

    /// Neighbor lists over edges with positive weight, self-loops included.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.node_count];
        for e in self.edges.iter().filter(|e| e.w > 0.0) {
            out[e.i].push(e.j);
            if e.i != e.j {
                out[e.j].push(e.i);
            }
        }
        out
    }

    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.node_count];
        for e in &self.edges {
            d[e.i] += e.w;
            if e.i != e.j {
                d[e.j] += e.w;
            }
        }
        d
    }

    /// Connected components (positive-weight edges), each sorted, ordered by
    /// their smallest node index.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.neighbor_lists();
        let mut seen = vec![false; self.node_count];
        let mut comps = Vec::new();
        for start in 0..self.node_count {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    /// Whether the positive-weight graph admits a proper 2-coloring. A
    /// connected bipartite graph gives its walk an eigenvalue at -1.
    pub fn is_bipartite(&self) -> bool {
        let adj = self.neighbor_lists();
        let mut color: Vec<Option<bool>> = vec![None; self.node_count];
        for start in 0..self.node_count {
            if color[start].is_some() {
                continue;
            }
            color[start] = Some(false);
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                let cu = color[u].unwrap();
                for &v in &adj[u] {
                    match color[v] {
                        None => {
                            color[v] = Some(!cu);
                            queue.push_back(v);
                        }
                        Some(cv) if cv == cu => return false,
                        _ => {}
                    }
                }
            }
        }
        true
    }

    /// Subgraph induced by `nodes` (must be sorted and unique), re-indexed in
    /// that order. IDs and labels carry over.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Self> {
        let mut remap = vec![usize::MAX; self.node_count];
        for (new, &old) in nodes.iter().enumerate() {
            remap[old] = new;
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .filter(|e| remap[e.i] != usize::MAX && remap[e.j] != usize::MAX)
            .map(|e| (remap[e.i], remap[e.j], e.w))
            .collect();
        let ids = nodes.iter().map(|&n| self.ids[n].clone()).collect();
        let mut sub = Self::from_edges(nodes.len(), edges, Some(ids))?;
        sub.labels = self
            .labels
            .iter()
            .filter(|(n, _)| remap[**n] != usize::MAX)
            .map(|(n, c)| (remap[*n], *c))
            .collect();
        sub.class_names = self.class_names.clone();
        Ok(sub)
    }
}

/// Degrees, volume and stationary distribution of the random walk.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeData {
    pub degrees: Vec<f64>,
    pub volume: f64,
    pub stationary: Vec<f64>,
}

impl DegreeData {
    pub fn from_degrees(degrees: Vec<f64>) -> Result<Self> {
        let volume: f64 = degrees.iter().sum();
        if !(volume > 0.0) {
            return Err(Error::Domain("graph volume must be positive".into()));
        }
        let stationary = degrees.iter().map(|d| d / volume).collect();
        Ok(Self {
            degrees,
            volume,
            stationary,
        })
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn min_degree(&self) -> f64 {
        self.degrees.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Induced subgraph on the largest connected component.
///
/// Ties between equally large components go to the one holding the lowest
/// original node index.
pub fn giant_component(g: &LabeledGraph) -> Result<LabeledGraph> {
    giant_component_with_report(g).map(|(sub, _)| sub)
}

/// As [`giant_component`], also returning how many nodes were dropped.
pub fn giant_component_with_report(g: &LabeledGraph) -> Result<(LabeledGraph, usize)> {
    if g.node_count() == 0 {
        return Err(Error::Domain("empty graph".into()));
    }
    let comps = g.components();
    let mut best = 0;
    for (k, c) in comps.iter().enumerate() {
        if c.len() > comps[best].len() {
            best = k;
        }
    }
    if comps.len() == 1 {
        return Ok((g.clone(), 0));
    }
    let keep = &comps[best];
    Ok((g.induced_subgraph(keep)?, g.node_count() - keep.len()))
}

/// Row-stochastic walk `T = D^{-1} A` with its degree data.
pub fn transition_matrix(g: &LabeledGraph) -> Result<(SparseOperator, DegreeData)> {
    let degrees = g.degrees();
    if let Some(node) = degrees.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Domain(format!(
            "node {:?} (index {node}) has zero degree",
            g.id(node)
        )));
    }
    let inverse: Vec<f64> = degrees.iter().map(|d| 1.0 / d).collect();
    let t = g.adjacency().scale_rows(&inverse);
    Ok((t, DegreeData::from_degrees(degrees)?))
}

/// Random-walk Laplacian `L = I - T`.
pub fn random_walk_laplacian(t: &SparseOperator) -> Result<SparseOperator> {
    t.shifted(1.0, -1.0)
}

/// Lazy walk `(I + T) / 2`; removes the `-1` eigenvalue of bipartite graphs.
pub fn lazy_walk(t: &SparseOperator) -> Result<SparseOperator> {
    t.shifted(0.5, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LinearOperator;

    fn path3() -> LabeledGraph {
        LabeledGraph::from_edges(3, vec![(0, 1, 1.0), (1, 2, 1.0)], None).unwrap()
    }

    fn triangle() -> LabeledGraph {
        LabeledGraph::from_edges(3, vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], None).unwrap()
    }

    #[test]
    fn path_transition_rows() {
        let (t, deg) = transition_matrix(&path3()).unwrap();
        let dense = t.to_dense();
        let expected = [[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(dense[(r, c)], expected[r][c]);
            }
        }
        assert_eq!(deg.volume, 4.0);
        assert_eq!(t.nnz(), 4);
    }

    #[test]
    fn triangle_transition_is_half() {
        let (t, deg) = transition_matrix(&triangle()).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 0.0 } else { 0.5 };
                assert_eq!(t.get(r, c), want);
            }
        }
        assert_eq!(deg.volume, 6.0);
    }

    #[test]
    fn single_heavy_edge_normalizes_out() {
        let g = LabeledGraph::from_edges(2, vec![(0, 1, 7.0)], None).unwrap();
        let (t, deg) = transition_matrix(&g).unwrap();
        assert_eq!(t.to_dense(), nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(deg.volume, 14.0);
    }

    #[test]
    fn zero_degree_node_is_named() {
        let g = LabeledGraph::from_edges(3, vec![(0, 1, 1.0)], None).unwrap();
        let err = transition_matrix(&g).unwrap_err().to_string();
        assert!(err.contains("\"2\""), "{err}");
    }

    #[test]
    fn laplacian_examples() {
        let k2 = LabeledGraph::from_edges(2, vec![(0, 1, 1.0)], None).unwrap();
        let (t, _) = transition_matrix(&k2).unwrap();
        let l = random_walk_laplacian(&t).unwrap().to_dense();
        assert_eq!(l, nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));

        let l0 = random_walk_laplacian(&SparseOperator::identity(3)).unwrap();
        assert_eq!(l0.nnz(), 0);

        let (t, _) = transition_matrix(&path3()).unwrap();
        let l = random_walk_laplacian(&t).unwrap();
        assert_eq!(
            (0..3).map(|c| l.get(1, c)).collect::<Vec<_>>(),
            vec![-0.5, 1.0, -0.5]
        );
        for s in l.row_sums() {
            assert!(s.abs() <= 1e-12);
        }
    }

    #[test]
    fn laplacian_rejects_non_square() {
        let m = SparseOperator::from_triplets(2, 3, vec![(0, 0, 1.0)], 0.0).unwrap();
        assert!(matches!(random_walk_laplacian(&m), Err(Error::Dimension(_))));
    }

    #[test]
    fn giant_component_examples() {
        let tri = triangle();
        assert_eq!(giant_component(&tri).unwrap(), tri);

        let g = LabeledGraph::from_edges(
            5,
            vec![(3, 4, 1.0), (0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)],
            None,
        )
        .unwrap();
        let (gc, dropped) = giant_component_with_report(&g).unwrap();
        assert_eq!(gc.node_count(), 3);
        assert_eq!(dropped, 2);
        assert_eq!(gc.ids(), &["0", "1", "2"]);

        let ids = vec!["p".into(), "q".into(), "r".into(), "s".into()];
        let two = LabeledGraph::from_edges(4, vec![(2, 3, 1.0), (0, 1, 1.0)], Some(ids)).unwrap();
        let gc = giant_component(&two).unwrap();
        assert_eq!(gc.ids(), &["p", "q"]);
        assert_eq!(giant_component(&gc).unwrap(), gc);
    }

    #[test]
    fn bipartite_detection() {
        assert!(path3().is_bipartite());
        assert!(!triangle().is_bipartite());
    }

    #[test]
    fn stationary_is_left_fixed_point() {
        let g = LabeledGraph::from_edges(
            4,
            vec![(0, 1, 2.0), (1, 2, 1.0), (2, 3, 3.0), (3, 0, 0.5), (0, 2, 1.5)],
            None,
        )
        .unwrap();
        let (t, deg) = transition_matrix(&g).unwrap();
        let left = t.left_mul_vec(&deg.stationary);
        for (a, b) in left.iter().zip(&deg.stationary) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert!((deg.stationary.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
