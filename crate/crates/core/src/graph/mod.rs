//! Patch graphs: spatial k-NN construction, patient-level merging and
//! receptive-field queries.

mod knn;

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FeatureMatrix, PatchCoord};

pub use knn::{build_feature_knn_graph, build_knn_graph, knn_within, KnnConfig};

/// Compressed neighbor lists. Neighbors of each node are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Adjacency {
    fn from_edges(n_nodes: usize, edges: &[(u32, u32)]) -> Self {
        let mut degree = vec![0usize; n_nodes];
        for &(a, b) in edges {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n_nodes].to_vec();
        let mut targets = vec![0u32; offsets[n_nodes]];
        for &(a, b) in edges {
            targets[cursor[a as usize]] = b;
            cursor[a as usize] += 1;
            targets[cursor[b as usize]] = a;
            cursor[b as usize] += 1;
        }
        for v in 0..n_nodes {
            targets[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Self { offsets, targets }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }
}

/// Patch graph of one patient: node features, undirected spatial edges and
/// the coordinates each node came from.
#[derive(Debug, Clone, PartialEq)]
pub struct WsiGraph {
    patient_id: String,
    features: FeatureMatrix,
    coords: Vec<PatchCoord>,
    /// Undirected edges stored once as `(src, dst)` with `src < dst`, sorted.
    edges: Vec<(u32, u32)>,
    adjacency: Adjacency,
}

impl WsiGraph {
    /// Builds a graph from explicit edges. Edges are normalized to
    /// `src < dst` and deduplicated; self-loops and out-of-range endpoints
    /// are rejected.
    pub fn new(
        patient_id: impl Into<String>,
        features: FeatureMatrix,
        coords: Vec<PatchCoord>,
        edges: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        let n = features.rows();
        if coords.len() != n {
            return Err(Error::Shape {
                op: "wsi_graph",
                left: (coords.len(), 0),
                right: (n, features.cols()),
            });
        }
        let mut normalized = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::Validation(format!("self-loop on node {a}")));
            }
            for endpoint in [a, b] {
                if endpoint as usize >= n {
                    return Err(Error::Index {
                        index: endpoint as usize,
                        len: n,
                    });
                }
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();
        let adjacency = Adjacency::from_edges(n, &normalized);
        Ok(Self {
            patient_id: patient_id.into(),
            features,
            coords,
            edges: normalized,
            adjacency,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn coords(&self) -> &[PatchCoord] {
        &self.coords
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        self.adjacency.neighbors(v)
    }

    /// Same nodes and features with a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        Self::new(
            self.patient_id.clone(),
            self.features.clone(),
            self.coords.clone(),
            edges,
        )
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        if perm.len() != n {
            return Err(Error::Shape {
                op: "permute",
                left: (perm.len(), 1),
                right: (n, 1),
            });
        }
        let mut inverse = vec![usize::MAX; n];
        for (old, &new) in perm.iter().enumerate() {
            if new >= n || inverse[new] != usize::MAX {
                return Err(Error::Validation("permutation is not a bijection".into()));
            }
            inverse[new] = old;
        }
        let features = self.features.select_rows(&inverse);
        let coords = inverse.iter().map(|&old| self.coords[old].clone()).collect();
        let edges = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a as usize] as u32, perm[b as usize] as u32));
        Self::new(self.patient_id.clone(), features, coords, edges)
    }

    /// Node count per degree.
    pub fn degree_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for v in 0..self.n_nodes() {
            *hist.entry(self.adjacency.degree(v)).or_insert(0) += 1;
        }
        hist
    }

    pub fn info(&self) -> GraphInfo {
        GraphInfo {
            patient_id: self.patient_id.clone(),
            n_nodes: self.n_nodes(),
            n_edges: self.n_edges(),
            degree_histogram: self.degree_histogram(),
        }
    }

    /// Writes the `src,dst` edge list.
    pub fn write_edges(&self, path: impl AsRef<Path>) -> Result<()> {
        write_edges(&self.edges, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInfo {
    pub patient_id: String,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub degree_histogram: BTreeMap<usize, usize>,
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    src: u32,
    dst: u32,
}

pub fn write_edges(edges: &[(u32, u32)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)?;
    if edges.is_empty() {
        writer.write_record(["src", "dst"])?;
    }
    for &(src, dst) in edges {
        writer.serialize(EdgeRow { src, dst })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_edges(path: impl AsRef<Path>) -> Result<Vec<(u32, u32)>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    crate::ingest::check_csv_header(reader.headers()?, &["src", "dst"], path)?;
    reader
        .deserialize::<EdgeRow>()
        .map(|r| {
            let r = r?;
            if r.src >= r.dst {
                return Err(Error::Format(format!(
                    "edge ({}, {}) must satisfy src < dst",
                    r.src, r.dst
                )));
            }
            Ok((r.src, r.dst))
        })
        .collect()
}

/// Disjoint union of per-slide graphs of one patient. Node indices of the
/// `i`-th subgraph are offset by the node count of all earlier subgraphs.
pub fn merge_patient_graph(subgraphs: &[WsiGraph]) -> Result<WsiGraph> {
    let first = subgraphs
        .first()
        .ok_or_else(|| Error::EmptyGraph("no subgraphs to merge".into()))?;
    for g in subgraphs {
        if g.patient_id != first.patient_id {
            return Err(Error::Validation(format!(
                "cannot merge graphs of patients {:?} and {:?}",
                first.patient_id, g.patient_id
            )));
        }
        if g.feature_dim() != first.feature_dim() {
            return Err(Error::Validation(format!(
                "cannot merge feature dimensions {} and {}",
                first.feature_dim(),
                g.feature_dim()
            )));
        }
    }
    if subgraphs.len() == 1 {
        return Ok(first.clone());
    }
    let features = FeatureMatrix::vstack(subgraphs.iter().map(|g| &g.features))?;
    let mut coords = Vec::with_capacity(features.rows());
    let mut edges = Vec::new();
    let mut offset = 0u32;
    for g in subgraphs {
        coords.extend(g.coords.iter().cloned());
        edges.extend(g.edges.iter().map(|&(a, b)| (a + offset, b + offset)));
        offset += g.n_nodes() as u32;
    }
    WsiGraph::new(first.patient_id.clone(), features, coords, edges)
}

/// Nodes reachable from `node` in at most `hops` edges, including `node`,
/// sorted ascending.
pub fn hop_neighborhood(graph: &WsiGraph, node: usize, hops: usize) -> Result<Vec<usize>> {
    let n = graph.n_nodes();
    if node >= n {
        return Err(Error::Index { index: node, len: n });
    }
    let mut depth = vec![usize::MAX; n];
    depth[node] = 0;
    let mut queue = VecDeque::from([node]);
    let mut reached = vec![node];
    while let Some(v) = queue.pop_front() {
        if depth[v] == hops {
            continue;
        }
        for &u in graph.neighbors(v) {
            let u = u as usize;
            if depth[u] == usize::MAX {
                depth[u] = depth[v] + 1;
                reached.push(u);
                queue.push_back(u);
            }
        }
    }
    reached.sort_unstable();
    Ok(reached)
}
