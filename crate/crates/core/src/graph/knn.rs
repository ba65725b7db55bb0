use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WsiGraph;
use crate::ingest::{FeatureMatrix, PatchCoordinateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 8 }
    }
}

impl KnnConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Uniform grid over the bounding box of a point set, bucketed in CSR form.
struct CellGrid {
    min: (i64, i64),
    cell: i64,
    dims: (i64, i64),
    starts: Vec<usize>,
    members: Vec<u32>,
}

impl CellGrid {
    fn new(points: &[(i64, i64)], k: usize) -> Self {
        let (mut lo, mut hi) = ((i64::MAX, i64::MAX), (i64::MIN, i64::MIN));
        for &(x, y) in points {
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        let (w, h) = ((hi.0 - lo.0 + 1) as f64, (hi.1 - lo.1 + 1) as f64);
        // Aim for roughly k/2 points per occupied cell on dense layouts.
        let per_cell = (k as f64 / 2.0).max(1.0);
        let cell = ((w * h * per_cell / points.len() as f64).sqrt().ceil() as i64).max(1);
        let dims = ((hi.0 - lo.0) / cell + 1, (hi.1 - lo.1) / cell + 1);

        let n_cells = (dims.0 * dims.1) as usize;
        let mut counts = vec![0usize; n_cells + 1];
        let cell_of = |&(x, y): &(i64, i64)| (((y - lo.1) / cell) * dims.0 + (x - lo.0) / cell) as usize;
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut cursor = counts;
        let mut members = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p);
            members[cursor[c]] = i as u32;
            cursor[c] += 1;
        }
        Self {
            min: lo,
            cell,
            dims,
            starts,
            members,
        }
    }

    fn bucket(&self, cx: i64, cy: i64) -> &[u32] {
        let c = (cy * self.dims.0 + cx) as usize;
        &self.members[self.starts[c]..self.starts[c + 1]]
    }

    /// Visits every bucket at Chebyshev cell distance exactly `r` from
    /// `(cx, cy)` that lies inside the grid.
    fn for_each_ring(&self, cx: i64, cy: i64, r: i64, mut visit: impl FnMut(&[u32])) {
        let (x0, x1) = ((cx - r).max(0), (cx + r).min(self.dims.0 - 1));
        let (y0, y1) = ((cy - r).max(0), (cy + r).min(self.dims.1 - 1));
        for y in y0..=y1 {
            if (y - cy).abs() == r {
                for x in x0..=x1 {
                    visit(self.bucket(x, y));
                }
            } else {
                if cx - r >= 0 {
                    visit(self.bucket(cx - r, y));
                }
                if r > 0 && cx + r < self.dims.0 {
                    visit(self.bucket(cx + r, y));
                }
            }
        }
    }
}

/// Exact k nearest neighbors of every point by squared Euclidean distance.
///
/// Each list holds `min(k, n - 1)` indices ordered by `(distance, index)`,
/// so equidistant candidates resolve toward the smaller index.
pub fn knn_within(points: &[(i64, i64)], k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let kk = k.min(n.saturating_sub(1));
    if kk == 0 {
        return vec![Vec::new(); n];
    }
    let grid = CellGrid::new(points, k);
    let max_ring = grid.dims.0.max(grid.dims.1);
    let mut candidates: Vec<(i64, u32)> = Vec::new();

    points
        .iter()
        .enumerate()
        .map(|(q, &(qx, qy))| {
            let cx = (qx - grid.min.0) / grid.cell;
            let cy = (qy - grid.min.1) / grid.cell;
            candidates.clear();
            let mut r = 0;
            loop {
                grid.for_each_ring(cx, cy, r, |bucket| {
                    for &i in bucket {
                        if i as usize != q {
                            let (x, y) = points[i as usize];
                            let d = (x - qx) * (x - qx) + (y - qy) * (y - qy);
                            candidates.push((d, i));
                        }
                    }
                });
                if candidates.len() >= kk {
                    candidates.select_nth_unstable(kk - 1);
                    let kth = candidates[kk - 1].0;
                    // Points outside rings 0..=r are at least r cells away.
                    let reach = r * grid.cell;
                    if kth < reach * reach || r >= max_ring {
                        break;
                    }
                } else if r >= max_ring {
                    break;
                }
                r += 1;
            }
            candidates.sort_unstable();
            candidates[..kk].iter().map(|&(_, i)| i as usize).collect()
        })
        .collect()
}

/// Nodes grouped by slide, in order of first appearance. Indices inside each
/// group are ascending.
fn slide_groups(coords: &PatchCoordinateSet) -> Vec<Vec<usize>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, c) in coords.entries().iter().enumerate() {
        match order.iter().position(|s| *s == c.slide_id) {
            Some(g) => groups[g].push(i),
            None => {
                order.push(&c.slide_id);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

fn check_alignment(coords: &PatchCoordinateSet, features: &FeatureMatrix) -> Result<()> {
    if coords.len() != features.rows() {
        return Err(Error::Shape {
            op: "build_knn_graph",
            left: (coords.len(), 4),
            right: (features.rows(), features.cols()),
        });
    }
    if coords.is_empty() {
        return Err(Error::EmptyGraph("no patches to connect".into()));
    }
    Ok(())
}

fn symmetrize(groups: &[Vec<usize>], lists: impl Iterator<Item = Vec<Vec<usize>>>) -> Vec<(u32, u32)> {
    let mut edges = Vec::new();
    for (group, neighbors) in groups.iter().zip(lists) {
        for (local, nbrs) in neighbors.iter().enumerate() {
            let v = group[local] as u32;
            for &u in nbrs {
                let u = group[u] as u32;
                edges.push((v.min(u), v.max(u)));
            }
        }
    }
    edges
}

/// Spatial k-NN graph over patch coordinates. Neighbors are searched within
/// each slide only; the directed k-NN relation is symmetrized.
pub fn build_knn_graph(
    patient_id: &str,
    coords: &PatchCoordinateSet,
    features: FeatureMatrix,
    cfg: &KnnConfig,
) -> Result<WsiGraph> {
    cfg.validate()?;
    check_alignment(coords, &features)?;
    let groups = slide_groups(coords);
    let lists = groups.iter().map(|group| {
        let points: Vec<(i64, i64)> = group
            .iter()
            .map(|&i| {
                let c = &coords.entries()[i];
                (c.x as i64, c.y as i64)
            })
            .collect();
        knn_within(&points, cfg.k)
    });
    let edges = symmetrize(&groups, lists);
    WsiGraph::new(patient_id, features, coords.entries().to_vec(), edges)
}

/// Feature-space k-NN graph, the embedding-similarity baseline. Brute force
/// over squared Euclidean feature distance, within each slide, with the same
/// tie-break and symmetrization as [`build_knn_graph`].
pub fn build_feature_knn_graph(
    patient_id: &str,
    coords: &PatchCoordinateSet,
    features: FeatureMatrix,
    cfg: &KnnConfig,
) -> Result<WsiGraph> {
    cfg.validate()?;
    check_alignment(coords, &features)?;
    let groups = slide_groups(coords);
    let lists = groups.iter().map(|group| {
        let kk = cfg.k.min(group.len() - 1);
        group
            .iter()
            .enumerate()
            .map(|(a, &ia)| {
                let mut dists: Vec<(f64, usize)> = group
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(b, &ib)| {
                        let d = features
                            .row(ia)
                            .iter()
                            .zip(features.row(ib))
                            .map(|(x, y)| {
                                let t = f64::from(*x) - f64::from(*y);
                                t * t
                            })
                            .sum::<f64>();
                        (d, b)
                    })
                    .collect();
                dists.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                dists[..kk].iter().map(|&(_, b)| b).collect()
            })
            .collect::<Vec<Vec<usize>>>()
    });
    let edges = symmetrize(&groups, lists);
    WsiGraph::new(patient_id, features, coords.entries().to_vec(), edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::grid_coords;
    use crate::ingest::PatchCoord;
    use proptest::prelude::*;

    fn brute_force(points: &[(i64, i64)], k: usize) -> Vec<Vec<usize>> {
        let kk = k.min(points.len().saturating_sub(1));
        (0..points.len())
            .map(|q| {
                let mut all: Vec<(i64, usize)> = (0..points.len())
                    .filter(|&i| i != q)
                    .map(|i| {
                        let (dx, dy) = (points[i].0 - points[q].0, points[i].1 - points[q].1);
                        (dx * dx + dy * dy, i)
                    })
                    .collect();
                all.sort();
                all[..kk].iter().map(|&(_, i)| i).collect()
            })
            .collect()
    }

    #[test]
    fn three_by_three_grid_is_complete() {
        let coords = grid_coords(3, "s");
        let g = build_knn_graph("p", &coords, FeatureMatrix::zeros(9, 1), &KnnConfig::default()).unwrap();
        assert_eq!(g.n_edges(), 36);
        assert_eq!(g.neighbors(4).len(), 8);
    }

    #[test]
    fn tiny_graphs() {
        let one = PatchCoordinateSet::new(256, grid_coords(2, "s").entries()[..1].to_vec()).unwrap();
        let g = build_knn_graph("p", &one, FeatureMatrix::zeros(1, 1), &KnnConfig::default()).unwrap();
        assert_eq!(g.n_edges(), 0);
        let two = PatchCoordinateSet::new(256, grid_coords(2, "s").entries()[..2].to_vec()).unwrap();
        let g = build_knn_graph("p", &two, FeatureMatrix::zeros(2, 1), &KnnConfig::default()).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn errors() {
        let coords = grid_coords(2, "s");
        assert!(matches!(
            build_knn_graph("p", &coords, FeatureMatrix::zeros(3, 1), &KnnConfig::default()),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            build_knn_graph("p", &PatchCoordinateSet::empty(256), FeatureMatrix::zeros(0, 1), &KnnConfig::default()),
            Err(Error::EmptyGraph(_))
        ));
        assert!(build_knn_graph("p", &coords, FeatureMatrix::zeros(4, 1), &KnnConfig { k: 0 }).is_err());
    }

    #[test]
    fn no_edges_across_slides() {
        let mut entries = grid_coords(2, "a").entries().to_vec();
        entries.extend(grid_coords(2, "b").entries().iter().map(|c| PatchCoord {
            patch_id: c.patch_id + 4,
            ..c.clone()
        }));
        let coords = PatchCoordinateSet::new(256, entries).unwrap();
        let g = build_knn_graph("p", &coords, FeatureMatrix::zeros(8, 1), &KnnConfig::default()).unwrap();
        assert_eq!(g.n_edges(), 12);
        assert!(g.edges().iter().all(|&(a, b)| (a < 4) == (b < 4)));
    }

    #[test]
    fn feature_space_graph_uses_features() {
        let coords = grid_coords(2, "s");
        let f = FeatureMatrix::new(4, 1, vec![0.0, 10.0, 0.1, 10.1]).unwrap();
        let g = build_feature_knn_graph("p", &coords, f, &KnnConfig { k: 1 }).unwrap();
        assert_eq!(g.edges(), &[(0, 2), (1, 3)]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            raw in prop::collection::vec((0i64..40, 0i64..40), 1..120),
            k in 1usize..12,
        ) {
            let mut points: Vec<(i64, i64)> = raw.into_iter().map(|(x, y)| (x * 256, y * 256)).collect();
            points.sort();
            points.dedup();
            prop_assert_eq!(knn_within(&points, k), brute_force(&points, k));
        }

        #[test]
        fn matches_brute_force_irregular(
            points in prop::collection::vec((-500i64..500, -50i64..50), 1..80),
            k in 1usize..10,
        ) {
            prop_assert_eq!(knn_within(&points, k), brute_force(&points, k));
        }
    }
}
