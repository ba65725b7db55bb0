//! Fixtures shared by the benchmarks.

use patchgraph_core::graph::{build_knn_graph, KnnConfig, WsiGraph};
use patchgraph_core::ingest::{FeatureMatrix, PatchCoord, PatchCoordinateSet};

/// The first `n` cells of a square patch grid, row-major.
pub fn grid(n: usize, patch_size: u32) -> PatchCoordinateSet {
    let side = (n as f64).sqrt().ceil() as u64;
    let step = u64::from(patch_size);
    let entries = (0..n as u64)
        .map(|i| PatchCoord {
            patch_id: i,
            slide_id: "bench".into(),
            x: (i % side) * step,
            y: (i / side) * step,
        })
        .collect();
    PatchCoordinateSet::new(patch_size, entries).expect("distinct grid cells")
}

/// Deterministic pseudo-random features in [-1, 1).
pub fn features(rows: usize, cols: usize) -> FeatureMatrix {
    let mut state = 0x2545_F491_4F6C_DD1Du64;
    let data = (0..rows * cols)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 40) as f32 / (1u64 << 23) as f32 - 1.0
        })
        .collect();
    FeatureMatrix::new(rows, cols, data).expect("sized")
}

pub fn grid_graph(n: usize, d_feat: usize) -> WsiGraph {
    build_knn_graph("bench", &grid(n, 256), features(n, d_feat), &KnnConfig::default())
        .expect("valid grid")
}
