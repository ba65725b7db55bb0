use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::graph::WsiGraph;
use crate::ingest::Raster;

#[derive(Serialize)]
struct AttentionRow<'a> {
    patch_id: u64,
    slide_id: &'a str,
    x: u64,
    y: u64,
    attention: f64,
}

fn check_len(graph: &WsiGraph, attention: &[f64]) -> Result<()> {
    if attention.len() != graph.n_nodes() {
        return Err(Error::Shape {
            op: "attention_export",
            left: (graph.n_nodes(), 1),
            right: (attention.len(), 1),
        });
    }
    Ok(())
}

/// `patch_id,slide_id,x,y,attention`, one row per node.
pub fn write_attention_csv(graph: &WsiGraph, attention: &[f64], path: impl AsRef<Path>) -> Result<()> {
    check_len(graph, attention)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for (c, &a) in graph.coords().iter().zip(attention) {
        writer.serialize(AttentionRow {
            patch_id: c.patch_id,
            slide_id: &c.slide_id,
            x: c.x,
            y: c.y,
            attention: a,
        })?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    atomic_write(path, &bytes)
}

/// Grayscale heatmap with one pixel per patch. Slides are placed left to
/// right in name order, separated by one empty column. Intensity is
/// `255 * a / max(a)`; pixels without a patch stay 0.
pub fn attention_heatmap(graph: &WsiGraph, attention: &[f64], patch_size: u32) -> Result<Raster> {
    check_len(graph, attention)?;
    if patch_size == 0 {
        return Err(Error::Config("patch_size must be positive".into()));
    }
    let ps = u64::from(patch_size);
    // Per slide: (min_x, min_y, max_x, max_y) in grid units.
    let mut extents: BTreeMap<&str, (u64, u64, u64, u64)> = BTreeMap::new();
    for c in graph.coords() {
        let (gx, gy) = (c.x / ps, c.y / ps);
        extents
            .entry(c.slide_id.as_str())
            .and_modify(|e| *e = (e.0.min(gx), e.1.min(gy), e.2.max(gx), e.3.max(gy)))
            .or_insert((gx, gy, gx, gy));
    }
    let mut offsets = BTreeMap::new();
    let mut width = 0u64;
    let mut height = 0u64;
    for (slide, e) in &extents {
        if width > 0 {
            width += 1;
        }
        offsets.insert(*slide, width);
        width += e.2 - e.0 + 1;
        height = height.max(e.3 - e.1 + 1);
    }
    let (w, h) = (width as usize, height as usize);
    if w.saturating_mul(h) > 1 << 28 {
        return Err(Error::Validation(format!("heatmap of {w}x{h} pixels is too large")));
    }
    let max = attention.iter().copied().fold(0.0, f64::max);
    let mut data = vec![0u8; w * h];
    for (c, &a) in graph.coords().iter().zip(attention) {
        let e = extents[c.slide_id.as_str()];
        let x = (offsets[c.slide_id.as_str()] + c.x / ps - e.0) as usize;
        let y = (c.y / ps - e.1) as usize;
        let level = if max > 0.0 { 255.0 * a / max } else { 0.0 };
        data[y * w + x] = level.round().clamp(0.0, 255.0) as u8;
    }
    Raster::gray(w, h, data)
}
