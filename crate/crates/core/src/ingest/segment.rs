use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{otsu_threshold, PatchCoord, PatchCoordinateSet, Raster, DEFAULT_PATCH_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    /// Patch edge length at full resolution.
    pub patch_size: u32,
    /// Full-resolution pixels per raster pixel.
    pub downsample: u32,
    /// A patch is kept when its foreground fraction exceeds this value.
    /// Zero disables the filter.
    pub min_foreground_fraction: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            downsample: 32,
            min_foreground_fraction: 0.5,
        }
    }
}

/// Thresholds a downsampled saturation raster with Otsu's method and returns
/// the grid-aligned patches that contain enough tissue.
///
/// Each patch covers a `patch_size / downsample` square block of raster
/// pixels; partial blocks at the right and bottom edges are dropped. Patch
/// ids follow row-major scan order.
pub fn segment_to_coordinates(
    raster: &Raster,
    slide_id: &str,
    params: &SegmentParams,
) -> Result<PatchCoordinateSet> {
    if params.downsample == 0 || params.patch_size == 0 {
        return Err(Error::Config("patch_size and downsample must be positive".into()));
    }
    if params.patch_size % params.downsample != 0 {
        return Err(Error::Config(format!(
            "patch_size {} is not divisible by downsample {}",
            params.patch_size, params.downsample
        )));
    }
    if !(0.0..=1.0).contains(&params.min_foreground_fraction) {
        return Err(Error::Config(format!(
            "min_foreground_fraction {} outside [0, 1]",
            params.min_foreground_fraction
        )));
    }
    let threshold = otsu_threshold(raster)?;
    let block = (params.patch_size / params.downsample) as usize;
    let (cols, rows) = (raster.width() / block, raster.height() / block);
    let block_area = (block * block) as f64;

    let mut entries = Vec::new();
    for by in 0..rows {
        for bx in 0..cols {
            let mut above = 0usize;
            for y in by * block..(by + 1) * block {
                for x in bx * block..(bx + 1) * block {
                    if raster.get(x, y) > threshold {
                        above += 1;
                    }
                }
            }
            let fraction = above as f64 / block_area;
            if params.min_foreground_fraction == 0.0 || fraction > params.min_foreground_fraction {
                entries.push(PatchCoord {
                    patch_id: entries.len() as u64,
                    slide_id: slide_id.to_string(),
                    x: (bx as u64) * u64::from(params.patch_size),
                    y: (by as u64) * u64::from(params.patch_size),
                });
            }
        }
    }
    if entries.is_empty() {
        log::warn!("slide {slide_id:?}: no patch passed the foreground filter");
    }
    PatchCoordinateSet::new(params.patch_size, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(min_fraction: f64) -> SegmentParams {
        SegmentParams {
            patch_size: 256,
            downsample: 64,
            min_foreground_fraction: min_fraction,
        }
    }

    /// Independent block-counting oracle over 4x4 raster blocks.
    fn expected_cells(raster: &Raster, t: u8, min_fraction: f64) -> Vec<(u64, u64)> {
        let mut cells = Vec::new();
        for by in 0..raster.height() / 4 {
            for bx in 0..raster.width() / 4 {
                let count = (0..16)
                    .filter(|i| raster.get(bx * 4 + i % 4, by * 4 + i / 4) > t)
                    .count();
                if count as f64 / 16.0 > min_fraction {
                    cells.push((bx as u64 * 256, by as u64 * 256));
                }
            }
        }
        cells
    }

    #[test]
    fn bright_interior_dark_border() {
        // 5x5 blocks of 4x4 pixels; the outer ring of blocks is background.
        let (w, h) = (20, 20);
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                if (4..16).contains(&x) && (4..16).contains(&y) {
                    220
                } else {
                    5
                }
            })
            .collect();
        let raster = Raster::gray(w, h, data).unwrap();
        let set = segment_to_coordinates(&raster, "s", &params(0.5)).unwrap();
        let got: Vec<_> = set.entries().iter().map(|e| (e.x, e.y)).collect();
        let t = otsu_threshold(&raster).unwrap();
        assert_eq!(got, expected_cells(&raster, t, 0.5));
        assert_eq!(got.len(), 9);
        assert_eq!(got[0], (256, 256));
        let ids: Vec<_> = set.entries().iter().map(|e| e.patch_id).collect();
        assert_eq!(ids, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn zero_fraction_keeps_every_patch() {
        let data = (0..64u32).map(|i| if i == 0 { 255 } else { 0 }).collect();
        let raster = Raster::gray(8, 8, data).unwrap();
        let set = segment_to_coordinates(&raster, "s", &params(0.0)).unwrap();
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn all_background_is_empty() {
        // A single bright pixel cannot fill more than half of any block.
        let data = (0..64u32).map(|i| if i == 9 { 255 } else { 0 }).collect();
        let raster = Raster::gray(8, 8, data).unwrap();
        let set = segment_to_coordinates(&raster, "s", &params(0.5)).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn errors_propagate() {
        let raster = Raster::gray(8, 8, vec![7; 64]).unwrap();
        assert!(matches!(
            segment_to_coordinates(&raster, "s", &params(0.5)),
            Err(Error::Degenerate(_))
        ));
        let bad = SegmentParams {
            patch_size: 256,
            downsample: 3,
            min_foreground_fraction: 0.5,
        };
        let raster = Raster::gray(8, 8, (0..64).collect()).unwrap();
        assert!(matches!(
            segment_to_coordinates(&raster, "s", &bad),
            Err(Error::Config(_))
        ));
    }
}
