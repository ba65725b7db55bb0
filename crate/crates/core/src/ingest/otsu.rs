use crate::error::{Error, Result};
use crate::ingest::Raster;

/// 256-bin intensity histogram of a single-channel raster.
pub fn histogram(raster: &Raster) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in raster.data() {
        hist[v as usize] += 1;
    }
    hist
}

/// Otsu's threshold on a single-channel raster.
///
/// Foreground is `value > t`. The returned `t` maximizes the between-class
/// variance over all 256 candidate thresholds; ties resolve to the smallest
/// `t`. A raster with a single distinct value has no two classes and is
/// rejected.
pub fn otsu_threshold(raster: &Raster) -> Result<u8> {
    if raster.channels() != 1 {
        return Err(Error::Format(format!(
            "otsu needs a 1-channel raster, got {} channels",
            raster.channels()
        )));
    }
    let hist = histogram(raster);
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Degenerate(
            "raster has a single distinct value; no threshold separates two classes".into(),
        ));
    }

    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();

    let mut best_t = 0u8;
    let mut best_score = f64::NEG_INFINITY;
    let mut below_count = 0u64;
    let mut below_sum = 0u64;
    for t in 0..=255usize {
        below_count += hist[t];
        below_sum += t as u64 * hist[t];
        let above_count = total - below_count;
        let score = if below_count == 0 || above_count == 0 {
            0.0
        } else {
            // N^2 times the between-class variance.
            let diff = total as f64 * below_sum as f64 - below_count as f64 * total_sum as f64;
            diff * diff / (below_count as f64 * above_count as f64)
        };
        if score > best_score {
            best_score = score;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}
