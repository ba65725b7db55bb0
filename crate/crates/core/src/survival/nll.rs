use crate::error::{Error, Result};

/// Negative log-likelihood of a discrete-time observation given per-bin
/// hazards in `(0, 1)`.
///
/// An event in bin `b` has probability `h_b * prod_{s<b} (1 - h_s)`; a
/// censoring in bin `b` means survival through it, `prod_{s<=b} (1 - h_s)`.
pub fn survival_nll(hazards: &[f64], bin: usize, censored: bool) -> Result<f64> {
    if bin >= hazards.len() {
        return Err(Error::Index {
            index: bin,
            len: hazards.len(),
        });
    }
    if let Some((s, h)) = hazards
        .iter()
        .enumerate()
        .find(|(_, &h)| !(h > 0.0 && h < 1.0))
    {
        return Err(Error::Training(format!(
            "hazard {s} is {h}, outside (0, 1)"
        )));
    }
    let mut loss = -hazards[..bin].iter().map(|h| (1.0 - h).ln()).sum::<f64>();
    loss -= if censored {
        (1.0 - hazards[bin]).ln()
    } else {
        hazards[bin].ln()
    };
    Ok(loss)
}
