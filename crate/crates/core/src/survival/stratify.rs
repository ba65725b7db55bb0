use serde::Serialize;

use crate::error::{Error, Result};
use crate::survival::RiskPrediction;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stratification {
    pub median_risk: f64,
    /// Risk at or below the median.
    pub low_risk: Vec<RiskPrediction>,
    pub high_risk: Vec<RiskPrediction>,
    /// Set when every prediction fell into one group.
    pub degenerate: bool,
}

/// Splits pooled predictions at the median risk. Ties with the median go to
/// the low-risk group. Input order is kept within each group.
pub fn stratify_by_median(preds: &[RiskPrediction]) -> Result<Stratification> {
    if preds.len() < 2 {
        return Err(Error::Validation(format!(
            "median stratification needs at least 2 predictions, got {}",
            preds.len()
        )));
    }
    if let Some(p) = preds.iter().find(|p| !p.risk.is_finite()) {
        return Err(Error::Validation(format!(
            "patient {:?} has non-finite risk",
            p.patient_id
        )));
    }
    let mut risks: Vec<f64> = preds.iter().map(|p| p.risk).collect();
    risks.sort_by(f64::total_cmp);
    let n = risks.len();
    let median_risk = if n % 2 == 1 {
        risks[n / 2]
    } else {
        0.5 * (risks[n / 2 - 1] + risks[n / 2])
    };
    let (low_risk, high_risk): (Vec<_>, Vec<_>) =
        preds.iter().cloned().partition(|p| p.risk <= median_risk);
    let degenerate = high_risk.is_empty();
    if degenerate {
        log::warn!("all {n} risks are equal; every patient is assigned to the low-risk group");
    }
    Ok(Stratification {
        median_risk,
        low_risk,
        high_risk,
        degenerate,
    })
}
