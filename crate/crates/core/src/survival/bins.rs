use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SurvivalLabel;

/// Upper bin edges in months. The last edge is always `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinBoundaries {
    edges: Vec<f64>,
}

impl BinBoundaries {
    /// Finite interior edges; `+inf` is appended.
    pub fn from_edges(interior: Vec<f64>) -> Result<Self> {
        if interior.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config("bin edges must be finite".into()));
        }
        if interior.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "bin edges must be strictly increasing, got {interior:?}"
            )));
        }
        let mut edges = interior;
        edges.push(f64::INFINITY);
        Ok(Self { edges })
    }

    /// Edges at the `i / n_bins` quantiles (linear interpolation) of the
    /// uncensored times in `labels`.
    pub fn from_training(labels: &[SurvivalLabel], n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::Config("n_bins must be >= 1".into()));
        }
        let mut times: Vec<f64> = labels.iter().filter(|l| l.event()).map(|l| l.time).collect();
        if times.is_empty() {
            return Err(Error::Config(
                "training fold has no uncensored patients; bin boundaries are undefined".into(),
            ));
        }
        times.sort_by(f64::total_cmp);
        let interior = (1..n_bins)
            .map(|i| quantile(&times, i as f64 / n_bins as f64))
            .collect();
        Self::from_edges(interior).map_err(|e| {
            Error::Config(format!(
                "{} uncensored training times cannot form {n_bins} bins: {e}",
                times.len()
            ))
        })
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Index of the first edge `>= time`.
    pub fn bin_of(&self, time: f64) -> usize {
        self.edges.partition_point(|&e| e < time)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn assign_bins(labels: &mut [SurvivalLabel], boundaries: &BinBoundaries) {
    for l in labels {
        l.bin = Some(boundaries.bin_of(l.time));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(time: f64, censored: bool) -> SurvivalLabel {
        SurvivalLabel::new("p", time, censored).unwrap()
    }

    #[test]
    fn edge_inclusive_membership() {
        let b = BinBoundaries::from_edges(vec![12.0, 24.0, 48.0]).unwrap();
        assert_eq!(b.n_bins(), 4);
        assert_eq!(b.bin_of(13.0), 1);
        assert_eq!(b.bin_of(12.0), 0);
        assert_eq!(b.bin_of(0.0), 0);
        assert_eq!(b.bin_of(10000.0), 3);
        let mut labels = vec![label(24.0, true), label(50.0, false)];
        assign_bins(&mut labels, &b);
        assert_eq!(labels[0].bin, Some(1));
        assert_eq!(labels[1].bin, Some(3));
    }

    #[test]
    fn quartiles_ignore_censored_times() {
        // Uncensored times 1..=9: quartiles at 3, 5, 7.
        let mut labels: Vec<_> = (1..=9).map(|t| label(t as f64, false)).collect();
        labels.push(label(1000.0, true));
        let b = BinBoundaries::from_training(&labels, 4).unwrap();
        assert_eq!(b.edges(), &[3.0, 5.0, 7.0, f64::INFINITY]);
    }

    #[test]
    fn interpolated_quartiles() {
        // numpy.quantile([1, 2, 4, 8], [.25, .5, .75]) = [1.75, 3.0, 5.0]
        let labels: Vec<_> = [1.0, 2.0, 4.0, 8.0].iter().map(|&t| label(t, false)).collect();
        let b = BinBoundaries::from_training(&labels, 4).unwrap();
        assert_eq!(b.edges(), &[1.75, 3.0, 5.0, f64::INFINITY]);
    }

    #[test]
    fn degenerate_training_sets_are_config_errors() {
        let censored = vec![label(3.0, true), label(4.0, true)];
        assert!(matches!(
            BinBoundaries::from_training(&censored, 4),
            Err(Error::Config(_))
        ));
        let repeated = vec![label(3.0, false); 5];
        assert!(matches!(
            BinBoundaries::from_training(&repeated, 4),
            Err(Error::Config(_))
        ));
        assert_eq!(BinBoundaries::from_training(&repeated, 1).unwrap().n_bins(), 1);
        assert!(BinBoundaries::from_edges(vec![2.0, 2.0]).is_err());
    }
}
