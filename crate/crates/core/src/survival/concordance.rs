use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Out-of-sample risk for one patient alongside its follow-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPrediction {
    pub patient_id: String,
    pub risk: f64,
    pub time: f64,
    pub censored: bool,
}

/// Pair counts behind a concordance index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceCounts {
    pub comparable: u64,
    pub concordant: u64,
    pub tied_risk: u64,
}

impl ConcordanceCounts {
    pub fn c_index(&self) -> Result<f64> {
        if self.comparable == 0 {
            return Err(Error::UndefinedMetric(
                "c-Index has no comparable pairs".into(),
            ));
        }
        Ok((self.concordant as f64 + 0.5 * self.tied_risk as f64) / self.comparable as f64)
    }
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, index: usize) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted entries with index < `end`.
    fn prefix(&self, end: usize) -> u64 {
        let mut i = end;
        let mut total = 0;
        while i > 0 {
            total += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        total
    }
}

/// Harrell's pair counts in `O(n log n)`.
///
/// A pair `(i, j)` is comparable when `time_i < time_j` and `i` had an
/// event; it is concordant when `risk_i > risk_j`; equal risks count as
/// ties.
pub fn concordance_counts(preds: &[RiskPrediction]) -> Result<ConcordanceCounts> {
    if let Some(p) = preds.iter().find(|p| !p.risk.is_finite() || !p.time.is_finite()) {
        return Err(Error::Validation(format!(
            "patient {:?}: risk and time must be finite",
            p.patient_id
        )));
    }
    let mut risks: Vec<f64> = preds.iter().map(|p| p.risk).collect();
    risks.sort_by(f64::total_cmp);
    risks.dedup();
    let rank = |r: f64| risks.partition_point(|&x| x < r);

    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].time.total_cmp(&preds[a].time));

    let mut tree = Fenwick::new(risks.len());
    let mut inserted = 0u64;
    let mut counts = ConcordanceCounts::default();
    let mut start = 0;
    while start < order.len() {
        let t = preds[order[start]].time;
        let end = start
            + order[start..]
                .iter()
                .take_while(|&&i| preds[i].time == t)
                .count();
        // Everything inserted so far has a strictly later time.
        for &i in &order[start..end] {
            if preds[i].censored {
                continue;
            }
            let r = rank(preds[i].risk);
            let below = tree.prefix(r);
            let equal = tree.prefix(r + 1) - below;
            counts.comparable += inserted;
            counts.concordant += below;
            counts.tied_risk += equal;
        }
        for &i in &order[start..end] {
            tree.add(rank(preds[i].risk));
            inserted += 1;
        }
        start = end;
    }
    Ok(counts)
}

pub fn concordance_index(preds: &[RiskPrediction]) -> Result<f64> {
    concordance_counts(preds)?.c_index()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(risk: f64, time: f64, censored: bool) -> RiskPrediction {
        RiskPrediction {
            patient_id: String::new(),
            risk,
            time,
            censored,
        }
    }

    #[test]
    fn perfect_and_tied() {
        let perfect: Vec<_> = (0..6).map(|i| pred(10.0 - i as f64, i as f64 + 1.0, false)).collect();
        assert_eq!(concordance_index(&perfect).unwrap(), 1.0);
        let tied: Vec<_> = (0..6).map(|i| pred(3.0, i as f64 + 1.0, i % 2 == 0)).collect();
        assert_eq!(concordance_index(&tied).unwrap(), 0.5);
    }

    #[test]
    fn all_censored_is_undefined() {
        let preds: Vec<_> = (0..4).map(|i| pred(i as f64, i as f64, true)).collect();
        assert!(matches!(concordance_index(&preds), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn equal_times_are_not_comparable() {
        let preds = vec![pred(1.0, 5.0, false), pred(0.0, 5.0, false)];
        assert!(concordance_index(&preds).is_err());
    }

    #[test]
    fn small_hand_example() {
        // Comparable pairs: (a,b), (a,c), (c,b). Concordant: (a,b), (c,b). Tied: (a,c).
        let preds = vec![
            pred(2.0, 1.0, false), // a
            pred(1.0, 9.0, true),  // b
            pred(2.0, 4.0, false), // c
        ];
        let counts = concordance_counts(&preds).unwrap();
        assert_eq!(
            counts,
            ConcordanceCounts {
                comparable: 3,
                concordant: 2,
                tied_risk: 1
            }
        );
        assert!((counts.c_index().unwrap() - 2.5 / 3.0).abs() < 1e-15);
    }

    fn brute_force(preds: &[RiskPrediction]) -> ConcordanceCounts {
        let mut c = ConcordanceCounts::default();
        for i in preds {
            for j in preds {
                if !i.censored && i.time < j.time {
                    c.comparable += 1;
                    if i.risk > j.risk {
                        c.concordant += 1;
                    } else if i.risk == j.risk {
                        c.tied_risk += 1;
                    }
                }
            }
        }
        c
    }

    fn instances() -> impl proptest::strategy::Strategy<Value = Vec<RiskPrediction>> {
        use proptest::prelude::*;
        // Small integer ranges force ties in both time and risk.
        proptest::collection::vec((0u8..12, 1u8..15, any::<bool>()), 1..50).prop_map(|v| {
            v.into_iter()
                .map(|(r, t, c)| pred(r as f64 * 0.5, t as f64, c))
                .collect()
        })
    }

    proptest::proptest! {
        #[test]
        fn matches_brute_force(preds in instances()) {
            proptest::prop_assert_eq!(concordance_counts(&preds).unwrap(), brute_force(&preds));
        }

        #[test]
        fn rank_statistic(preds in instances()) {
            let Ok(c) = concordance_index(&preds) else { return Ok(()) };
            let transformed: Vec<_> = preds
                .iter()
                .map(|p| pred(p.risk.exp() * 3.0 - 1.0, p.time, p.censored))
                .collect();
            proptest::prop_assert_eq!(concordance_index(&transformed).unwrap(), c);
            let negated: Vec<_> = preds.iter().map(|p| pred(-p.risk, p.time, p.censored)).collect();
            let counts = concordance_counts(&preds).unwrap();
            if counts.tied_risk == 0 {
                let flipped = concordance_index(&negated).unwrap();
                proptest::prop_assert!((flipped - (1.0 - c)).abs() < 1e-12);
            }
        }
    }
}
