use serde::Serialize;

use crate::error::{Error, Result};
use crate::survival::{chi_square_sf, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogrankResult {
    pub observed_a: f64,
    pub expected_a: f64,
    pub variance: f64,
    pub chi_square: f64,
    pub p_value: f64,
}

/// Two-group logrank test with hypergeometric variance. `p_value` is the
/// upper tail of chi-square with one degree of freedom, floored at the
/// smallest positive normal double.
pub fn logrank_test<A: Observation, B: Observation>(
    group_a: &[A],
    group_b: &[B],
) -> Result<LogrankResult> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::Validation(
            "logrank test needs two non-empty groups".into(),
        ));
    }
    // (time, is_event, in_a)
    let mut obs: Vec<(f64, bool, bool)> = group_a
        .iter()
        .map(|o| (o.time(), !o.censored(), true))
        .chain(group_b.iter().map(|o| (o.time(), !o.censored(), false)))
        .collect();
    if !obs.iter().any(|o| o.1) {
        return Err(Error::UndefinedMetric(
            "logrank test is undefined without events".into(),
        ));
    }
    obs.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut at_risk_a = group_a.len() as f64;
    let mut at_risk = obs.len() as f64;
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let group = &obs[i..i + obs[i..].iter().take_while(|o| o.0 == t).count()];
        let d = group.iter().filter(|o| o.1).count() as f64;
        if d > 0.0 {
            let d_a = group.iter().filter(|o| o.1 && o.2).count() as f64;
            let frac_a = at_risk_a / at_risk;
            observed += d_a;
            expected += d * frac_a;
            if at_risk > 1.0 {
                variance += d * frac_a * (1.0 - frac_a) * (at_risk - d) / (at_risk - 1.0);
            }
        }
        at_risk -= group.len() as f64;
        at_risk_a -= group.iter().filter(|o| o.2).count() as f64;
        i += group.len();
    }
    let chi_square = if variance > 0.0 {
        (observed - expected).powi(2) / variance
    } else {
        0.0
    };
    Ok(LogrankResult {
        observed_a: observed,
        expected_a: expected,
        variance,
        chi_square,
        p_value: chi_square_sf(chi_square, 1.0).max(f64::MIN_POSITIVE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SurvivalLabel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    fn group(obs: &[(f64, bool)]) -> Vec<SurvivalLabel> {
        obs.iter()
            .map(|&(t, e)| SurvivalLabel::new("p", t, !e).unwrap())
            .collect()
    }

    #[test]
    fn six_versus_six_reference() {
        // O, E and V accumulated by hand per event time; chi-square and p
        // cross-checked against statsmodels' survdiff (4.1200247602837585,
        // 0.04237845810050278).
        let a = group(&[(1.0, true), (2.0, true), (4.0, true), (5.0, false), (6.0, true), (9.0, true)]);
        let b = group(&[(3.0, true), (7.0, true), (8.0, false), (10.0, true), (11.0, true), (12.0, true)]);
        let r = logrank_test(&a, &b).unwrap();
        assert_eq!(r.observed_a, 5.0);
        assert!((r.expected_a - 2.501_370_851_370_851_2).abs() < 1e-12);
        assert!((r.variance - 1.515_317_986_086_384_1).abs() < 1e-12);
        assert!((r.chi_square - 4.120_024_760_283_76).abs() < 1e-10);
        assert!((r.p_value - 0.042_378_458_100_502_78).abs() < 1e-10);

        let swapped = logrank_test(&b, &a).unwrap();
        assert!((swapped.chi_square - r.chi_square).abs() < 1e-12);
    }

    #[test]
    fn identical_groups_give_zero() {
        let a = group(&[(1.0, true), (4.0, false), (6.0, true)]);
        let r = logrank_test(&a, &a.clone()).unwrap();
        assert!((r.observed_a - r.expected_a).abs() < 1e-12);
        assert!(r.chi_square < 1e-24);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separated_exponentials_are_significant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fast = Exp::new(1.0 / 5.0).unwrap();
        let slow = Exp::new(1.0 / 500.0).unwrap();
        let a: Vec<_> = (0..50).map(|_| (fast.sample(&mut rng), true)).collect();
        let b: Vec<_> = (0..50).map(|_| (slow.sample(&mut rng), true)).collect();
        let r = logrank_test(&group(&a), &group(&b)).unwrap();
        assert!(r.p_value < 1e-3, "{r:?}");
        assert!(r.p_value > 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        let censored = group(&[(1.0, false), (2.0, false)]);
        assert!(matches!(
            logrank_test(&censored, &censored),
            Err(Error::UndefinedMetric(_))
        ));
        let empty: Vec<SurvivalLabel> = Vec::new();
        assert!(logrank_test(&empty, &group(&[(1.0, true)])).is_err());
        // A single event with one subject at risk has zero variance.
        let r = logrank_test(&group(&[(1.0, true)]), &group(&[(0.5, false)])).unwrap();
        assert_eq!(r.chi_square, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    proptest::proptest! {
        #[test]
        fn swap_symmetry_and_p_range(
            a in proptest::collection::vec((1u32..20, proptest::bool::ANY), 1..30),
            b in proptest::collection::vec((1u32..20, proptest::bool::ANY), 1..30),
        ) {
            let ga = group(&a.iter().map(|&(t, e)| (t as f64, e)).collect::<Vec<_>>());
            let gb = group(&b.iter().map(|&(t, e)| (t as f64, e)).collect::<Vec<_>>());
            match (logrank_test(&ga, &gb), logrank_test(&gb, &ga)) {
                (Ok(x), Ok(y)) => {
                    proptest::prop_assert!((x.chi_square - y.chi_square).abs() <= 1e-9 * x.chi_square.max(1.0));
                    proptest::prop_assert!(x.chi_square >= 0.0);
                    proptest::prop_assert!(x.p_value > 0.0 && x.p_value <= 1.0);
                }
                (Err(Error::UndefinedMetric(_)), Err(Error::UndefinedMetric(_))) => {
                    proptest::prop_assert!(a.iter().chain(&b).all(|&(_, e)| !e));
                }
                (x, y) => proptest::prop_assert!(false, "{x:?} / {y:?}"),
            }
        }
    }
}
