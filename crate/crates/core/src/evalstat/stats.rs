use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    /// Differences are all zero; `p = 1`.
    NoDifference,
    /// Differences are constant and non-zero; `p = 0`.
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    /// `None` when the variance of the differences is zero.
    pub t: Option<f64>,
    pub df: usize,
    pub p_value: f64,
    pub degenerate: Option<Degenerate>,
}

/// Two-tailed paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid(
            "paired t-test",
            format!("need equal lengths of at least 2, got {} and {}", a.len(), b.len()),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("paired t-test input".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let df = d.len() - 1;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        let (p_value, flag) = if mean == 0.0 {
            (1.0, Degenerate::NoDifference)
        } else {
            (0.0, Degenerate::ZeroVariance)
        };
        return Ok(TTest { t: None, df, p_value, degenerate: Some(flag) });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t: Some(t), df, p_value, degenerate: None })
}

/// Benjamini–Hochberg step-up adjustment; output is in input order.
pub fn bh_adjust(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid("p-value", format!("{bad} outside [0, 1]")));
    }
    let m = p.len() as f64;
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; p.len()];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        // scale factor first: m/j >= 1 so rounding never drops below the raw value
        running = running.min(m / (rank + 1) as f64 * p[i]);
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two-tailed p-values from a 50-digit regularised incomplete beta evaluation.
    pub(crate) const FIXTURES: [([f64; 5], [f64; 5], f64); 10] = [
        ([0.80, 0.82, 0.78, 0.85, 0.81], [0.75, 0.80, 0.74, 0.79, 0.77], 0.0031848127817188835),
        ([1.0, 2.0, 3.0, 4.0, 5.0], [0.0; 5], 0.01323559956368269),
        ([0.91, 0.88, 0.93, 0.90, 0.87], [0.92, 0.90, 0.91, 0.93, 0.89], 0.23549636025944325),
        ([0.5, 0.6, 0.7, 0.8, 0.9], [0.45, 0.62, 0.66, 0.81, 0.85], 0.2237669066144346),
        ([0.944, 0.951, 0.930, 0.962, 0.940], [0.901, 0.915, 0.899, 0.930, 0.910], 0.00013299262279368867),
        ([0.1, 0.4, 0.35, 0.8, 0.2], [0.3, 0.1, 0.5, 0.45, 0.6], 0.89844635112437748),
        ([2.5, 3.1, 2.9, 3.3, 2.7], [1.0, 1.2, 0.9, 1.4, 1.1], 5.1782815452785692e-5),
        ([0.742, 0.759, 0.731, 0.770, 0.748], [0.741, 0.760, 0.729, 0.772, 0.747], 0.79896585919277872),
        ([10.0, 12.0, 9.0, 11.0, 13.0], [8.0, 13.0, 7.0, 12.0, 10.0], 0.29801481173121036),
        ([0.3, 0.31, 0.29, 0.33, 0.32], [0.1, 0.5, 0.2, 0.6, 0.4], 0.59581864830999965),
    ];

    #[test]
    fn matches_reference_p_values() {
        for (a, b, want) in FIXTURES {
            let r = paired_t_test(&a, &b).unwrap();
            assert!((r.p_value - want).abs() < 1e-6, "{a:?} {b:?}: {} vs {want}", r.p_value);
            assert_eq!(r.df, 4);
        }
        let r = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
        assert!((r.t.unwrap() - 4.242640687119285).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let a = [0.7, 0.8, 0.9];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.p_value, r.degenerate), (1.0, Some(Degenerate::NoDifference)));
        let r = paired_t_test(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.p_value, r.degenerate), (0.0, Some(Degenerate::ZeroVariance)));
        let r = paired_t_test(&[1.0, -1.0, 1.0, -1.0, 0.0], &[0.0; 5]).unwrap();
        assert_eq!(r.t, Some(0.0));
        assert!((r.p_value - 1.0).abs() < 1e-15);
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh_adjust(&[0.04]).unwrap(), vec![0.04]);
        let adj = bh_adjust(&[0.01, 0.02, 0.03]).unwrap();
        for v in adj {
            assert!((v - 0.03).abs() < 1e-15);
        }
        // sorted 0.001, 0.03, 0.04, 0.5 scale to 0.004, 0.06, 0.0533, 0.5; the step-up
        // minimum pulls 0.06 down to 0.0533
        let adj = bh_adjust(&[0.03, 0.5, 0.001, 0.04]).unwrap();
        let want = [0.16 / 3.0, 0.5, 0.004, 0.16 / 3.0];
        for (a, w) in adj.iter().zip(want) {
            assert!((a - w).abs() < 1e-15, "{adj:?}");
        }
        assert!(bh_adjust(&[1.2]).is_err());
        assert!(bh_adjust(&[-0.1]).is_err());
    }

    proptest! {
        #[test]
        fn bh_properties(p in prop::collection::vec(0.0f64..=1.0, 1..20), alpha in 0.01f64..0.2) {
            let adj = bh_adjust(&p).unwrap();
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            for w in order.windows(2) {
                prop_assert!(adj[w[0]] <= adj[w[1]]);
            }
            for (a, r) in adj.iter().zip(&p) {
                prop_assert!(a >= r && *a <= 1.0);
            }
            // rejections form a prefix of the sorted raw p-values
            let rejected: Vec<bool> = order.iter().map(|&i| adj[i] <= alpha).collect();
            let k = rejected.iter().filter(|&&r| r).count();
            prop_assert!(rejected[..k].iter().all(|&r| r));
        }
    }
}
