//! Small statistics toolkit: t-based confidence intervals, Welch's two-sample
//! t-test, and Benjamini–Hochberg false-discovery-rate adjustment.
//!
//! Distribution quantiles and CDFs come from `statrs`; this module adds the
//! estimators and the conventions around degenerate inputs.

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

/// Errors from statistical estimators.
#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn check_finite(label: &str, values: &[f64]) -> Result<(), StatsError> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(StatsError::InvalidArgument(format!(
            "{label} contains a non-finite value ({v})"
        )));
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (ddof = 1). Caller guarantees `len ≥ 2`.
fn sample_variance(values: &[f64], mean: f64) -> f64 {
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).max(0.0)
}

/// Sample mean and the half-width of its 95% Student-t confidence interval,
/// `t_{0.975, n−1} · s / √n`.
///
/// A single observation yields half-width 0 — there is no dispersion
/// estimate, and callers aggregating over one seed still get a well-formed
/// row. Empty input is an error.
pub fn mean_ci95(values: &[f64]) -> Result<(f64, f64), StatsError> {
    if values.is_empty() {
        return Err(StatsError::InsufficientData { needed: 1, got: 0 });
    }
    check_finite("sample", values)?;
    let m = mean(values);
    if values.len() == 1 {
        return Ok((m, 0.0));
    }
    let n = values.len() as f64;
    let s = sample_variance(values, m).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("n ≥ 2 gives positive degrees of freedom")
        .inverse_cdf(0.975);
    Ok((m, t * s / n.sqrt()))
}

/// Result of Welch's unequal-variance two-sample t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub statistic: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Welch's t-test for a difference in means, two-sided.
///
/// Each sample needs at least two observations. When both samples have zero
/// variance the statistic is undefined; equal means are reported as a null
/// result (`statistic = 0`, `p = 1`), while different means are an error —
/// the caller is comparing constants and no finite p-value is meaningful.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest, StatsError> {
    for (label, sample) in [("first sample", a), ("second sample", b)] {
        if sample.len() < 2 {
            return Err(StatsError::InsufficientData {
                needed: 2,
                got: sample.len(),
            });
        }
        check_finite(label, sample)?;
    }
    let (ma, mb) = (mean(a), mean(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a, ma), sample_variance(b, mb));

    if va == 0.0 && vb == 0.0 {
        if ma == mb {
            return Ok(WelchTest {
                statistic: 0.0,
                df: na + nb - 2.0,
                p_value: 1.0,
            });
        }
        return Err(StatsError::InvalidArgument(
            "both samples have zero variance but different means".to_string(),
        ));
    }

    let sa = va / na;
    let sb = vb / nb;
    let se = (sa + sb).sqrt();
    let statistic = (ma - mb) / se;
    let df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| StatsError::InvalidArgument(format!("bad degrees of freedom {df}: {e}")))?;
    let p_value = (2.0 * dist.cdf(-statistic.abs())).clamp(0.0, 1.0);
    Ok(WelchTest {
        statistic,
        df,
        p_value,
    })
}

/// Benjamini–Hochberg step-up adjustment.
///
/// Returns q-values in the original order: sort p ascending, take
/// `p_(i) · m / i`, enforce monotonicity with a running minimum from the
/// largest rank down, and clip to 1.
pub fn bh_fdr_adjust(p_values: &[f64]) -> Result<Vec<f64>, StatsError> {
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(StatsError::InvalidArgument(format!(
                "p-value {p} outside [0, 1]"
            )));
        }
    }
    let m = p_values.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        p_values[i]
            .partial_cmp(&p_values[j])
            .expect("validated p-values are comparable")
    });
    let mut adjusted_sorted = vec![0.0; m];
    let mut running_min = f64::INFINITY;
    for rank in (0..m).rev() {
        let raw = p_values[order[rank]] * m as f64 / (rank + 1) as f64;
        running_min = running_min.min(raw);
        adjusted_sorted[rank] = running_min.min(1.0);
    }
    let mut out = vec![0.0; m];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = adjusted_sorted[rank];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(got: f64, want: f64, tol: f64) {
        assert!(
            (got - want).abs() <= tol,
            "got {got}, want {want} (tol {tol})"
        );
    }

    #[test]
    fn ci_matches_reference_values() {
        // Frozen reference values computed with an independent
        // implementation of the Student-t interval.
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_close(m, 3.0, 1e-12);
        assert_close(h, 1.9632431614775607, 1e-9);

        let (m, h) = mean_ci95(&[0.0, 2.0]).unwrap();
        assert_close(m, 1.0, 1e-12);
        assert_close(h, 12.706204736432094, 1e-7);
    }

    #[test]
    fn ci_degenerate_inputs() {
        assert_eq!(
            mean_ci95(&[]),
            Err(StatsError::InsufficientData { needed: 1, got: 0 })
        );
        // One observation: mean is itself, no dispersion estimate.
        assert_eq!(mean_ci95(&[7.5]), Ok((7.5, 0.0)));
        // Zero variance: exact interval.
        assert_eq!(mean_ci95(&[2.0, 2.0, 2.0]), Ok((2.0, 0.0)));
        assert!(mean_ci95(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn welch_matches_reference_values() {
        // Equal variances, equal sizes.
        let t = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_close(t.statistic, -1.0, 1e-12);
        assert_close(t.df, 8.0, 1e-9);
        assert_close(t.p_value, 0.34659350708733416, 1e-9);

        // Strongly unequal variances and sizes.
        let t = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[10.0, 20.0, 30.0]).unwrap();
        assert_close(t.statistic, -2.9226481008123892, 1e-9);
        assert_close(t.df, 2.0602182254496366, 1e-9);
        assert_close(t.p_value, 0.09643676553672983, 1e-9);

        // One sample constant: Welch–Satterthwaite collapses to n−1 of the
        // varying sample.
        let t = welch_t_test(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_close(t.statistic, 5.196152422706632, 1e-9);
        assert_close(t.df, 2.0, 1e-9);
        assert_close(t.p_value, 0.03509871864598465, 1e-9);
    }

    #[test]
    fn welch_degenerate_inputs() {
        assert!(matches!(
            welch_t_test(&[1.0], &[1.0, 2.0]),
            Err(StatsError::InsufficientData { needed: 2, got: 1 })
        ));
        // Both constant, equal: no evidence of a difference.
        let t = welch_t_test(&[3.0, 3.0], &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        // Both constant, different: undefined statistic.
        assert!(matches!(
            welch_t_test(&[3.0, 3.0], &[4.0, 4.0]),
            Err(StatsError::InvalidArgument(_))
        ));
    }

    #[test]
    fn bh_matches_reference_values() {
        let q = bh_fdr_adjust(&[0.01, 0.02, 0.03]).unwrap();
        for v in &q {
            assert_close(*v, 0.03, 1e-12);
        }

        // Order must be preserved relative to the input.
        let q = bh_fdr_adjust(&[0.04, 0.001, 0.03, 0.002]).unwrap();
        let want = [0.04, 0.004, 0.04, 0.004];
        for (got, want) in q.iter().zip(want) {
            assert_close(*got, want, 1e-12);
        }

        // Large p-values clip to 1.
        let q = bh_fdr_adjust(&[0.9, 0.95, 1.0]).unwrap();
        assert_eq!(q, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn bh_edge_cases() {
        assert_eq!(bh_fdr_adjust(&[]).unwrap(), Vec::<f64>::new());
        assert_eq!(bh_fdr_adjust(&[0.2]).unwrap(), vec![0.2]);
        assert!(bh_fdr_adjust(&[0.5, 1.5]).is_err());
        assert!(bh_fdr_adjust(&[-0.1]).is_err());
        // Adjusted values never fall below the raw p-value at rank 1 ... m.
        let ps = [0.001, 0.5, 0.2, 0.0, 1.0, 0.33];
        let qs = bh_fdr_adjust(&ps).unwrap();
        for (p, q) in ps.iter().zip(&qs) {
            assert!(q >= p, "q {q} < p {p}");
            assert!(*q <= 1.0);
        }
    }
}
