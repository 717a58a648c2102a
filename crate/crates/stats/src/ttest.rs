//! Two-tailed Student's t tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::describe::{mean, variance};
use crate::{Result, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-tailed p-value of `t` under Student's t with `df` degrees of freedom.
pub fn two_tailed_p(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(StatsError::InvalidArgument(format!("degrees of freedom must be positive, got {df}")));
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| StatsError::Numeric(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

/// Paired test on `a[i] - b[i]`; df = n - 1 unless overridden.
///
/// Identical inputs give t = 0, p = 1. Constant but nonzero differences have an
/// infinite statistic and are rejected as degenerate.
pub fn paired_t_test(a: &[f64], b: &[f64], df_override: Option<usize>) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(StatsError::InvalidArgument(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::InvalidArgument("paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidArgument("non-finite value in paired samples".into()));
    }
    let df = df_override.unwrap_or(n - 1) as f64;
    let m = mean(&d);
    let var = variance(&d, 1);
    if var == 0.0 {
        if m == 0.0 {
            return Ok(TTest { t: 0.0, df, p: 1.0 });
        }
        return Err(StatsError::Degenerate(format!("differences are constant ({m}); t is infinite")));
    }
    let t = m / (var / n as f64).sqrt();
    Ok(TTest { t, df, p: two_tailed_p(t, df)? })
}

/// Two-sample equal-variance test of mean(a) - mean(b); df = n_a + n_b - 2 unless overridden.
pub fn pooled_t_test(a: &[f64], b: &[f64], df_override: Option<usize>) -> Result<TTest> {
    let (na, nb) = (a.len(), b.len());
    if na < 1 || nb < 1 || na + nb < 3 {
        return Err(StatsError::InvalidArgument(format!(
            "pooled t-test needs nonempty groups with at least three values in total (got {na} and {nb})"
        )));
    }
    let df = df_override.unwrap_or(na + nb - 2) as f64;
    let ss = |xs: &[f64]| {
        let m = mean(xs);
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
    };
    let pooled = (ss(a) + ss(b)) / (na + nb - 2) as f64;
    let diff = mean(a) - mean(b);
    if pooled == 0.0 {
        if diff == 0.0 {
            return Ok(TTest { t: 0.0, df, p: 1.0 });
        }
        return Err(StatsError::Degenerate("both groups constant with different means".into()));
    }
    let t = diff / (pooled * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt();
    Ok(TTest { t, df, p: two_tailed_p(t, df)? })
}
