use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
}

/// Two-tailed paired t-test on `a[i] − b[i]`.
///
/// Identical samples give `t = 0, p = 1`. A nonzero but constant difference has no spread, so the
/// statistic is undefined and a [`Error::Degenerate`] is returned.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { op: "paired_ttest", left: vec![a.len()], right: vec![b.len()] });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Insufficient("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let dof = n - 1;
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(TTest { t: 0.0, p: 1.0, dof });
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / dof as f64;
    if var == 0.0 {
        return Err(Error::Degenerate(format!("paired differences are all {mean}; the t statistic is undefined")));
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::Degenerate(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, dof })
}
