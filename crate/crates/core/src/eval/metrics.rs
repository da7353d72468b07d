use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics {
    pub name: String,
    pub n: usize,
    pub mse: f64,
    /// Mean of `pred − truth`.
    pub bias: f64,
    /// Mean of `|pred − truth| / |truth|` over voxels with nonzero truth.
    pub rel_error: f64,
}

/// Per-column metrics of `pred` against `truth`, both `[n × names.len()]`
/// row-major. Rows where either side is non-finite are skipped.
pub fn param_metrics(pred: &[f64], truth: &[f64], names: &[&str]) -> Result<Vec<ParamMetrics>> {
    let p = names.len();
    if pred.len() != truth.len() || p == 0 || !pred.len().is_multiple_of(p) {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} truths for {p} parameters",
            pred.len(),
            truth.len()
        )));
    }
    let rows = pred.len() / p;
    let valid: Vec<usize> = (0..rows)
        .filter(|&i| (0..p).all(|k| pred[i * p + k].is_finite() && truth[i * p + k].is_finite()))
        .collect();
    Ok(names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let n = valid.len();
            let mut se = 0.0;
            let mut bias = 0.0;
            let mut rel = 0.0;
            let mut n_rel = 0;
            for &i in &valid {
                let d = pred[i * p + k] - truth[i * p + k];
                se += d * d;
                bias += d;
                let t = truth[i * p + k];
                if t != 0.0 {
                    rel += (d / t).abs();
                    n_rel += 1;
                }
            }
            let nf = n.max(1) as f64;
            ParamMetrics {
                name: name.to_string(),
                n,
                mse: if n == 0 { f64::NAN } else { se / nf },
                bias: if n == 0 { f64::NAN } else { bias / nf },
                rel_error: if n_rel == 0 { f64::NAN } else { rel / n_rel as f64 },
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
    pub mean_diff: f64,
    /// Set when the paired differences have zero variance; `p` is then 1 for
    /// identical samples and NaN otherwise.
    pub zero_variance: bool,
}

/// Two-sided paired Student t-test of `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Data(format!("paired t-test needs ≥ 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = (n - 1) as f64;
    if var == 0.0 {
        let p = if mean == 0.0 { 1.0 } else { f64::NAN };
        return Ok(TTest {
            t: if mean == 0.0 { 0.0 } else { f64::NAN },
            df,
            p,
            mean_diff: mean,
            zero_variance: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
    let p = 2.0 * dist.cdf(-t.abs());
    Ok(TTest {
        t,
        df,
        p,
        mean_diff: mean,
        zero_variance: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let t = [0.1, 1e-3, 0.02, 0.3, 2e-3, 0.05];
        let m = param_metrics(&t, &t, &["f", "D", "Dstar"]).unwrap();
        assert!(m.iter().all(|p| p.mse == 0.0 && p.bias == 0.0 && p.rel_error == 0.0 && p.n == 2));
    }

    #[test]
    fn two_pass_oracle() {
        let truth: Vec<f64> = (0..300).map(|i| 0.1 + (i as f64 * 0.7).sin().abs()).collect();
        let pred: Vec<f64> = truth.iter().enumerate().map(|(i, t)| t + 0.01 * (i as f64 * 1.3).cos()).collect();
        let m = param_metrics(&pred, &truth, &["a", "b", "c"]).unwrap();
        for (k, pm) in m.iter().enumerate() {
            let diffs: Vec<f64> = (0..100).map(|i| pred[i * 3 + k] - truth[i * 3 + k]).collect();
            let mse = diffs.iter().map(|d| d * d).sum::<f64>() / 100.0;
            assert!((pm.mse - mse).abs() <= 1e-12 * mse.max(1e-300));
        }
    }

    #[test]
    fn self_comparison_is_p_one() {
        let a = [1.0, 2.0, 3.5];
        let t = paired_t_test(&a, &a).unwrap();
        assert_eq!(t.p, 1.0);
        assert!(t.zero_variance);
    }

    #[test]
    fn t_test_matches_reference() {
        // scipy.stats.ttest_rel([1,2,3,4,5],[1.5,2.1,3.9,4.2,6.3])
        let t = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.5, 2.1, 3.9, 4.2, 6.3]).unwrap();
        assert!((t.t - -2.683281572999748).abs() < 1e-12, "{}", t.t);
        assert!((t.p - 0.05504060895249944).abs() < 1e-10, "{}", t.p);
    }

    #[test]
    fn non_finite_rows_are_skipped() {
        let m = param_metrics(&[1.0, f64::NAN], &[1.0, 2.0], &["x"]).unwrap();
        assert_eq!(m[0].n, 1);
    }
}
