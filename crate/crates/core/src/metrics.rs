//! Prognostic error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::shape("metric inputs", y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(Error::input("metrics need at least one sample"));
    }
    Ok(())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    let mse = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

/// Asymmetric PHM score: late predictions (`ŷ >= y`) decay over 10 units,
/// early ones over 13, so overestimating RUL costs more.
pub fn phm_score(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(y.iter()
        .zip(y_hat)
        .map(|(&y, &p)| {
            let d = p - y;
            if d < 0.0 {
                (-d / 13.0).exp_m1()
            } else {
                (d / 10.0).exp_m1()
            }
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub score: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self> {
        Ok(Self {
            mae: mae(y, y_hat)?,
            rmse: rmse(y, y_hat)?,
            score: phm_score(y, y_hat)?,
            n: y.len(),
        })
    }

    /// JSON object with keys `mae, rmse, mse_alias, score, n`; `mse_alias`
    /// repeats the RMSE under the name tables in the literature use for it.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mae": self.mae,
            "rmse": self.rmse,
            "mse_alias": self.rmse,
            "score": self.score,
            "n": self.n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn mae_values() {
        assert_eq!(mae(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(mae(&[0.5, 0.2, 0.9], &[0.4, 0.4, 0.9]).unwrap(), 0.1, max_relative = 1e-12);
    }

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(rmse(&[0.0; 3], &[0.3, 0.0, 0.0]).unwrap(), 0.03f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn score_values() {
        assert_eq!(phm_score(&[0.4, 0.1], &[0.4, 0.1]).unwrap(), 0.0);
        let e1 = std::f64::consts::E - 1.0;
        assert!((phm_score(&[13.0], &[0.0]).unwrap() - e1).abs() < 1e-12);
        assert!((phm_score(&[0.0], &[10.0]).unwrap() - e1).abs() < 1e-12);
        assert!(phm_score(&[0.0], &[1.0]).unwrap() > phm_score(&[1.0], &[0.0]).unwrap());
    }

    #[test]
    fn errors() {
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
        assert!(phm_score(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn report_json_keys() {
        let r = MetricReport::compute(&[1.0, 0.0], &[0.5, 0.0]).unwrap();
        let v = r.to_json();
        for k in ["mae", "rmse", "mse_alias", "score", "n"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["rmse"], v["mse_alias"]);
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..50).prop_flat_map(|n| {
            (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn mae_never_exceeds_rmse((y, p) in pairs()) {
            prop_assert!(mae(&y, &p).unwrap() <= rmse(&y, &p).unwrap() + 1e-12);
        }

        #[test]
        fn score_is_nonnegative_and_monotone((y, p) in pairs(), i in 0usize..50, bump in 0.01f64..2.0) {
            let s = phm_score(&y, &p).unwrap();
            prop_assert!(s >= 0.0);
            let i = i % y.len();
            let mut q = p.clone();
            let d = q[i] - y[i];
            q[i] = y[i] + if d >= 0.0 { d + bump } else { d - bump };
            prop_assert!(phm_score(&y, &q).unwrap() > s);
        }

        #[test]
        fn metrics_are_permutation_invariant((y, p) in pairs(), rot in 0usize..50) {
            let k = rot % y.len();
            let mut y2 = y.clone();
            let mut p2 = p.clone();
            y2.rotate_left(k);
            p2.rotate_left(k);
            prop_assert!((mae(&y, &p).unwrap() - mae(&y2, &p2).unwrap()).abs() < 1e-12);
            prop_assert!((rmse(&y, &p).unwrap() - rmse(&y2, &p2).unwrap()).abs() < 1e-12);
            prop_assert!((phm_score(&y, &p).unwrap() - phm_score(&y2, &p2).unwrap()).abs() < 1e-9);
        }
    }
}
