//! Method-of-moments estimator for the balanced one-way model.

use serde::{Deserialize, Serialize};

use crate::design::{BalancedDataset, Design};
use crate::error::{Error, Result};
use crate::suffstats::oneway_ss_values;

/// Divisor convention for the between and within mean squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnovaVariant {
    /// `SS_A/(a-1)` and `MSE = SS_E/(a(n-1))`. Coincides with REML for balanced data.
    #[default]
    Unbiased,
    /// `SS_A/a` and `MSE = SS_E/(n(a-1))`.
    Verbatim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaEstimate {
    pub mse: f64,
    pub tau_raw: f64,
    pub tau_trunc: f64,
    pub truncated: bool,
}

impl AnovaEstimate {
    fn from_mean_squares(between: f64, mse: f64, n: usize) -> Self {
        let tau_raw = (between - mse) / n as f64;
        Self {
            mse,
            tau_raw,
            tau_trunc: tau_raw.max(0.0),
            truncated: tau_raw < 0.0,
        }
    }
}

pub fn anova_oneway_values(values: &[f64], a: usize, n: usize, variant: AnovaVariant) -> AnovaEstimate {
    let ss = oneway_ss_values(values, a, n);
    let (between, mse) = match variant {
        AnovaVariant::Unbiased => (ss.ss_a / (a - 1) as f64, ss.ss_e / (a * (n - 1)) as f64),
        AnovaVariant::Verbatim => (ss.ss_a / a as f64, ss.ss_e / (n * (a - 1)) as f64),
    };
    AnovaEstimate::from_mean_squares(between, mse, n)
}

pub fn anova_oneway(data: &BalancedDataset, variant: AnovaVariant) -> Result<AnovaEstimate> {
    let Design::OneWay(d) = data.design() else {
        return Err(Error::DegenerateDesign(
            "the ANOVA estimator needs a one-way design".into(),
        ));
    };
    Ok(anova_oneway_values(data.values(), d.a(), d.n(), variant))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::OneWayDesign;

    fn data(values: Vec<f64>, a: usize, n: usize) -> BalancedDataset {
        BalancedDataset::new(OneWayDesign::new(a, n).unwrap(), values, None).unwrap()
    }

    #[test]
    fn hand_two_by_two() {
        // Clusters (1, 3) and (5, 7): SS_A = 16, SS_E = 4.
        let d = data(vec![1.0, 3.0, 5.0, 7.0], 2, 2);
        let u = anova_oneway(&d, AnovaVariant::Unbiased).unwrap();
        assert_eq!(u.mse, 2.0);
        assert_eq!(u.tau_raw, 7.0);
        let v = anova_oneway(&d, AnovaVariant::Verbatim).unwrap();
        assert_eq!(v.mse, 2.0);
        assert_eq!(v.tau_raw, 3.0);
        assert!(!u.truncated);
    }

    #[test]
    fn equal_cluster_means_truncate() {
        let d = data(vec![1.0, 3.0, 3.0, 1.0], 2, 2);
        let e = anova_oneway(&d, AnovaVariant::Unbiased).unwrap();
        assert_eq!(e.tau_raw, -1.0);
        assert_eq!(e.tau_trunc, 0.0);
        assert!(e.truncated);
    }

    #[test]
    fn rejects_twoway() {
        let d = BalancedDataset::new(
            crate::design::TwoWayNestedDesign::new(2, 2, 2).unwrap(),
            (0..8).map(f64::from).collect(),
            None,
        )
        .unwrap();
        assert!(anova_oneway(&d, AnovaVariant::Unbiased).is_err());
    }
}
