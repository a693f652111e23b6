//! Pearson correlation with a two-sided t-test p value.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least 3 paired samples, got {0}")]
    InsufficientData(usize),
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation is undefined for a constant series")]
    ConstantSeries,
    #[error("series contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Significance {
    #[serde(rename = "ns")]
    NotSignificant,
    #[serde(rename = "*")]
    P05,
    #[serde(rename = "**")]
    P01,
    #[serde(rename = "***")]
    P001,
}

impl Significance {
    pub fn from_p(p: f64) -> Self {
        if p <= 0.001 {
            Significance::P001
        } else if p <= 0.01 {
            Significance::P01
        } else if p <= 0.05 {
            Significance::P05
        } else {
            Significance::NotSignificant
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Significance::NotSignificant => "ns",
            Significance::P05 => "*",
            Significance::P01 => "**",
            Significance::P001 => "***",
        }
    }
}

impl fmt::Display for Significance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub p: f64,
    pub n: usize,
    pub label: Significance,
}

/// Two-sided p value of a correlation `r` over `n` samples.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r.abs() * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t)).min(1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::InsufficientData(n));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantSeries);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let p = correlation_p_value(r, n);
    Ok(CorrelationResult {
        r,
        p,
        n,
        label: Significance::from_p(p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_correlations() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let c = pearson(&x, &x).unwrap();
        assert_eq!(c.r, 1.0);
        assert_eq!(c.label, Significance::P001);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg).unwrap().r, -1.0);
    }

    #[test]
    fn hand_case() {
        let c = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert_abs_diff_eq!(c.r, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(c.p, 0.1041, epsilon = 1e-4);
        assert_eq!(c.label, Significance::NotSignificant);
    }

    #[test]
    fn legend_thresholds() {
        assert_eq!(Significance::from_p(0.05), Significance::P05);
        assert_eq!(Significance::from_p(0.0500001), Significance::NotSignificant);
        assert_eq!(Significance::from_p(0.01), Significance::P01);
        assert_eq!(Significance::from_p(0.001), Significance::P001);
        assert_eq!(Significance::from_p(0.0011).label(), "**");
    }

    #[test]
    fn errors() {
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::InsufficientData(2))));
        assert!(matches!(pearson(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(StatsError::ConstantSeries)));
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }
}
