//! Expected-road-center objectives for the raw outputs of the main lane
//! detector families. Larger values mean the detected lane structure sits
//! further right in the image.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("invalid representation: {0}")]
    Invalid(String),
}

fn invalid<T>(m: impl Into<String>) -> Result<T, AttackError> {
    Err(AttackError::Invalid(m.into()))
}

/// Per-lane existence probabilities over an `height × width` grid,
/// row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMaps {
    pub width: usize,
    pub height: usize,
    pub maps: Vec<Vec<f64>>,
}

impl ProbabilityMaps {
    pub fn new(width: usize, height: usize, maps: Vec<Vec<f64>>) -> Result<Self, AttackError> {
        let m = Self { width, height, maps };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.width == 0 || self.height == 0 || self.maps.is_empty() {
            return invalid("probability maps need L, H, W >= 1");
        }
        for (l, m) in self.maps.iter().enumerate() {
            if m.len() != self.width * self.height {
                return invalid(format!("map {l} has {} values, expected {}", m.len(), self.width * self.height));
            }
            if m.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return invalid(format!("map {l} has a value outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn at(&self, l: usize, row: usize, col: usize) -> f64 {
        self.maps[l][row * self.width + col]
    }
}

/// Polynomial lane curves `x(j)` over normalized rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialLanes {
    pub degree: usize,
    /// Per lane, `degree + 1` coefficients, highest degree first.
    pub coeffs: Vec<Vec<f64>>,
    /// Normalized sample rows.
    #[serde(default)]
    pub rows: Vec<f64>,
}

impl PolynomialLanes {
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.rows.is_empty() {
            return invalid("polynomial lanes need at least one sample row");
        }
        for (l, c) in self.coeffs.iter().enumerate() {
            if c.len() != self.degree + 1 {
                return invalid(format!("lane {l} has {} coefficients for degree {}", c.len(), self.degree));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return invalid(format!("lane {l} has non-finite coefficients"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub xs: Vec<f64>,
    pub offsets: Vec<f64>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub anchors: Vec<Anchor>,
}

impl AnchorSet {
    pub fn validate(&self) -> Result<(), AttackError> {
        for (l, a) in self.anchors.iter().enumerate() {
            if a.xs.is_empty() || a.xs.len() != a.offsets.len() {
                return invalid(format!("anchor {l} needs matching non-empty xs and offsets"));
            }
            if !(0.0..=1.0).contains(&a.prob) {
                return invalid(format!("anchor {l} probability {} outside [0, 1]", a.prob));
            }
        }
        Ok(())
    }
}

/// Mass-weighted column position of all maps, with column `c` at normalized
/// width `(c + 0.5) / W`, divided by `L·H`.
///
/// This equals 0.5 for a centered lane only when each row's probabilities
/// sum to one; see [`erc_segmentation_row_normalized`] otherwise.
pub fn erc_segmentation(maps: &ProbabilityMaps) -> f64 {
    let w = maps.width as f64;
    let mut sum = 0.0;
    for m in &maps.maps {
        for row in m.chunks_exact(maps.width) {
            for (c, p) in row.iter().enumerate() {
                sum += (c as f64 + 0.5) / w * p;
            }
        }
    }
    sum / (maps.maps.len() * maps.height) as f64
}

/// Variant that normalizes each row of each map to unit mass first; rows
/// with zero mass are skipped. Not the objective as published.
pub fn erc_segmentation_row_normalized(maps: &ProbabilityMaps) -> f64 {
    let w = maps.width as f64;
    let mut sum = 0.0;
    let mut rows = 0usize;
    for m in &maps.maps {
        for row in m.chunks_exact(maps.width) {
            let mass: f64 = row.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            rows += 1;
            sum += row
                .iter()
                .enumerate()
                .map(|(c, p)| (c as f64 + 0.5) / w * p)
                .sum::<f64>()
                / mass;
        }
    }
    if rows == 0 {
        0.0
    } else {
        sum / rows as f64
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, c| acc * x + c)
}

/// Mean polynomial value over lanes and sample rows.
pub fn erc_curve(lanes: &PolynomialLanes) -> f64 {
    if lanes.coeffs.is_empty() {
        return 0.0;
    }
    let total: f64 = lanes
        .coeffs
        .iter()
        .map(|c| lanes.rows.iter().map(|j| horner(c, *j)).sum::<f64>())
        .sum();
    total / (lanes.coeffs.len() * lanes.rows.len()) as f64
}

/// Probability-weighted sum of each anchor's mean refined x position.
pub fn erc_anchor(anchors: &AnchorSet) -> f64 {
    anchors
        .anchors
        .iter()
        .map(|a| {
            let mean = a.xs.iter().zip(&a.offsets).map(|(x, d)| x + d).sum::<f64>() / a.xs.len() as f64;
            mean * a.prob
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn centered_one_hot_is_half() {
        let (w, h) = (9, 4);
        let mut m = vec![0.0; w * h];
        for r in 0..h {
            m[r * w + 4] = 1.0;
        }
        let maps = ProbabilityMaps::new(w, h, vec![m]).unwrap();
        assert_eq!(erc_segmentation(&maps), 0.5);
    }

    #[test]
    fn segmentation_hand_cases() {
        let zero = ProbabilityMaps::new(3, 2, vec![vec![0.0; 6]]).unwrap();
        assert_eq!(erc_segmentation(&zero), 0.0);
        let diag = ProbabilityMaps::new(2, 2, vec![vec![1.0, 0.0, 0.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(erc_segmentation(&diag), 0.5, epsilon = 1e-15);
        let half = ProbabilityMaps::new(2, 1, vec![vec![0.0, 0.5]]).unwrap();
        assert_abs_diff_eq!(erc_segmentation(&half), 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(erc_segmentation_row_normalized(&half), 0.75, epsilon = 1e-15);
        assert!(ProbabilityMaps::new(2, 1, vec![vec![0.0, 1.5]]).is_err());
    }

    #[test]
    fn curve_hand_cases() {
        let c = PolynomialLanes {
            degree: 3,
            coeffs: vec![vec![0.0, 0.0, 0.0, 0.7]],
            rows: vec![0.1, 0.9],
        };
        assert_abs_diff_eq!(erc_curve(&c), 0.7, epsilon = 1e-15);
        let two = PolynomialLanes {
            degree: 0,
            coeffs: vec![vec![0.2], vec![0.6]],
            rows: vec![0.5],
        };
        assert_abs_diff_eq!(erc_curve(&two), 0.4, epsilon = 1e-15);
        let lin = PolynomialLanes {
            degree: 3,
            coeffs: vec![vec![0.0, 0.0, 1.0, 0.0]],
            rows: vec![0.2, 0.4, 0.6],
        };
        assert_abs_diff_eq!(erc_curve(&lin), 0.4, epsilon = 1e-15);
        assert!(PolynomialLanes { degree: 2, coeffs: vec![vec![1.0]], rows: vec![0.5] }
            .validate()
            .is_err());
    }

    #[test]
    fn anchor_hand_cases() {
        let one = AnchorSet {
            anchors: vec![Anchor { xs: vec![0.4, 0.6], offsets: vec![0.0, 0.0], prob: 1.0 }],
        };
        assert_abs_diff_eq!(erc_anchor(&one), 0.5, epsilon = 1e-15);
        let two = AnchorSet {
            anchors: vec![
                Anchor { xs: vec![0.3, 0.5], offsets: vec![0.0, 0.0], prob: 0.5 },
                Anchor { xs: vec![0.7], offsets: vec![0.1], prob: 0.25 },
            ],
        };
        assert_abs_diff_eq!(erc_anchor(&two), 0.4, epsilon = 1e-15);
        let none = AnchorSet {
            anchors: vec![Anchor { xs: vec![0.3], offsets: vec![0.0], prob: 0.0 }],
        };
        assert_eq!(erc_anchor(&none), 0.0);
    }
}
