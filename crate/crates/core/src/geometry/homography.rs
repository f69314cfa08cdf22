use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::matcher::Match;

/// Smallest `|w|` accepted after projection, and smallest `|det H|`.
pub const HOMOGRAPHY_EPS: f64 = 1e-12;

/// Planar projective map on pixel coordinates, scaled so `H[2][2] = 1` when
/// that entry is nonzero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::Degenerate("homography has non-finite entries".into()));
        }
        let m = if m[(2, 2)].abs() > HOMOGRAPHY_EPS {
            m / m[(2, 2)]
        } else {
            m
        };
        let det = m.determinant();
        if det.abs() <= HOMOGRAPHY_EPS {
            return Err(Error::Degenerate(format!("homography is singular (det = {det:e})")));
        }
        Ok(Self { m })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    pub fn scaling(s: f64) -> Result<Self> {
        Self::new(Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.m[(r, c)]))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("homography is not invertible".into()))?;
        Self::new(inv)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::new(self.m * other.m)
    }

    /// Perspective-divided image of pixel point `p`.
    pub fn apply(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let v = self.m * Vector3::new(p[0], p[1], 1.0);
        if v.z.abs() <= HOMOGRAPHY_EPS {
            return Err(Error::PointAtInfinity { w: v.z });
        }
        Ok([v.x / v.z, v.y / v.z])
    }
}

/// Correct-match counts and fractions, one entry per threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct HomographyEvaluation {
    pub thresholds: Vec<f64>,
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
    pub total: usize,
}

/// Checks thresholds are positive and strictly ascending.
pub fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("no thresholds given".into()));
    }
    if thresholds.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument("thresholds must be positive".into()));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("thresholds must be strictly ascending".into()));
    }
    Ok(())
}

/// A match is correct at `θ` iff `‖H(p1) − p2‖ ≤ θ`. Matches whose `p1` maps
/// to infinity are never correct. An empty set yields zero counts and zero
/// fractions.
pub fn evaluate_homography_matches(
    matches: &[Match],
    h: &Homography,
    thresholds: &[f64],
) -> Result<HomographyEvaluation> {
    validate_thresholds(thresholds)?;
    let errors: Vec<f64> = matches
        .iter()
        .map(|m| match h.apply(m.p1) {
            Ok(q) => (q[0] - m.p2[0]).hypot(q[1] - m.p2[1]),
            Err(_) => f64::INFINITY,
        })
        .collect();
    let counts: Vec<usize> = thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count())
        .collect();
    let total = matches.len();
    let fractions = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();
    Ok(HomographyEvaluation {
        thresholds: thresholds.to_vec(),
        counts,
        fractions,
        total,
    })
}
