use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "intrinsics need positive focal lengths, got fx = {fx}, fy = {fy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn to_normalized(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.cx) / self.fx, (p[1] - self.cy) / self.fy]
    }

    pub fn to_pixel(&self, q: [f64; 2]) -> [f64; 2] {
        [q[0] * self.fx + self.cx, q[1] * self.fy + self.cy]
    }
}

/// `x' = (x − cx)/fx`, `y' = (y − cy)/fy` for every point.
pub fn pixels_to_normalized(points: &[[f64; 2]], k: &CameraIntrinsics) -> Vec<[f64; 2]> {
    points.iter().map(|&p| k.to_normalized(p)).collect()
}

pub fn normalized_to_pixels(points: &[[f64; 2]], k: &CameraIntrinsics) -> Vec<[f64; 2]> {
    points.iter().map(|&q| k.to_pixel(q)).collect()
}

/// Relative pose taking camera-1 coordinates to camera-2 coordinates:
/// `X₂ = R X₁ + t`, with `t` a unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePose {
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

const POSE_TOL: f64 = 1e-9;

impl RelativePose {
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(ortho <= POSE_TOL) || !((r.determinant() - 1.0).abs() <= POSE_TOL) {
            return Err(Error::InvalidArgument("rotation is not orthonormal with det 1".into()));
        }
        if !((t.norm() - 1.0).abs() <= POSE_TOL) {
            return Err(Error::InvalidArgument(format!(
                "translation must be unit norm, got {}",
                t.norm()
            )));
        }
        Ok(Self { r, t })
    }

    /// Builds a pose from any rotation and any nonzero translation, which is
    /// rescaled to unit length.
    pub fn from_parts(r: Rotation3<f64>, t: Vector3<f64>) -> Result<Self> {
        let n = t.norm();
        if !(n > 0.0) {
            return Err(Error::InvalidArgument("translation must be nonzero".into()));
        }
        Self::new(*r.matrix(), t / n)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    /// `E = [t]ₓ R`.
    pub fn essential(&self) -> Matrix3<f64> {
        skew(&self.t) * self.r
    }
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Rotation of `degrees` about `axis`.
pub fn axis_angle(axis: Vector3<f64>, degrees: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), degrees.to_radians())
}

fn acos_deg(c: f64) -> f64 {
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// `(rotation error, translation angular error)` in degrees. The
/// translation error ignores sign.
pub fn pose_errors(est: &RelativePose, gt: &RelativePose) -> (f64, f64) {
    let rel = est.r.transpose() * gt.r;
    let rot = acos_deg((rel.trace() - 1.0) / 2.0);
    let cos_t = est.t.dot(&gt.t).abs() / (est.t.norm() * gt.t.norm());
    (rot, acos_deg(cos_t))
}

/// Fractions of pairs whose errors are strictly below the threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseAccuracy {
    pub rotation: f64,
    pub translation: f64,
    pub joint: f64,
    pub pairs: usize,
}

impl std::fmt::Display for PoseAccuracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:.1} / {:.1} (joint {:.1}, n = {})",
            100.0 * self.rotation,
            100.0 * self.translation,
            100.0 * self.joint,
            self.pairs
        )
    }
}

pub fn pose_accuracy(errors: &[(f64, f64)], threshold_degrees: f64) -> Result<PoseAccuracy> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no pose pairs to evaluate".into()));
    }
    if !(threshold_degrees >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be >= 0, got {threshold_degrees}"
        )));
    }
    let n = errors.len() as f64;
    let frac = |f: &dyn Fn(&(f64, f64)) -> bool| errors.iter().filter(|e| f(e)).count() as f64 / n;
    Ok(PoseAccuracy {
        rotation: frac(&|e| e.0 < threshold_degrees),
        translation: frac(&|e| e.1 < threshold_degrees),
        joint: frac(&|e| e.0 < threshold_degrees && e.1 < threshold_degrees),
        pairs: errors.len(),
    })
}
