use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::homography_pair::pair_seed;
use crate::error::{Error, Result};
use crate::geometry::{axis_angle, CameraIntrinsics, RelativePose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoViewSceneSpec {
    pub base_seed: u64,
    pub point_count: usize,
    pub depth: [f64; 2],
    pub image_width: usize,
    pub image_height: usize,
    pub focal: f64,
    /// Maximum rotation angle about a random axis.
    pub rotation_deg: f64,
    /// Baseline length in scene units; the direction is uniform on the sphere.
    pub baseline: f64,
    pub noise_sigma_px: f64,
    pub outlier_fraction: f64,
}

impl Default for TwoViewSceneSpec {
    fn default() -> Self {
        Self {
            base_seed: 0,
            point_count: 100,
            depth: [4.0, 12.0],
            image_width: 640,
            image_height: 480,
            focal: 500.0,
            rotation_deg: 15.0,
            baseline: 1.0,
            noise_sigma_px: 0.0,
            outlier_fraction: 0.0,
        }
    }
}

impl TwoViewSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.point_count >= 1
            && self.depth[0] > 0.0
            && self.depth[0] <= self.depth[1]
            && self.image_width >= 2
            && self.image_height >= 2
            && self.focal > 0.0
            && self.rotation_deg >= 0.0
            && self.baseline > 0.0
            && self.noise_sigma_px >= 0.0
            && (0.0..=1.0).contains(&self.outlier_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid two-view spec: {self:?}")))
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: (self.image_width as f64 - 1.0) / 2.0,
            cy: (self.image_height as f64 - 1.0) / 2.0,
        }
    }
}

/// Pixel correspondences between two calibrated views of random points.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoViewScene {
    pub points1: Vec<[f64; 2]>,
    pub points2: Vec<[f64; 2]>,
    pub intrinsics: CameraIntrinsics,
    pub pose: RelativePose,
    /// Which correspondences were replaced by random outliers.
    pub outliers: Vec<bool>,
}

const MAX_ATTEMPTS: usize = 1000;

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random pose, points visible with positive depth in both views, then
/// pixel noise and an exact count of `round(outlier_fraction · n)` outliers.
pub fn generate_two_view_scene(spec: &TwoViewSceneSpec, seed: u64) -> Result<TwoViewScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(spec.base_seed, seed));
    let k = spec.intrinsics();
    let rot = axis_angle(unit_vector(&mut rng), rng.random_range(0.0..=spec.rotation_deg));
    let t = unit_vector(&mut rng) * spec.baseline;
    let pose = RelativePose::from_parts(rot, t)?;
    let (w, h) = ((spec.image_width - 1) as f64, (spec.image_height - 1) as f64);
    let visible = |p: [f64; 2]| p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= w && p[1] <= h;
    let project = |x: &Vector3<f64>| k.to_pixel([x.x / x.z, x.y / x.z]);

    let n = spec.point_count;
    let mut points1 = Vec::with_capacity(n);
    let mut points2 = Vec::with_capacity(n);
    for _ in 0..n {
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            let px = [rng.random_range(0.0..=w), rng.random_range(0.0..=h)];
            let z = rng.random_range(spec.depth[0]..=spec.depth[1]);
            let q = k.to_normalized(px);
            let x1 = Vector3::new(q[0] * z, q[1] * z, z);
            let x2 = rot * x1 + t;
            if x2.z > 0.0 {
                let p2 = project(&x2);
                if visible(p2) {
                    found = Some((px, p2));
                    break;
                }
            }
        }
        let (p1, p2) = found.ok_or_else(|| {
            Error::Degenerate(format!("no point visible in both views after {MAX_ATTEMPTS} attempts"))
        })?;
        points1.push(p1);
        points2.push(p2);
    }
    if spec.noise_sigma_px > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma_px).map_err(|e| Error::Config(e.to_string()))?;
        for p in points1.iter_mut().chain(points2.iter_mut()) {
            p[0] += noise.sample(&mut rng);
            p[1] += noise.sample(&mut rng);
        }
    }
    let n_out = (spec.outlier_fraction * n as f64).round() as usize;
    let mut outliers = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, n_out) {
        outliers[i] = true;
        points2[i] = [rng.random_range(0.0..=w), rng.random_range(0.0..=h)];
    }
    Ok(TwoViewScene {
        points1,
        points2,
        intrinsics: k,
        pose,
        outliers,
    })
}
