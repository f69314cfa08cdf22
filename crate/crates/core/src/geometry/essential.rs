use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pose::RelativePose;
use crate::error::{Error, Result};

/// Minimum sample size of the linear solver.
pub const MIN_CORRESPONDENCES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Symmetric epipolar distance in normalized camera coordinates.
    pub inlier_threshold: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            inlier_threshold: 1e-3,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("ransac iterations must be >= 1".into()));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::Config("ransac inlier_threshold must be > 0".into()));
        }
        Ok(())
    }
}

/// A correspondence in normalized camera coordinates: `(x in view 1, x' in view 2)`.
pub type NormalizedPair = ([f64; 2], [f64; 2]);

fn h(p: [f64; 2]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], 1.0)
}

/// Nearest matrix with singular values `(1, 1, 0)`.
pub fn project_essential(e: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * vt
}

/// Similarity transform moving the centroid to the origin with mean
/// distance √2.
fn conditioning(points: impl Iterator<Item = [f64; 2]> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let (mx, my) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (mx, my) = (mx / n, my / n);
    let mean_dist = points.map(|p| (p[0] - mx).hypot(p[1] - my)).sum::<f64>() / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Linear (eight-point) estimate on at least eight pairs, with point
/// conditioning and projection onto the essential manifold.
pub fn eight_point(pairs: &[NormalizedPair]) -> Result<Matrix3<f64>> {
    if pairs.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences {
            required: MIN_CORRESPONDENCES,
            available: pairs.len(),
        });
    }
    let t1 = conditioning(pairs.iter().map(|p| p.0));
    let t2 = conditioning(pairs.iter().map(|p| p.1));
    let rows = pairs.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, &(x1, x2)) in pairs.iter().enumerate() {
        let p = t1 * h(x1);
        let q = t2 * h(x2);
        for r in 0..3 {
            for c in 0..3 {
                a[(i, 3 * r + c)] = q[r] * p[c];
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Degenerate("svd failed".into()))?;
    let f = vt.row(vt.nrows() - 1);
    let e = Matrix3::from_fn(|r, c| f[3 * r + c]);
    let e = t2.transpose() * e * t1;
    if !e.iter().all(|v| v.is_finite()) {
        return Err(Error::Degenerate("non-finite essential estimate".into()));
    }
    Ok(project_essential(&e))
}

/// Root of the summed squared distances of `x'` to the epipolar line `E x`
/// and of `x` to `Eᵀ x'`.
pub fn symmetric_epipolar_distance(e: &Matrix3<f64>, pair: &NormalizedPair) -> f64 {
    let (x1, x2) = (h(pair.0), h(pair.1));
    let l2 = e * x1;
    let l1 = e.transpose() * x2;
    let r = x2.dot(&l2);
    let d2 = l2.x * l2.x + l2.y * l2.y;
    let d1 = l1.x * l1.x + l1.y * l1.y;
    if d1 == 0.0 || d2 == 0.0 {
        return if r == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (r * r * (1.0 / d1 + 1.0 / d2)).sqrt()
}

/// Essential matrix and inlier mask.
#[derive(Clone, Debug, PartialEq)]
pub struct EssentialEstimate {
    pub e: Matrix3<f64>,
    pub inliers: Vec<bool>,
}

impl EssentialEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }

    pub fn inlier_pairs(&self, pairs: &[NormalizedPair]) -> Vec<NormalizedPair> {
        pairs
            .iter()
            .zip(&self.inliers)
            .filter(|(_, &m)| m)
            .map(|(p, _)| *p)
            .collect()
    }
}

fn inliers_of(e: &Matrix3<f64>, pairs: &[NormalizedPair], threshold: f64) -> (Vec<bool>, usize, f64) {
    let mut mask = Vec::with_capacity(pairs.len());
    let (mut count, mut err) = (0, 0.0);
    for p in pairs {
        let d = symmetric_epipolar_distance(e, p);
        let ok = d <= threshold;
        mask.push(ok);
        if ok {
            count += 1;
            err += d;
        }
    }
    (mask, count, err)
}

/// RANSAC over eight-point hypotheses with a fixed, seed-determined sample
/// schedule, followed by least-squares refits on the inlier set.
pub fn estimate_essential_ransac(pairs: &[NormalizedPair], cfg: &RansacConfig) -> Result<EssentialEstimate> {
    cfg.validate()?;
    if pairs.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences {
            required: MIN_CORRESPONDENCES,
            available: pairs.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut best: Option<(Matrix3<f64>, usize, f64)> = None;
    let mut sample = Vec::with_capacity(MIN_CORRESPONDENCES);
    for _ in 0..cfg.iterations {
        sample.clear();
        sample.extend(
            index::sample(&mut rng, pairs.len(), MIN_CORRESPONDENCES)
                .into_iter()
                .map(|i| pairs[i]),
        );
        let Ok(e) = eight_point(&sample) else { continue };
        let (_, count, err) = inliers_of(&e, pairs, cfg.inlier_threshold);
        let better = match best {
            None => true,
            Some((_, bc, be)) => count > bc || (count == bc && err < be),
        };
        if better {
            best = Some((e, count, err));
        }
    }
    let (mut e, mut count, _) = best.ok_or_else(|| Error::Degenerate("no hypothesis could be fitted".into()))?;
    if count < MIN_CORRESPONDENCES {
        return Err(Error::Degenerate(format!("best model has only {count} inliers")));
    }
    let (mut mask, _, _) = inliers_of(&e, pairs, cfg.inlier_threshold);
    for _ in 0..3 {
        let inl: Vec<NormalizedPair> = pairs.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
        let Ok(refit) = eight_point(&inl) else { break };
        let (m2, c2, _) = inliers_of(&refit, pairs, cfg.inlier_threshold);
        if c2 < count {
            break;
        }
        let stable = m2 == mask;
        e = refit;
        mask = m2;
        count = c2;
        if stable {
            break;
        }
    }
    Ok(EssentialEstimate { e, inliers: mask })
}

/// Depths `(λ₁, λ₂)` with `λ₂ x₂ ≈ R λ₁ x₁ + t` in the least-squares sense.
pub fn triangulate_depths(r: &Matrix3<f64>, t: &Vector3<f64>, pair: &NormalizedPair) -> Option<(f64, f64)> {
    let a = r * h(pair.0);
    let b = -h(pair.1);
    let ata = nalgebra::Matrix2::new(a.dot(&a), a.dot(&b), b.dot(&a), b.dot(&b));
    let rhs = Vector2::new(-a.dot(t), -b.dot(t));
    let sol = ata.try_inverse()? * rhs;
    Some((sol.x, sol.y))
}

/// Picks the `(R, t)` candidate of `E` putting the most correspondences in
/// front of both cameras.
pub fn decompose_essential(e: &Matrix3<f64>, pairs: &[NormalizedPair]) -> Result<RelativePose> {
    let svd = e.svd(true, true);
    let (mut u, mut vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    if u.determinant() < 0.0 {
        u = -u;
    }
    if vt.determinant() < 0.0 {
        vt = -vt;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * vt;
    let r2 = u * w.transpose() * vt;
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    let candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)];
    let scores: Vec<usize> = candidates
        .iter()
        .map(|(r, t)| {
            pairs
                .iter()
                .filter(|p| matches!(triangulate_depths(r, t, p), Some((l1, l2)) if l1 > 0.0 && l2 > 0.0))
                .count()
        })
        .collect();
    let best = (0..4)
        .max_by(|&a, &b| scores[a].cmp(&scores[b]).then(b.cmp(&a)))
        .unwrap();
    let runner_up = (0..4).filter(|&k| k != best).map(|k| scores[k]).max().unwrap();
    if scores[best] <= runner_up {
        return Err(Error::CheiralityAmbiguity(format!("candidate scores {scores:?}")));
    }
    let (r, t) = candidates[best];
    let svd = r.svd(true, true);
    let r = svd.u.unwrap() * svd.v_t.unwrap();
    RelativePose::new(r, t.normalize())
}
