use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Integer pixel location `(x, y)`.
pub type Pixel = (usize, usize);

/// Dense ground truth: for each pixel of image 1, its (sub-pixel) location
/// in image 2, or `None` where it has no valid correspondence.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceField {
    pub width: usize,
    pub height: usize,
    /// Size of image 2.
    pub target_width: usize,
    pub target_height: usize,
    targets: Vec<Option<[f64; 2]>>,
}

impl CorrespondenceField {
    pub fn new(
        width: usize,
        height: usize,
        target_width: usize,
        target_height: usize,
        targets: Vec<Option<[f64; 2]>>,
    ) -> Result<Self> {
        if targets.len() != width * height {
            return Err(Error::shape(
                "correspondence_field",
                format!("{} entries", width * height),
                format!("{}", targets.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            target_width,
            target_height,
            targets,
        })
    }

    /// Identity correspondence between two images of the same size.
    pub fn identity(width: usize, height: usize) -> Self {
        let targets = (0..width * height)
            .map(|i| Some([(i % width) as f64, (i / width) as f64]))
            .collect();
        Self {
            width,
            height,
            target_width: width,
            target_height: height,
            targets,
        }
    }

    pub fn target(&self, x: usize, y: usize) -> Option<[f64; 2]> {
        self.targets[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    /// The nearest target pixel of `(x, y)` when it lies inside image 2.
    pub fn rounded_target(&self, x: usize, y: usize) -> Option<Pixel> {
        let [tx, ty] = self.target(x, y)?;
        let (rx, ry) = (tx.round(), ty.round());
        (rx >= 0.0 && ry >= 0.0 && rx < self.target_width as f64 && ry < self.target_height as f64)
            .then_some((rx as usize, ry as usize))
    }

    /// Every source pixel with a rounded in-bounds target, row-major.
    pub fn rounded_pairs(&self) -> Vec<(Pixel, Pixel)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter_map(|p| self.rounded_target(p.0, p.1).map(|q| (p, q)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledCorrespondences {
    /// `(x in image 1, y in image 2)` per positive.
    pub positives: Vec<(Pixel, Pixel)>,
    /// `negatives_per_positive` locations in image 2 per positive, flattened.
    pub negatives: Vec<Pixel>,
    pub negatives_per_positive: usize,
}

impl SampledCorrespondences {
    pub fn negatives_of(&self, p: usize) -> &[Pixel] {
        let n = self.negatives_per_positive;
        &self.negatives[p * n..(p + 1) * n]
    }
}

pub fn chebyshev(a: Pixel, b: Pixel) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Draws `l` distinct positives uniformly among valid pixels (targets
/// rounded to the nearest pixel) and, for each, `n` uniform negatives in
/// image 2 farther than `exclusion_radius` (Chebyshev) from its true match.
pub fn sample_correspondences(
    field: &CorrespondenceField,
    l: usize,
    n: usize,
    exclusion_radius: usize,
    seed: u64,
) -> Result<SampledCorrespondences> {
    let valid = field.rounded_pairs();
    if valid.len() < l || l == 0 {
        return Err(Error::InsufficientCorrespondences {
            required: l.max(1),
            available: valid.len(),
        });
    }
    let (tw, th) = (field.target_width, field.target_height);
    let r = exclusion_radius;
    let side = |c: usize, len: usize| c.min(r) + (len - 1 - c).min(r) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, valid.len(), l).into_vec();
    let positives: Vec<(Pixel, Pixel)> = picks.into_iter().map(|i| valid[i]).collect();
    let mut negatives = Vec::with_capacity(l * n);
    for &(_, y) in &positives {
        let blocked = side(y.0, tw) * side(y.1, th);
        if blocked >= tw * th {
            return Err(Error::InvalidArgument(format!(
                "exclusion radius {r} leaves no negatives in a {tw}x{th} image"
            )));
        }
        for _ in 0..n {
            loop {
                let cand = (rng.random_range(0..tw), rng.random_range(0..th));
                if chebyshev(cand, y) > r {
                    negatives.push(cand);
                    break;
                }
            }
        }
    }
    Ok(SampledCorrespondences {
        positives,
        negatives,
        negatives_per_positive: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_field_gives_equal_locations() {
        let field = CorrespondenceField::identity(16, 16);
        let s = sample_correspondences(&field, 4, 8, 3, 1).unwrap();
        assert_eq!(s.positives.len(), 4);
        for &(x, y) in &s.positives {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn negatives_respect_exclusion_radius() {
        let field = CorrespondenceField::identity(20, 12);
        let s = sample_correspondences(&field, 30, 40, 3, 9).unwrap();
        for (p, &(_, y)) in s.positives.iter().enumerate() {
            for &neg in s.negatives_of(p) {
                assert!(chebyshev(neg, y) > 3);
                assert!(neg.0 < 20 && neg.1 < 12);
            }
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let field = CorrespondenceField::identity(16, 16);
        let a = sample_correspondences(&field, 10, 5, 3, 42).unwrap();
        let b = sample_correspondences(&field, 10, 5, 3, 42).unwrap();
        let c = sample_correspondences(&field, 10, 5, 3, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_valid_correspondences() {
        let mut targets = vec![None; 16];
        targets[3] = Some([1.0, 1.0]);
        let field = CorrespondenceField::new(4, 4, 4, 4, targets).unwrap();
        assert!(matches!(
            sample_correspondences(&field, 2, 1, 0, 0),
            Err(Error::InsufficientCorrespondences {
                required: 2,
                available: 1
            })
        ));
    }

    #[test]
    fn targets_are_rounded_to_nearest_pixel() {
        let targets = vec![Some([2.6, 0.4]); 4];
        let field = CorrespondenceField::new(2, 2, 4, 4, targets).unwrap();
        assert_eq!(field.rounded_target(0, 0), Some((3, 0)));
    }
}
