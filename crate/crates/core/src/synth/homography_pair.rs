use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::texture::generate_texture_rect;
use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::image::Image;
use crate::training::CorrespondenceField;

/// Sampling ranges for a random homography pair. Symmetric ranges are given
/// by their maximum magnitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomographyPairSpec {
    pub base_seed: u64,
    pub image_size: usize,
    pub rotation_deg: f64,
    pub scale: [f64; 2],
    pub anisotropy: f64,
    /// Projective row magnitude, in units of `1 / image_size`.
    pub perspective: f64,
    pub translation_px: f64,
    pub brightness: f64,
    pub contrast: [f64; 2],
    pub tint: f64,
    pub noise_sigma: f64,
}

impl Default for HomographyPairSpec {
    fn default() -> Self {
        Self::moderate()
    }
}

impl HomographyPairSpec {
    pub fn identity() -> Self {
        Self {
            base_seed: 0,
            image_size: 64,
            rotation_deg: 0.0,
            scale: [1.0, 1.0],
            anisotropy: 0.0,
            perspective: 0.0,
            translation_px: 0.0,
            brightness: 0.0,
            contrast: [1.0, 1.0],
            tint: 0.0,
            noise_sigma: 0.0,
        }
    }

    /// Moderate warp and photometric jitter.
    pub fn moderate() -> Self {
        Self {
            rotation_deg: 15.0,
            scale: [0.85, 1.15],
            anisotropy: 0.05,
            perspective: 0.1,
            translation_px: 4.0,
            brightness: 0.1,
            contrast: [0.8, 1.2],
            tint: 0.1,
            noise_sigma: 0.01,
            ..Self::identity()
        }
    }

    /// Moderate warp with strong illumination change.
    pub fn strong_photometric() -> Self {
        Self {
            brightness: 0.3,
            contrast: [0.5, 1.5],
            tint: 0.3,
            noise_sigma: 0.03,
            ..Self::moderate()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.image_size >= 16
            && self.scale[0] > 0.0
            && self.scale[0] <= self.scale[1]
            && self.contrast[0] >= 0.0
            && self.contrast[0] <= self.contrast[1]
            && self.anisotropy >= 0.0
            && self.anisotropy < 1.0
            && self.noise_sigma >= 0.0
            && [
                self.rotation_deg,
                self.perspective,
                self.translation_px,
                self.brightness,
                self.tint,
            ]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid homography pair spec: {self:?}")))
        }
    }
}

/// Per-channel affine colour change: `v ↦ contrast·gainᶜ·v + brightness`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Photometric {
    pub gain: [f64; 3],
    pub offset: f64,
}

impl Photometric {
    pub fn apply(&self, rgb: [f32; 3]) -> [f64; 3] {
        std::array::from_fn(|c| self.gain[c] * rgb[c] as f64 + self.offset)
    }
}

/// A generated pair: `image2` is `image1` warped by `h` with jitter.
#[derive(Clone, Debug)]
pub struct HomographyPair {
    pub image1: Image,
    pub image2: Image,
    pub h: Homography,
    /// Row-major over image 1: whether `H(p)` lies inside image 2.
    pub mask: Vec<bool>,
    pub photometric: Photometric,
}

impl HomographyPair {
    pub fn field(&self) -> CorrespondenceField {
        homography_field(
            &self.h,
            self.image1.width(),
            self.image1.height(),
            self.image2.width(),
            self.image2.height(),
        )
    }
}

/// Dense ground truth `p ↦ H(p)`, valid where the image lies inside the
/// target rectangle `[0, w−1] × [0, h−1]`.
pub fn homography_field(h: &Homography, w1: usize, h1: usize, w2: usize, h2: usize) -> CorrespondenceField {
    let targets = (0..w1 * h1)
        .map(|i| {
            let p = [(i % w1) as f64, (i / w1) as f64];
            h.apply(p)
                .ok()
                .filter(|q| q[0] >= 0.0 && q[1] >= 0.0 && q[0] <= (w2 - 1) as f64 && q[1] <= (h2 - 1) as f64)
        })
        .collect();
    CorrespondenceField::new(w1, h1, w2, h2, targets).expect("field size")
}

fn symmetric(rng: &mut ChaCha8Rng, m: f64) -> f64 {
    if m > 0.0 {
        rng.random_range(-m..=m)
    } else {
        0.0
    }
}

fn ranged(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

const MAX_ATTEMPTS: usize = 100;

fn sample_homography(spec: &HomographyPairSpec, rng: &mut ChaCha8Rng) -> Result<Homography> {
    let s = spec.image_size as f64;
    let c = (s - 1.0) / 2.0;
    let pad = s / 2.0;
    let inside = |p: [f64; 2]| p.iter().all(|&v| v >= -pad && v <= s - 1.0 + pad);
    let corners = [[0.0, 0.0], [s - 1.0, 0.0], [0.0, s - 1.0], [s - 1.0, s - 1.0]];
    for _ in 0..MAX_ATTEMPTS {
        let theta = symmetric(rng, spec.rotation_deg).to_radians();
        let scale = ranged(rng, spec.scale);
        let aniso = 1.0 + symmetric(rng, spec.anisotropy);
        let (px, py) = (
            symmetric(rng, spec.perspective) / s,
            symmetric(rng, spec.perspective) / s,
        );
        let (tx, ty) = (symmetric(rng, spec.translation_px), symmetric(rng, spec.translation_px));
        let (sn, cs) = theta.sin_cos();
        let (sx, sy) = (scale * aniso, scale / aniso);
        let linear = Matrix3::new(cs * sx, -sn * sy, 0.0, sn * sx, cs * sy, 0.0, 0.0, 0.0, 1.0);
        let proj = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, px, py, 1.0);
        let to_origin = Matrix3::new(1.0, 0.0, -c, 0.0, 1.0, -c, 0.0, 0.0, 1.0);
        let back = Matrix3::new(1.0, 0.0, c + tx, 0.0, 1.0, c + ty, 0.0, 0.0, 1.0);
        let Ok(h) = Homography::new(back * proj * linear * to_origin) else {
            continue;
        };
        let Ok(hinv) = h.inverse() else { continue };
        let fits = |m: &Homography| corners.iter().all(|&p| m.apply(p).map(inside).unwrap_or(false));
        if fits(&h) && fits(&hinv) {
            return Ok(h);
        }
    }
    Err(Error::Degenerate(format!(
        "no invertible homography within the padded canvas after {MAX_ATTEMPTS} draws"
    )))
}

/// Mixes the spec's base seed with a per-pair seed.
pub(crate) fn pair_seed(base: u64, seed: u64) -> u64 {
    crate::training::derive_seed(base, seed, 0)
}

/// Draws a texture on a 2× padded canvas, crops image 1 from its centre and
/// renders image 2 by inverse-warping the canvas through `H`, then applies
/// photometric jitter to image 2.
pub fn generate_homography_pair(spec: &HomographyPairSpec, seed: u64) -> Result<HomographyPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(spec.base_seed, seed));
    let s = spec.image_size;
    let pad = s / 2;
    let canvas = generate_texture_rect(rng.random(), 2 * s, 2 * s)?;
    let h = sample_homography(spec, &mut rng)?;
    let hinv = h.inverse()?;
    let contrast = ranged(&mut rng, spec.contrast);
    let gain: [f64; 3] = std::array::from_fn(|_| contrast * (1.0 + symmetric(&mut rng, spec.tint)));
    let photometric = Photometric {
        gain,
        offset: symmetric(&mut rng, spec.brightness),
    };
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let mut image1 = Image::filled(s, s, [0.0; 3]);
    for y in 0..s {
        for x in 0..s {
            image1.set_pixel(x, y, canvas.pixel(x + pad, y + pad));
        }
    }
    let lim = (2 * s - 1) as f64;
    let mut image2 = Image::filled(s, s, [0.0; 3]);
    for y in 0..s {
        for x in 0..s {
            let p = hinv.apply([x as f64, y as f64])?;
            let (cx, cy) = ((p[0] + pad as f64).clamp(0.0, lim), (p[1] + pad as f64).clamp(0.0, lim));
            let rgb = photometric.apply(canvas.sample(cx, cy).expect("clamped to canvas"));
            let px = std::array::from_fn(|c| {
                let n = if spec.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                (rgb[c] + n).clamp(0.0, 1.0) as f32
            });
            image2.set_pixel(x, y, px);
        }
    }
    let field = homography_field(&h, s, s, s, s);
    let mask = (0..s * s).map(|i| field.target(i % s, i / s).is_some()).collect();
    Ok(HomographyPair {
        image1,
        image2,
        h,
        mask,
        photometric,
    })
}
