use super::grid::{bilinear_taps, GridDescriptors};
use super::mnn::similarity;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::DescriptorMap;
use crate::training::Pixel;

/// Renders `source` in the frame of the viewpoint image: each cell of
/// `grid_v` takes the colour of its best-scoring cell of `grid_s` (no
/// mutuality), and the `G × G` result is bilinearly upsampled to the
/// viewpoint image size.
pub fn dense_resample(source: &Image, grid_v: &GridDescriptors, grid_s: &GridDescriptors) -> Result<Image> {
    if grid_v.dim() != grid_s.dim() {
        return Err(Error::shape(
            "dense_resample",
            format!("D = {}", grid_v.dim()),
            format!("D = {}", grid_s.dim()),
        ));
    }
    let gv = grid_v.grid();
    let colours: Vec<[f32; 3]> = (0..grid_v.cells())
        .map(|i| {
            let (d, r) = (grid_v.descriptor(i), grid_v.score(i));
            let mut best = (0, f64::NEG_INFINITY);
            for j in 0..grid_s.cells() {
                let c = similarity(d, r, grid_s.descriptor(j), grid_s.score(j));
                if c > best.1 {
                    best = (j, c);
                }
            }
            let p = grid_s.pixel(best.0);
            let (sw, sh) = ((source.width() - 1) as f64, (source.height() - 1) as f64);
            source
                .sample(p[0].clamp(0.0, sw), p[1].clamp(0.0, sh))
                .expect("clamped inside image")
        })
        .collect();
    let (w, h) = grid_v.image_size();
    let mut out = Image::filled(w, h, [0.0; 3]);
    let to_grid = |p: usize, size: usize| (p as f64 + 0.5) * gv as f64 / size as f64 - 0.5;
    for y in 0..h {
        for x in 0..w {
            let mut px = [0.0f32; 3];
            for (cell, wt) in bilinear_taps(to_grid(x, w), to_grid(y, h), gv, gv) {
                for k in 0..3 {
                    px[k] += wt as f32 * colours[cell][k];
                }
            }
            out.set_pixel(x, y, px);
        }
    }
    Ok(out)
}

/// Minimum number of correspondences for the invariance statistic.
pub const MIN_INVARIANCE_PAIRS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvarianceStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub pairs: usize,
}

/// Mean and standard deviation of `‖D_query[x] − D_target[y]‖₁` over
/// ground-truth pairs `(x, y)`.
pub fn descriptor_invariance(
    query: &DescriptorMap,
    target: &DescriptorMap,
    pairs: &[(Pixel, Pixel)],
) -> Result<InvarianceStats> {
    if pairs.len() < MIN_INVARIANCE_PAIRS {
        return Err(Error::InsufficientCorrespondences {
            required: MIN_INVARIANCE_PAIRS,
            available: pairs.len(),
        });
    }
    if query.dim() != target.dim() {
        return Err(Error::shape(
            "descriptor_invariance",
            format!("D = {}", query.dim()),
            format!("D = {}", target.dim()),
        ));
    }
    let diffs: Vec<f64> = pairs
        .iter()
        .map(|&(x, y)| {
            query
                .at(x.0, x.1)
                .iter()
                .zip(target.at(y.0, y.1))
                .map(|(a, b)| (a - b).abs())
                .sum()
        })
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok(InvarianceStats {
        mean,
        std: var.sqrt(),
        pairs: diffs.len(),
    })
}

/// Combines per-pair statistics into the statistic of all pairs together.
pub fn pool_invariance(stats: &[InvarianceStats]) -> Option<InvarianceStats> {
    let n: usize = stats.iter().map(|s| s.pairs).sum();
    if n == 0 {
        return None;
    }
    let mean = stats.iter().map(|s| s.mean * s.pairs as f64).sum::<f64>() / n as f64;
    let second = stats
        .iter()
        .map(|s| (s.std * s.std + s.mean * s.mean) * s.pairs as f64)
        .sum::<f64>()
        / n as f64;
    Some(InvarianceStats {
        mean,
        std: (second - mean * mean).max(0.0).sqrt(),
        pairs: n,
    })
}
