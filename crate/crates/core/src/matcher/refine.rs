use super::grid::sample_descriptor;
use super::mnn::{dot, Match};
use crate::net::DescriptorMap;

/// Offsets of the 3×3 neighbourhood, row-major.
pub const NEIGHBOURHOOD: [[f64; 2]; 9] = [
    [-1.0, -1.0],
    [0.0, -1.0],
    [1.0, -1.0],
    [-1.0, 0.0],
    [0.0, 0.0],
    [1.0, 0.0],
    [-1.0, 1.0],
    [0.0, 1.0],
    [1.0, 1.0],
];

/// `center + Σ wᵢ (locᵢ − center) / Σ wᵢ` with `wᵢ = sᵢ − min s`, or `None`
/// when every weight is zero.
pub fn weighted_centroid(center: [f64; 2], locations: &[[f64; 2]], scores: &[f64]) -> Option<[f64; 2]> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for (loc, &s) in locations.iter().zip(scores) {
        let w = s - min;
        sx += w * (loc[0] - center[0]);
        sy += w * (loc[1] - center[1]);
        sw += w;
    }
    (sw > 0.0).then(|| [center[0] + sx / sw, center[1] + sy / sw])
}

/// Moves each `p2` to the weighted centroid of its 3×3 full-resolution
/// neighbourhood (1 px spacing, clamped to the image), scored by raw
/// descriptor dot products with the descriptor at `p1`. `p1` and the score
/// are kept. Flat neighbourhoods leave `p2` unchanged.
pub fn refine_matches(d1: &DescriptorMap, d2: &DescriptorMap, matches: &[Match]) -> Vec<Match> {
    let dim = d1.dim();
    let (w, h) = ((d2.width() - 1) as f64, (d2.height() - 1) as f64);
    let mut q = vec![0.0; dim];
    let mut t = vec![0.0; dim];
    matches
        .iter()
        .map(|m| {
            sample_descriptor(d1, m.p1[0], m.p1[1], &mut q);
            let mut locs = [[0.0; 2]; 9];
            let mut scores = [0.0; 9];
            for (k, off) in NEIGHBOURHOOD.iter().enumerate() {
                let loc = [(m.p2[0] + off[0]).clamp(0.0, w), (m.p2[1] + off[1]).clamp(0.0, h)];
                sample_descriptor(d2, loc[0], loc[1], &mut t);
                locs[k] = loc;
                scores[k] = dot(&q, &t);
            }
            let p2 = weighted_centroid(m.p2, &locs, &scores).unwrap_or(m.p2);
            Match { p2, ..*m }
        })
        .collect()
}
