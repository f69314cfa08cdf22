use std::cmp::Ordering;

use super::grid::GridDescriptors;
use crate::error::{Error, Result};

/// One correspondence between subpixel locations of two images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub p1: [f64; 2],
    pub p2: [f64; 2],
    pub score: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `c = r1·r2·(d1ᵀ d2)`.
pub fn similarity(d1: &[f64], r1: f64, d2: &[f64], r2: f64) -> f64 {
    r1 * r2 * dot(d1, d2)
}

fn cell_score(g1: &GridDescriptors, i: usize, g2: &GridDescriptors, j: usize) -> f64 {
    similarity(g1.descriptor(i), g1.score(i), g2.descriptor(j), g2.score(j))
}

fn check_grids(g1: &GridDescriptors, g2: &GridDescriptors) -> Result<()> {
    if g1.grid() != g2.grid() || g1.dim() != g2.dim() {
        return Err(Error::shape(
            "mutual_nn_matches",
            format!("G = {}, D = {}", g1.grid(), g1.dim()),
            format!("G = {}, D = {}", g2.grid(), g2.dim()),
        ));
    }
    Ok(())
}

/// Best `(index, score)` per row and per column of the score volume, lowest
/// index winning ties.
struct Argmaxes {
    row: Vec<(usize, f64)>,
    col: Vec<(usize, f64)>,
}

fn collect_matches(g1: &GridDescriptors, g2: &GridDescriptors, am: &Argmaxes) -> Vec<Match> {
    am.row
        .iter()
        .enumerate()
        .filter(|&(i, &(j, _))| am.col[j].0 == i)
        .map(|(i, &(j, c))| Match {
            p1: g1.pixel(i),
            p2: g2.pixel(j),
            score: c,
        })
        .collect()
}

/// Reference double loop over all `G²·G²` scores.
pub fn mutual_nn_matches_exhaustive(g1: &GridDescriptors, g2: &GridDescriptors) -> Result<Vec<Match>> {
    check_grids(g1, g2)?;
    let (n1, n2) = (g1.cells(), g2.cells());
    let mut am = Argmaxes {
        row: vec![(0, f64::NEG_INFINITY); n1],
        col: vec![(0, f64::NEG_INFINITY); n2],
    };
    for i in 0..n1 {
        for j in 0..n2 {
            let c = cell_score(g1, i, g2, j);
            if c > am.row[i].1 {
                am.row[i] = (j, c);
            }
            if c > am.col[j].1 {
                am.col[j] = (i, c);
            }
        }
    }
    Ok(collect_matches(g1, g2, &am))
}

const BLOCK: usize = 64;

/// Mutual nearest neighbours under [`similarity`], evaluated in cache-sized
/// tiles of the score volume. Equal to [`mutual_nn_matches_exhaustive`].
pub fn mutual_nn_matches(g1: &GridDescriptors, g2: &GridDescriptors) -> Result<Vec<Match>> {
    check_grids(g1, g2)?;
    let (n1, n2) = (g1.cells(), g2.cells());
    let mut am = Argmaxes {
        row: vec![(0, f64::NEG_INFINITY); n1],
        col: vec![(0, f64::NEG_INFINITY); n2],
    };
    let mut tile = vec![0.0; BLOCK * BLOCK];
    for i0 in (0..n1).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(n1);
        for j0 in (0..n2).step_by(BLOCK) {
            let j1 = (j0 + BLOCK).min(n2);
            let bw = j1 - j0;
            for i in i0..i1 {
                for j in j0..j1 {
                    tile[(i - i0) * bw + (j - j0)] = cell_score(g1, i, g2, j);
                }
            }
            for i in i0..i1 {
                let row = &tile[(i - i0) * bw..(i - i0 + 1) * bw];
                for (dj, &c) in row.iter().enumerate() {
                    if c > am.row[i].1 {
                        am.row[i] = (j0 + dj, c);
                    }
                }
            }
            for j in j0..j1 {
                for i in i0..i1 {
                    let c = tile[(i - i0) * bw + (j - j0)];
                    if c > am.col[j].1 {
                        am.col[j] = (i, c);
                    }
                }
            }
        }
    }
    Ok(collect_matches(g1, g2, &am))
}

/// Row-major order of a pixel location.
fn row_major(a: &[f64; 2], b: &[f64; 2]) -> Ordering {
    a[1].total_cmp(&b[1]).then(a[0].total_cmp(&b[0]))
}

/// At most `k` matches, by descending score, ties in row-major order of `p1`.
pub fn top_k(mut matches: Vec<Match>, k: usize) -> Result<Vec<Match>> {
    if k == 0 {
        return Err(Error::InvalidArgument("top-K needs K >= 1".into()));
    }
    matches.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| row_major(&a.p1, &b.p1)));
    matches.truncate(k);
    Ok(matches)
}
