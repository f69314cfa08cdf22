//! Test-time match extraction.
//!
//! Descriptor and distinctiveness maps are resampled on a `G × G` grid,
//! scored with `c = r₁ r₂ d₁ᵀd₂`, reduced to mutual nearest neighbours and
//! ranked. Matches can be refined to subpixel accuracy on the full-resolution
//! maps.

mod analysis;
mod grid;
mod io;
mod mnn;
mod refine;

pub use analysis::{dense_resample, descriptor_invariance, pool_invariance, InvarianceStats, MIN_INVARIANCE_PAIRS};
pub use grid::{grid_anchor, grid_sample, sample_descriptor, sample_score, GridDescriptors};
pub use io::{format_matches, load_descriptor_dump, load_matches, parse_matches, save_descriptor_dump, MatchFile};
pub use mnn::{dot, mutual_nn_matches, mutual_nn_matches_exhaustive, similarity, top_k, Match};
pub use refine::{refine_matches, weighted_centroid, NEIGHBOURHOOD};

use crate::error::Result;
use crate::net::PairDescription;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchConfig {
    pub grid: usize,
    pub top_k: usize,
    pub refine: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            grid: 128,
            top_k: 2000,
            refine: false,
        }
    }
}

/// Grid sampling, mutual nearest neighbours, top-K and optional refinement.
pub fn extract_matches(desc: &PairDescription, cfg: &MatchConfig) -> Result<Vec<Match>> {
    let g1 = grid_sample(&desc.d1, &desc.r1, cfg.grid)?;
    let g2 = grid_sample(&desc.d2, &desc.r2, cfg.grid)?;
    let matches = top_k(mutual_nn_matches(&g1, &g2)?, cfg.top_k)?;
    Ok(if cfg.refine {
        refine_matches(&desc.d1, &desc.d2, &matches)
    } else {
        matches
    })
}
