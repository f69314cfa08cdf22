//! Randomized finite-difference cases for every training loss.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::losses::{distinctiveness_loss, hardest_negative_term, hinge_loss, infonce_loss};
use super::sampling::SampledCorrespondences;
use crate::diffcore::checks::{rand_tensor, CaseFn, CheckCase};
use crate::diffcore::{Graph, NodeId};
use crate::error::Result;

const W1: usize = 3;
const H1: usize = 2;
const W2: usize = 4;
const H2: usize = 2;
const DIM: usize = 4;
const L: usize = 3;
const N: usize = 5;

fn random_samples(rng: &mut ChaCha8Rng) -> SampledCorrespondences {
    let px = |rng: &mut ChaCha8Rng, w: usize, h: usize| (rng.random_range(0..w), rng.random_range(0..h));
    let positives = (0..L).map(|_| (px(rng, W1, H1), px(rng, W2, H2))).collect();
    let negatives = (0..L * N).map(|_| px(rng, W2, H2)).collect();
    SampledCorrespondences {
        positives,
        negatives,
        negatives_per_positive: N,
    }
}

/// Unit descriptors from raw inputs, as the network produces them.
fn descriptors(g: &mut Graph, ids: &[NodeId]) -> (NodeId, NodeId) {
    (g.l2_normalize(ids[0]), g.l2_normalize(ids[1]))
}

fn descriptor_case(
    name: &'static str,
    loss: fn(&mut Graph, NodeId, NodeId, &SampledCorrespondences) -> Result<NodeId>,
) -> CheckCase {
    CheckCase::new(name, move |rng| {
        let samples = random_samples(rng);
        let inputs = vec![rand_tensor(rng, &[W1 * H1, DIM]), rand_tensor(rng, &[W2 * H2, DIM])];
        let f: CaseFn = Box::new(move |g, ids| {
            let (d1, d2) = descriptors(g, ids);
            loss(g, d1, d2, &samples)
        });
        (inputs, f)
    })
}

/// `L_p`, `L_n`, the hardest-negative term, `L_r` and `L_nce`.
pub fn loss_cases() -> Vec<CheckCase> {
    vec![
        descriptor_case("L_p", |g, d1, d2, s| {
            Ok(hinge_loss(g, d1, d2, s, (W1, W2), 1.0)?.positive)
        }),
        descriptor_case("L_n", |g, d1, d2, s| {
            Ok(hinge_loss(g, d1, d2, s, (W1, W2), 1.0)?.negative)
        }),
        descriptor_case("L_hard", |g, d1, d2, s| {
            let h = hinge_loss(g, d1, d2, s, (W1, W2), 1.0)?;
            hardest_negative_term(g, &h, 3)
        }),
        descriptor_case("L_nce", |g, d1, d2, s| infonce_loss(g, d1, d2, s, (W1, W2), 20.0)),
        CheckCase::new("L_r", |rng| {
            let confusions: Vec<usize> = (0..L).map(|_| rng.random_range(0..=N)).collect();
            let inputs = vec![rand_tensor(rng, &[L])];
            let f: CaseFn = Box::new(move |g, ids| {
                let r = g.sigmoid(ids[0]);
                distinctiveness_loss(g, r, &confusions, 0.25)
            });
            (inputs, f)
        }),
    ]
}
