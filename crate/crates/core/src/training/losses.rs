//! Correspondence losses built on the differentiable graph.
//!
//! Every loss has a graph form used during training and a value form (a
//! throwaway graph over constants) for evaluation and tests.

use super::sampling::{Pixel, SampledCorrespondences};
use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// `‖d1 − d2‖₂`; in `[0, 2]` for unit vectors.
pub fn descriptor_distance(d1: &[f64], d2: &[f64]) -> f64 {
    d1.iter().zip(d2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Target distinctiveness for a descriptor confused `m` times: `(1 + m)^−τ`.
pub fn distinctiveness_target(m: usize, exponent: f64) -> f64 {
    (1.0 + m as f64).powf(-exponent)
}

/// Number of negatives per positive closer than `margin`.
pub fn confusion_counts(negative_distances: &[f64], n: usize, margin: f64) -> Vec<usize> {
    negative_distances
        .chunks(n)
        .map(|c| c.iter().filter(|&&d| d < margin).count())
        .collect()
}

/// Indices (within each positive's group of `n`) of the `h` smallest
/// distances, ties broken by lower index. Returned flat: `h` per group.
pub fn hardest_negatives(negative_distances: &[f64], n: usize, h: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(negative_distances.len() / n.max(1) * h);
    for group in negative_distances.chunks(n) {
        let mut idx: Vec<usize> = (0..group.len()).collect();
        idx.sort_by(|&a, &b| group[a].total_cmp(&group[b]).then(a.cmp(&b)));
        out.extend(idx.into_iter().take(h));
    }
    out
}

/// Scalar hinge terms plus the per-negative hinge vector.
#[derive(Clone, Copy, Debug)]
pub struct HingeNodes {
    pub positive: NodeId,
    pub negative: NodeId,
    /// `max(0, M + c_x − d(x, ŷ))` for every negative, `[L·N]`.
    pub per_negative: NodeId,
    pub positive_distances: NodeId,
    pub negative_distances: NodeId,
}

/// `L_p = mean(d_pos)`, `L_n = mean(max(0, M + c_x − d_neg))` where `c_x` is
/// the positive distance of each negative's anchor (differentiated through).
pub fn hinge_from_distances(g: &mut Graph, pos: NodeId, neg: NodeId, margin: f64) -> Result<HingeNodes> {
    let l = g.shape(pos)[0];
    let total = g.shape(neg)[0];
    if g.shape(pos).len() != 1 || g.shape(neg).len() != 1 || !total.is_multiple_of(l) {
        return Err(Error::shape(
            "hinge_loss",
            format!("[L] and [L*N] with L = {l}"),
            format!("{:?}", g.shape(neg)),
        ));
    }
    let n = total / l;
    let anchor: Vec<usize> = (0..l).flat_map(|i| std::iter::repeat_n(i, n)).collect();
    let c = g.gather_rows(pos, &anchor)?;
    let diff = g.sub(c, neg)?;
    let shifted = g.add_const(diff, margin);
    let per_negative = g.relu(shifted);
    let positive = g.mean(pos);
    let negative = g.mean(per_negative);
    Ok(HingeNodes {
        positive,
        negative,
        per_negative,
        positive_distances: pos,
        negative_distances: neg,
    })
}

type RowPairs = (Vec<(usize, usize)>, Vec<(usize, usize)>);

fn rows(samples: &SampledCorrespondences, w1: usize, w2: usize) -> RowPairs {
    let idx = |p: Pixel, w: usize| p.1 * w + p.0;
    let pos = samples
        .positives
        .iter()
        .map(|&(x, y)| (idx(x, w1), idx(y, w2)))
        .collect();
    let n = samples.negatives_per_positive;
    let neg = samples
        .negatives
        .iter()
        .enumerate()
        .map(|(k, &yh)| (idx(samples.positives[k / n].0, w1), idx(yh, w2)))
        .collect();
    (pos, neg)
}

/// Hinge loss over sampled correspondences between `[H1·W1, D]` and
/// `[H2·W2, D]` descriptor rows.
pub fn hinge_loss(
    g: &mut Graph,
    d1: NodeId,
    d2: NodeId,
    samples: &SampledCorrespondences,
    widths: (usize, usize),
    margin: f64,
) -> Result<HingeNodes> {
    let (pos_pairs, neg_pairs) = rows(samples, widths.0, widths.1);
    let pos = g.pair_distance(d1, d2, &pos_pairs)?;
    let neg = g.pair_distance(d1, d2, &neg_pairs)?;
    hinge_from_distances(g, pos, neg, margin)
}

/// Mean hinge over the `h` hardest negatives of each positive.
pub fn hardest_negative_term(g: &mut Graph, hinge: &HingeNodes, h: usize) -> Result<NodeId> {
    let l = g.shape(hinge.positive_distances)[0];
    let n = g.shape(hinge.negative_distances)[0] / l;
    let within = hardest_negatives(g.value(hinge.negative_distances).data(), n, h);
    let flat: Vec<usize> = within.iter().enumerate().map(|(k, &j)| (k / h) * n + j).collect();
    let picked = g.gather_rows(hinge.per_negative, &flat)?;
    Ok(g.mean(picked))
}

/// `L_r = mean |r_x − (1 + m_x)^−τ|` with `r_at_positives: [L]`.
pub fn distinctiveness_loss(
    g: &mut Graph,
    r_at_positives: NodeId,
    confusions: &[usize],
    exponent: f64,
) -> Result<NodeId> {
    let l = g.shape(r_at_positives)[0];
    if confusions.len() != l {
        return Err(Error::shape(
            "distinctiveness_loss",
            format!("{l} counts"),
            format!("{}", confusions.len()),
        ));
    }
    let targets: Vec<f64> = confusions
        .iter()
        .map(|&m| distinctiveness_target(m, exponent))
        .collect();
    let t = g.constant(Tensor::from_slice(&targets));
    let diff = g.sub(r_at_positives, t)?;
    let a = g.abs(diff);
    Ok(g.mean(a))
}

/// `mean_p logsumexp(τ·(s − s_pos))` over each group `s = [s_pos, s_neg…]`,
/// i.e. the mean over positives of `−log softmax` of the positive score.
pub fn infonce_from_scores(g: &mut Graph, pos: NodeId, neg: NodeId, temperature: f64) -> Result<NodeId> {
    let l = g.shape(pos)[0];
    let total = g.shape(neg)[0];
    if !total.is_multiple_of(l) {
        return Err(Error::shape(
            "infonce_loss",
            format!("[L*N] with L = {l}"),
            format!("[{total}]"),
        ));
    }
    let n = total / l;
    let p2 = g.reshape(pos, &[l, 1])?;
    let n2 = g.reshape(neg, &[l, n])?;
    let scores = g.concat(&[p2, n2], 1)?;
    let repeat: Vec<usize> = (0..l).flat_map(|i| std::iter::repeat_n(i, n + 1)).collect();
    let shift = g.gather_rows(pos, &repeat)?;
    let shift = g.reshape(shift, &[l, n + 1])?;
    let logits = g.sub(scores, shift)?;
    let logits = g.scale(logits, temperature);
    let per = g.logsumexp_rows(logits)?;
    Ok(g.mean(per))
}

/// InfoNCE over sampled correspondences using dot-product scores.
pub fn infonce_loss(
    g: &mut Graph,
    d1: NodeId,
    d2: NodeId,
    samples: &SampledCorrespondences,
    widths: (usize, usize),
    temperature: f64,
) -> Result<NodeId> {
    let (pos_pairs, neg_pairs) = rows(samples, widths.0, widths.1);
    let pos = g.pair_dot(d1, d2, &pos_pairs)?;
    let neg = g.pair_dot(d1, d2, &neg_pairs)?;
    infonce_from_scores(g, pos, neg, temperature)
}

/// `(L_p, L_n)` from plain distances: `pos: [L]`, `neg: [L·N]`.
pub fn hinge_loss_values(pos: &[f64], neg: &[f64], margin: f64) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(&[pos.len()], pos.to_vec())?);
    let n = g.constant(Tensor::new(&[neg.len()], neg.to_vec())?);
    let h = hinge_from_distances(&mut g, p, n, margin)?;
    Ok((g.value(h.positive).item(), g.value(h.negative).item()))
}

pub fn infonce_values(pos: &[f64], neg: &[f64], temperature: f64) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(&[pos.len()], pos.to_vec())?);
    let n = g.constant(Tensor::new(&[neg.len()], neg.to_vec())?);
    let out = infonce_from_scores(&mut g, p, n, temperature)?;
    Ok(g.value(out).item())
}

pub fn distinctiveness_loss_values(r: &[f64], confusions: &[usize], exponent: f64) -> Result<f64> {
    let mut g = Graph::new();
    let rn = g.constant(Tensor::new(&[r.len()], r.to_vec())?);
    let out = distinctiveness_loss(&mut g, rn, confusions, exponent)?;
    Ok(g.value(out).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        assert_eq!(descriptor_distance(&e1, &e1), 0.0);
        assert_eq!(descriptor_distance(&e1, &[-1.0, 0.0, 0.0]), 2.0);
        assert!((descriptor_distance(&e1, &e2) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss_values(&[0.0], &[2.0], 1.0).unwrap(), (0.0, 0.0));
        assert_eq!(hinge_loss_values(&[0.0], &[0.5], 1.0).unwrap(), (0.0, 0.5));
        let (lp, ln) = hinge_loss_values(&[0.3], &[1.0], 1.0).unwrap();
        assert_eq!(lp, 0.3);
        assert!((ln - 0.3).abs() < 1e-15);
    }

    #[test]
    fn hardest_examples() {
        assert_eq!(hardest_negatives(&[0.1, 0.9, 0.5], 3, 1), vec![0]);
        assert_eq!(hardest_negatives(&[0.7, 0.7, 0.7], 3, 2), vec![0, 1]);
        assert_eq!(hardest_negatives(&[0.4, 0.2, 0.3, 0.9], 4, 3), vec![1, 2, 0]);
        assert_eq!(hardest_negatives(&[0.4, 0.2, 0.9, 0.1], 2, 1), vec![1, 1]);
    }

    #[test]
    fn distinctiveness_targets_are_exact_powers_of_two() {
        assert_eq!(distinctiveness_target(0, 0.25), 1.0);
        assert_eq!(distinctiveness_target(15, 0.25), 0.5);
        assert_eq!(distinctiveness_target(255, 0.25), 0.25);
        assert_eq!(distinctiveness_loss_values(&[1.0], &[0], 0.25).unwrap(), 0.0);
    }

    #[test]
    fn confusion_counts_use_strict_margin() {
        assert_eq!(confusion_counts(&[0.5, 1.0, 1.5, 0.99, 0.1, 2.0], 3, 1.0), vec![1, 2]);
    }

    #[test]
    fn infonce_examples() {
        let v = infonce_values(&[0.3], &[0.3, 0.3, 0.3], 20.0).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-9);
        let tiny = infonce_values(&[1.0], &vec![-1.0; 512], 20.0).unwrap();
        let expected = (512.0 * (-40f64).exp()).ln_1p();
        assert!(((tiny - expected) / expected).abs() < 1e-12, "{tiny} vs {expected}");
        assert!(tiny > 0.0);
        let lo = infonce_values(&[0.2], &[0.1, -0.3], 20.0).unwrap();
        let hi = infonce_values(&[0.4], &[0.1, -0.3], 20.0).unwrap();
        assert!(hi < lo);
    }
}
