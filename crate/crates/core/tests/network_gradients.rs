//! Finite-difference check through the whole conditioned network.

use coam::diffcore::{grad_check, ParamStore, Tensor};
use coam::net::{CoamNet, NetworkConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn scalar_through_encode_attend_decode_and_regressor() {
    let cfg = NetworkConfig {
        image_size: 32,
        descriptor_dim: 3,
        encoder_widths: vec![2, 3, 3, 4],
        projection_dims: vec![3, 3],
        ..NetworkConfig::default()
    };
    let mut store = ParamStore::new();
    let net = CoamNet::new(cfg, &mut store, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut image = || Tensor::new(&[3, 32, 32], (0..3072).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let (a, b) = (image(), image());
    let weights = Tensor::new(
        &[1024, 3],
        (0..3072).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect(),
    )
    .unwrap();
    let report = grad_check(
        |g, s, ids| {
            let n = net.forward_pair(g, s, ids[0], ids[1], false)?;
            let w = g.constant(weights.clone());
            let p = g.mul(n.first.descriptors, w)?;
            let d = g.sum(p);
            let r = g.mean(n.first.distinctiveness);
            let q = g.mul(n.second.descriptors, w)?;
            let e = g.sum(q);
            let t = g.add(d, r)?;
            g.add(t, e)
        },
        &[a, b],
        &store,
        1e-6,
        1e-4,
    )
    .unwrap();
    let flagged: Vec<_> = report.flagged().map(|e| (&e.name, e.max_rel_error)).collect();
    assert!(report.passed(), "{flagged:?}");
}
