//! The conditioned descriptor network.
//!
//! A shared strided CNN encodes both images. At the two deepest scales each
//! location of one image attends over all locations of the other (softmax of
//! projected inner products), and the attended features are concatenated
//! into a UNet decoder whose output is L2-normalized per pixel. A small
//! pointwise regressor on the unnormalized output predicts distinctiveness.

mod config;
mod model;
mod types;

pub use config::{AttentionScales, NetworkConfig};
pub use model::{attend, CoamNet, DirectionNodes, PairDescription, PairNodes, Projection, PyramidNodes};
pub use types::{AttentionMatrix, DescriptorMap, DistinctivenessMap, FeaturePyramid};

use crate::diffcore::{Graph, Tensor};
use crate::error::Result;

/// Co-attention on already-projected features `g: [n_g, P]`, `h: [n_h, P]`.
pub fn coattend(g_proj: &Tensor, h_proj: &Tensor) -> Result<(Tensor, AttentionMatrix)> {
    let mut g = Graph::new();
    let gn = g.constant(g_proj.clone());
    let hn = g.constant(h_proj.clone());
    let (att, a) = attend(&mut g, gn, hn)?;
    Ok((g.value(att).clone(), AttentionMatrix::new(g.value(a).clone())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamStore;
    use crate::image::Image;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            image_size: 16,
            descriptor_dim: 4,
            encoder_widths: vec![3, 4, 4, 5],
            projection_dims: vec![3, 3],
            ..NetworkConfig::default()
        }
    }

    fn pattern(size: usize, phase: f32) -> Image {
        let data = (0..size * size * 3)
            .map(|i| 0.5 + 0.5 * ((i as f32) * 0.37 + phase).sin())
            .collect();
        Image::new(size, size, data).unwrap()
    }

    #[test]
    fn attention_over_constant_values_returns_the_constant() {
        let g_proj = Tensor::new(&[3, 2], vec![0.3, -1.0, 2.0, 0.5, -0.7, 0.1]).unwrap();
        let h_proj = Tensor::new(&[4, 2], [0.25, -0.5].repeat(4)).unwrap();
        let (att, a) = coattend(&g_proj, &h_proj).unwrap();
        for row in att.data().chunks(2) {
            assert!((row[0] - 0.25).abs() < 1e-15 && (row[1] + 0.5).abs() < 1e-15);
        }
        assert_eq!(a.rows(), 3);
        assert_eq!(a.cols(), 4);
    }

    #[test]
    fn attention_on_basis_vectors() {
        let e = std::f64::consts::E;
        let basis = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (_, a) = coattend(&basis, &basis).unwrap();
        let hi = e / (e + 1.0);
        let lo = 1.0 / (e + 1.0);
        let expected = [hi, lo, lo, hi];
        for (v, x) in a.tensor().data().iter().zip(expected) {
            assert!((v - x).abs() < 1e-15);
        }
    }

    #[test]
    fn scaled_query_saturates_toward_argmax() {
        let h = Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.6]).unwrap();
        let g = Tensor::new(&[1, 2], vec![200.0, 10.0]).unwrap();
        let (_, a) = coattend(&g, &h).unwrap();
        assert!(a.row(0)[0] > 1.0 - 1e-12);
    }

    #[test]
    fn attention_is_equivariant_to_permuting_attended_locations() {
        let g = Tensor::new(&[2, 3], vec![0.1, 0.4, -0.3, 0.9, -0.2, 0.5]).unwrap();
        let h = Tensor::new(&[3, 3], vec![0.2, 0.1, 0.0, -0.5, 0.3, 0.8, 0.7, -0.1, 0.4]).unwrap();
        let perm = [2usize, 0, 1];
        let hp: Vec<f64> = perm.iter().flat_map(|&i| h.row(i).to_vec()).collect();
        let hp = Tensor::new(&[3, 3], hp).unwrap();
        let (a1, _) = coattend(&g, &h).unwrap();
        let (a2, _) = coattend(&g, &hp).unwrap();
        assert!(a1.max_abs_diff(&a2) < 1e-15);
    }

    #[test]
    fn encoder_shapes_at_desk_scale() {
        let cfg = NetworkConfig::desk();
        let mut store = ParamStore::new();
        let net = CoamNet::new(cfg, &mut store, 0).unwrap();
        let pyr = net.encode(&store, &pattern(64, 0.0)).unwrap();
        assert_eq!(pyr.f_l.shape(), &[64, 8, 8]);
        assert_eq!(pyr.f_s.shape(), &[128, 4, 4]);
        let zero = net.encode(&store, &Image::filled(64, 64, [0.0; 3])).unwrap();
        assert!(zero.f_l.is_finite() && zero.f_s.is_finite());
    }

    #[test]
    fn encoder_rejects_wrong_size() {
        let mut store = ParamStore::new();
        let net = CoamNet::new(tiny(), &mut store, 0).unwrap();
        assert!(matches!(
            net.encode(&store, &pattern(32, 0.0)),
            Err(crate::Error::ShapeMismatch { op: "encode", .. })
        ));
    }

    #[test]
    fn describe_pair_contracts() {
        let mut store = ParamStore::new();
        let net = CoamNet::new(tiny(), &mut store, 3).unwrap();
        let (a, b) = (pattern(16, 0.0), pattern(16, 1.3));
        let ab = net.describe_pair(&store, &a, &b).unwrap();
        let ba = net.describe_pair(&store, &b, &a).unwrap();
        assert_eq!(ab.d1, ba.d2);
        assert_eq!(ab.r1, ba.r2);
        assert_eq!((ab.d1.height(), ab.d1.width(), ab.d1.dim()), (16, 16, 4));
        for i in 0..256 {
            let n: f64 = ab.d1.at_index(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
        assert!(ab.r1.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let aa = net.describe_pair(&store, &a, &a).unwrap();
        for (x, y) in aa.d1.data().iter().zip(aa.d2.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        let again = net.describe_pair(&store, &a, &b).unwrap();
        assert_eq!(ab.d1, again.d1);
    }

    #[test]
    fn zero_regressor_weights_give_one_half() {
        let mut store = ParamStore::new();
        let net = CoamNet::new(tiny(), &mut store, 1).unwrap();
        for id in net.distinctiveness_params() {
            if store.get(id).name.ends_with(".w") {
                store.get_mut(id).value.fill(0.0);
            }
        }
        let out = net.describe_pair(&store, &pattern(16, 0.0), &pattern(16, 2.0)).unwrap();
        assert!(out.r1.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn coarse_only_attention_builds() {
        let cfg = NetworkConfig {
            attention_scales: AttentionScales::Coarse,
            ..tiny()
        };
        let mut store = ParamStore::new();
        let net = CoamNet::new(cfg, &mut store, 1).unwrap();
        let out = net.describe_pair(&store, &pattern(16, 0.0), &pattern(16, 2.0)).unwrap();
        assert!(out.attention_fine.is_none());
    }

    #[test]
    fn config_validation_and_toml() {
        assert!(NetworkConfig {
            image_size: 40,
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(NetworkConfig {
            descriptor_dim: 1,
            ..tiny()
        }
        .validate()
        .is_err());
        let cfg = NetworkConfig::from_toml("descriptor_dim = 16\nattention_scales = \"coarse\"\n").unwrap();
        assert_eq!(cfg.descriptor_dim, 16);
        assert_eq!(cfg.attention_scales, AttentionScales::Coarse);
        assert!(NetworkConfig::from_toml("bogus = 1").is_err());
    }
}
