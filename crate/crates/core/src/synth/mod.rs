//! Deterministic synthetic data: value-noise textures, homography-related
//! image pairs with dense ground truth, and calibrated two-view point scenes.

mod dataset;
mod homography_pair;
mod texture;
mod twoview;

pub use dataset::{
    dataset_pair_seed, format_manifest, homography_path, image_paths, load_homography_pair, matches_path, pair_id,
    parse_manifest, pose_path, read_manifest, spec_hash, write_homography_dataset, write_twoview_dataset,
    ManifestEntry, MANIFEST, SPEC_FILE,
};
pub use homography_pair::{
    generate_homography_pair, homography_field, HomographyPair, HomographyPairSpec, Photometric,
};
pub use texture::{generate_texture, generate_texture_rect};
pub use twoview::{generate_two_view_scene, TwoViewScene, TwoViewSceneSpec};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Homography;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn texture_is_deterministic_and_in_range() {
        let a = generate_texture(5, 32).unwrap();
        assert_eq!(a, generate_texture(5, 32).unwrap());
        assert!(a.mean_abs_diff(&generate_texture(6, 32).unwrap()) > 0.01);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(generate_texture(1, 8).is_err());
    }

    #[test]
    fn identity_spec_gives_identical_images() {
        let p = generate_homography_pair(&HomographyPairSpec::identity(), 3).unwrap();
        assert_eq!(p.image1, p.image2);
        assert!(p.mask.iter().all(|&m| m));
    }

    #[test]
    fn translation_masks_right_columns() {
        let h = Homography::translation(10.0, 0.0);
        let f = homography_field(&h, 64, 64, 64, 64);
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(f.target(x, y).is_some(), x < 54, "({x}, {y})");
            }
        }
    }

    #[test]
    fn warped_pixels_agree_with_photometric_transform() {
        let spec = HomographyPairSpec {
            noise_sigma: 0.0,
            ..HomographyPairSpec::moderate()
        };
        let p = generate_homography_pair(&spec, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let valid: Vec<usize> = (0..64 * 64).filter(|&i| p.mask[i]).collect();
        for _ in 0..100 {
            let i = valid[rng.random_range(0..valid.len())];
            let (x, y) = (i % 64, i / 64);
            let q = p.h.apply([x as f64, y as f64]).unwrap();
            let got = p.image2.sample(q[0], q[1]).unwrap();
            let want = p.photometric.apply(p.image1.pixel(x, y));
            for c in 0..3 {
                assert!((got[c] as f64 - want[c].clamp(0.0, 1.0)).abs() < 0.05);
            }
        }
        let f = p.field();
        for i in valid {
            let (x, y) = (i % 64, i / 64);
            assert_eq!(f.target(x, y).unwrap(), p.h.apply([x as f64, y as f64]).unwrap());
        }
    }

    #[test]
    fn noiseless_scene_satisfies_epipolar_constraint() {
        let s = generate_two_view_scene(&TwoViewSceneSpec::default(), 4).unwrap();
        let e = s.pose.essential();
        for (a, b) in s.points1.iter().zip(&s.points2) {
            let x1 = s.intrinsics.to_normalized(*a);
            let x2 = s.intrinsics.to_normalized(*b);
            let r = Vector3::new(x2[0], x2[1], 1.0).dot(&(e * Vector3::new(x1[0], x1[1], 1.0)));
            assert!(r.abs() < 1e-10, "{r}");
        }
        assert_eq!(s, generate_two_view_scene(&TwoViewSceneSpec::default(), 4).unwrap());
    }

    #[test]
    fn outlier_count_is_exact() {
        let spec = TwoViewSceneSpec {
            outlier_fraction: 0.25,
            ..TwoViewSceneSpec::default()
        };
        let s = generate_two_view_scene(&spec, 9).unwrap();
        assert_eq!(s.outliers.iter().filter(|&&o| o).count(), 25);
    }

    #[test]
    fn manifest_round_trip() {
        let e = vec![ManifestEntry {
            pair_id: pair_id(3),
            seed: 42,
            spec_hash: spec_hash(&HomographyPairSpec::moderate()).unwrap(),
        }];
        assert_eq!(parse_manifest(&format_manifest(&e), "m").unwrap(), e);
        assert_ne!(
            spec_hash(&HomographyPairSpec::moderate()).unwrap(),
            spec_hash(&HomographyPairSpec::strong_photometric()).unwrap()
        );
    }
}
