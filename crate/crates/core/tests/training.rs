//! Loss gradients, optimizer-step contracts and loss properties.

use coam::diffcore::checks::run_case;
use coam::diffcore::{Graph, ParamStore, Tensor};
use coam::image::Image;
use coam::net::{CoamNet, NetworkConfig};
use coam::training::checks::loss_cases;
use coam::training::{
    distinctiveness_loss, hinge_loss_values, infonce_values, train_step, Adam, CorrespondenceField, LossKind,
    TrainConfig, Trainer, TrainingPair,
};
use proptest::prelude::*;

fn tiny_net() -> NetworkConfig {
    NetworkConfig {
        image_size: 16,
        descriptor_dim: 4,
        encoder_widths: vec![3, 4, 4, 5],
        projection_dims: vec![3, 3],
        ..NetworkConfig::default()
    }
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        positives_per_pair: 24,
        negatives_per_positive: 16,
        exclusion_radius: 2,
        batch_size: 2,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    }
}

fn pattern(size: usize, phase: f32) -> Image {
    let data = (0..size * size * 3)
        .map(|i| 0.5 + 0.5 * ((i as f32) * 0.37 + phase).sin())
        .collect();
    Image::new(size, size, data).unwrap()
}

fn batch() -> Vec<TrainingPair> {
    (0..2)
        .map(|k| {
            let img = pattern(16, k as f32);
            TrainingPair {
                image1: img.clone(),
                image2: img,
                field: CorrespondenceField::identity(16, 16),
            }
        })
        .collect()
}

#[test]
fn every_loss_passes_finite_differences() {
    for case in loss_cases() {
        let out = run_case(&case, 20, 1e-6, 1e-4).unwrap();
        assert!(out.passed, "{}: max rel error {:e}", out.name, out.max_rel_error);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut store = ParamStore::new();
    let net = CoamNet::new(tiny_net(), &mut store, 5).unwrap();
    let before: Vec<Tensor> = store.iter().map(|(_, p)| p.value.clone()).collect();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..tiny_train()
    };
    let mut adam = Adam::new(&store, 0.0, 0.9, 0.999, 1e-8);
    let losses = train_step(&net, &mut store, &mut adam, &batch(), &cfg, 1).unwrap();
    let after: Vec<Tensor> = store.iter().map(|(_, p)| p.value.clone()).collect();
    assert_eq!(before, after);
    assert!(losses.negative > 0.0 && losses.distinctiveness > 0.0);
}

fn trajectory(seed: u64) -> (Vec<Tensor>, Vec<f64>) {
    let mut store = ParamStore::new();
    let net = CoamNet::new(tiny_net(), &mut store, 5).unwrap();
    let mut t = Trainer::new(net, store, tiny_train(), seed).unwrap();
    let b = batch();
    let losses = (0..3).map(|_| t.step(&b).unwrap().negative).collect();
    (t.store.iter().map(|(_, p)| p.value.clone()).collect(), losses)
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    assert_eq!(trajectory(9), trajectory(9));
    assert_ne!(trajectory(9).1, trajectory(10).1);
}

#[test]
fn infonce_training_step_runs() {
    let mut store = ParamStore::new();
    let net = CoamNet::new(tiny_net(), &mut store, 5).unwrap();
    let cfg = TrainConfig {
        loss_kind: LossKind::Infonce,
        ..tiny_train()
    };
    let mut t = Trainer::new(net, store, cfg, 1).unwrap();
    let l = t.step(&batch()).unwrap();
    assert!(l.nce > 0.0 && l.nce.is_finite());
}

#[test]
fn distinctiveness_loss_reaches_only_the_regressor() {
    let mut store = ParamStore::new();
    let net = CoamNet::new(tiny_net(), &mut store, 5).unwrap();
    let mut g = Graph::new();
    let a = g.constant(pattern(16, 0.0).to_tensor());
    let b = g.constant(pattern(16, 1.0).to_tensor());
    let nodes = net.forward_pair(&mut g, &store, a, b, true).unwrap();
    let r = g.gather_rows(nodes.first.distinctiveness, &[0, 5, 17, 40]).unwrap();
    let lr = distinctiveness_loss(&mut g, r, &[0, 3, 9, 1], 0.25).unwrap();
    let grads = g.backward(lr, &Tensor::scalar(1.0)).unwrap();
    store.zero_grad();
    grads.accumulate_into(&mut store);
    let regressor = net.distinctiveness_params();
    let mut regressor_signal = 0.0;
    for (id, p) in store.iter() {
        let mass: f64 = p.gradient.data().iter().map(|v| v.abs()).sum();
        if regressor.contains(&id) {
            regressor_signal += mass;
        } else {
            assert_eq!(mass, 0.0, "{} received gradient", p.name);
        }
    }
    assert!(regressor_signal > 0.0);
}

#[test]
fn non_finite_inputs_abort_the_step() {
    let mut store = ParamStore::new();
    let net = CoamNet::new(tiny_net(), &mut store, 5).unwrap();
    let before: Vec<Tensor> = store.iter().map(|(_, p)| p.value.clone()).collect();
    let mut b = batch();
    let mut data = b[0].image1.data().to_vec();
    data[0] = f32::NAN;
    b[0].image1 = Image::new(16, 16, data).unwrap();
    let mut adam = Adam::new(&store, 1e-3, 0.9, 0.999, 1e-8);
    let err = train_step(&net, &mut store, &mut adam, &b, &tiny_train(), 0).unwrap_err();
    assert!(matches!(err, coam::Error::NonFiniteLoss { .. }), "{err}");
    let after: Vec<Tensor> = store.iter().map(|(_, p)| p.value.clone()).collect();
    assert_eq!(before, after);
}

proptest! {
    #[test]
    fn infonce_is_shift_invariant(
        pos in -1.0f64..1.0,
        neg in prop::collection::vec(-1.0f64..1.0, 1..8),
        c in -3.0f64..3.0,
    ) {
        let a = infonce_values(&[pos], &neg, 20.0).unwrap();
        let shifted: Vec<f64> = neg.iter().map(|v| v + c).collect();
        let b = infonce_values(&[pos + c], &shifted, 20.0).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn closer_negatives_never_lower_the_negative_term(
        pos in 0.0f64..2.0,
        neg in prop::collection::vec(0.0f64..2.0, 1..8),
        k in 0usize..8,
        delta in 0.0f64..1.0,
    ) {
        let k = k % neg.len();
        let (lp, ln) = hinge_loss_values(&[pos], &neg, 1.0).unwrap();
        let mut closer = neg.clone();
        closer[k] = (closer[k] - delta).max(0.0);
        let (_, ln2) = hinge_loss_values(&[pos], &closer, 1.0).unwrap();
        prop_assert!(ln2 >= ln);
        prop_assert!(lp >= 0.0 && ln >= 0.0);
    }
}
