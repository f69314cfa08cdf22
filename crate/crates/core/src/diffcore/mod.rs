//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every builder method evaluates its primitive
//! immediately and records enough state for [`Graph::backward`]. Parameters
//! live in a [`ParamStore`] outside the tape so one set of weights can be
//! bound into many graphs; gradients are added back with
//! [`Gradients::accumulate_into`].

mod backward;
pub mod checkpoint;
pub mod checks;
mod gemm;
mod gradcheck;
mod graph;
mod param;
mod tensor;

pub use backward::Gradients;
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};
pub use graph::{Graph, NodeId, L2_EPS, NORM_EPS};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_slice(&[-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_slice(&[0.0, 0.0]));
        let y = g.softmax(x);
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_slice(&[3.0, 4.0]));
        let y = g.l2_normalize(x);
        let d = g.value(y).data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_dead_vector_is_zero_with_zero_grad() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_slice(&[0.0, 1e-14]));
        let y = g.l2_normalize(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
        let s = g.sum(y);
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_slice(&[1.0, 2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn normalization_kills_radial_component() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_slice(&[0.6, 0.8]));
        let y = g.l2_normalize(x);
        let grads = g.backward(y, &Tensor::from_slice(&[1.2, 1.6])).unwrap();
        for v in grads.get(x).unwrap().data() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn upstream_shape_mismatch_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_slice(&[1.0, 2.0]));
        let y = g.relu(x);
        assert!(matches!(
            g.backward(y, &Tensor::from_slice(&[1.0])),
            Err(crate::Error::ShapeMismatch { op: "backward", .. })
        ));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().starts_with("matmul"), "{err}");
        let img = g.input(Tensor::zeros(&[3, 8, 8]));
        let w = g.input(Tensor::zeros(&[4, 2, 3, 3]));
        let err = g.conv2d(img, w, None, 1, 1).unwrap_err();
        assert!(err.to_string().contains("conv2d"), "{err}");
    }

    #[test]
    fn backward_twice_doubles_parameter_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, -1.0]));
        let wn = g.param(&store, w);
        let y = g.linear(x, wn, None).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        grads.accumulate_into(&mut store);
        let once = store.get(w).gradient.clone();
        grads.accumulate_into(&mut store);
        let twice = &store.get(w).gradient;
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        store.zero_grad();
        assert!(store.get(w).gradient.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_graph_has_zero_gradients() {
        let mut store = ParamStore::new();
        store.add("unused", t(&[2], &[0.3, -0.2]));
        let report = grad_check(
            |g, _, _| {
                let c = g.constant(Tensor::from_slice(&[1.0, 2.0]));
                Ok(g.sum(c))
            },
            &[],
            &store,
            1e-5,
            1e-9,
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.max_rel_error(), 0.0);
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 3 * 5).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = g.input(t(&[2, 3, 5], &data));
        let y = g.resize_bilinear(x, 3, 5).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn conv_same_padding_keeps_size() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[2, 5, 7], 1.0));
        let w = g.input(Tensor::full(&[3, 2, 3, 3], 1.0));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(g.shape(y), &[3, 5, 7]);
        // interior sees all 18 taps, corners 8
        assert_eq!(g.value(y).data()[7 + 1], 18.0);
        assert_eq!(g.value(y).data()[0], 8.0);
        let y2 = g.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.shape(y2), &[3, 3, 4]);
    }

    #[test]
    fn max_pool_ties_pick_first() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2, 2], &[1.0, 1.0, 1.0, 1.0]));
        let y = g.max_pool2(x).unwrap();
        let grads = g.backward(y, &t(&[1, 1, 1], &[1.0])).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_slice(&[1.0, 2.0]));
        let y = g.stop_gradient(x);
        let z = g.mul(y, x).unwrap();
        let s = g.sum(z);
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let err = checkpoint::read_tensors(&b"NOTCKPT!\x01\0\0\0\0\0\0\0"[..]).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn checkpoint_layout_is_bit_exact() {
        let tensor = t(&[1, 2], &[1.0, -2.0]);
        let mut buf = Vec::new();
        checkpoint::write_tensors(&mut buf, &[("w", &tensor)]).unwrap();
        let mut expected = b"COAMCKPT".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u16.to_le_bytes());
        expected.push(b'w');
        expected.push(2);
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
        let back = checkpoint::read_tensors(&buf[..]).unwrap();
        assert_eq!(back[0].0, "w");
        assert_eq!(back[0].1, tensor);
    }
}
