//! Central-difference checks of every differentiable primitive.

use coam::diffcore::checks::{primitive_cases, rand_tensor, run_case};
use coam::diffcore::{grad_check, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-5;
const INSTANCES: u64 = 20;

fn check(name: &str) {
    let cases = primitive_cases();
    let case = cases
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("no case {name}"));
    let out = run_case(case, INSTANCES, STEP, TOL).unwrap();
    assert!(out.passed, "{name}: max rel error {:e}", out.max_rel_error);
}

#[test]
fn every_primitive_has_a_case() {
    let names: Vec<&str> = primitive_cases().iter().map(|c| c.name).collect();
    assert_eq!(names.len(), 27);
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
}

#[test]
fn conv2d_stride1_and_stride2() {
    check("conv2d");
}

#[test]
fn linear_with_and_without_bias() {
    check("linear");
}

#[test]
fn pointwise_nonlinearities() {
    for n in ["relu", "sigmoid", "abs", "scale", "add_const"] {
        check(n);
    }
}

#[test]
fn softmax_and_logsumexp() {
    check("softmax");
    check("logsumexp_rows");
}

#[test]
fn instance_norm_and_channel_affine() {
    check("instance_norm");
    check("channel_affine");
}

#[test]
fn resize_up_and_down() {
    check("resize_bilinear");
}

#[test]
fn l2_normalize_rows() {
    check("l2_normalize");
}

#[test]
fn concat_along_each_axis() {
    check("concat");
}

#[test]
fn max_pool() {
    check("max_pool2");
}

#[test]
fn elementwise_binary() {
    for n in ["add", "sub", "mul"] {
        check(n);
    }
}

#[test]
fn matmul() {
    check("matmul");
}

#[test]
fn reductions() {
    for n in ["sum", "mean", "max"] {
        check(n);
    }
}

#[test]
fn reshape_transpose_gather() {
    for n in ["reshape", "transpose", "gather_rows"] {
        check(n);
    }
}

#[test]
fn pair_distance_and_dot() {
    check("pair_distance");
    check("pair_dot");
}

#[test]
fn linear_layer_parameters_via_store() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let w = store.add("w", rand_tensor(&mut rng, &[3, 3]));
    let x = rand_tensor(&mut rng, &[2, 3]);
    let report = grad_check(
        |g, s, ids| {
            let wn = g.param(s, w);
            let y = g.linear(ids[0], wn, None)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        },
        &[x],
        &store,
        STEP,
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.entries[0].name, "w");
}

#[test]
fn softmax_cross_entropy_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let logits = rand_tensor(&mut rng, &[4, 5]);
    let targets = [1usize, 0, 4, 2];
    let report = grad_check(
        |g, _, ids| {
            let p = g.softmax(ids[0]);
            let flat = g.reshape(p, &[20, 1])?;
            let idx: Vec<usize> = targets.iter().enumerate().map(|(r, &c)| r * 5 + c).collect();
            let picked = g.gather_rows(flat, &idx)?;
            // -mean(log p) through logsumexp: log p_t = x_t - lse(x)
            let lse = g.logsumexp_rows(ids[0])?;
            let xflat = g.reshape(ids[0], &[20, 1])?;
            let xt = g.gather_rows(xflat, &idx)?;
            let xt = g.reshape(xt, &[4])?;
            let nll = g.sub(lse, xt)?;
            let m = g.mean(nll);
            let extra = g.sum(picked);
            let extra = g.scale(extra, 0.1);
            let both = g.add(m, extra)?;
            Ok(both)
        },
        &[logits],
        &ParamStore::new(),
        STEP,
        1e-5,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn conv2d_single_channel_four_by_four() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[1, 4, 4]);
    let w = rand_tensor(&mut rng, &[2, 1, 3, 3]);
    let report = grad_check(
        |g, _, ids| {
            let y = g.conv2d(ids[0], ids[1], None, 1, 1)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        },
        &[x, w],
        &ParamStore::new(),
        STEP,
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}
