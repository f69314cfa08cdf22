//! Randomized finite-difference checks of every primitive, shared by the
//! test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::grad_check;
use super::graph::{Graph, NodeId};
use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

/// Scalar-or-tensor function of the graph inputs under test.
pub type CaseFn = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>;
pub type CaseBuilder = Box<dyn Fn(&mut ChaCha8Rng) -> (Vec<Tensor>, CaseFn)>;

/// A named family of random instances.
pub struct CheckCase {
    pub name: &'static str,
    pub build: CaseBuilder,
}

impl CheckCase {
    pub fn new(name: &'static str, build: impl Fn(&mut ChaCha8Rng) -> (Vec<Tensor>, CaseFn) + 'static) -> Self {
        Self {
            name,
            build: Box::new(build),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseOutcome {
    pub name: &'static str,
    pub instances: u64,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Reduces `y` to a scalar through a fixed random projection so that every
/// output element carries a distinct upstream weight.
fn project(g: &mut Graph, y: NodeId, seed: u64) -> Result<NodeId> {
    if g.value(y).len() == 1 {
        return Ok(y);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let shape = g.shape(y).to_vec();
    let w = g.constant(rand_tensor(&mut rng, &shape));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Runs `instances` seeded instances of `case` with central differences.
pub fn run_case(case: &CheckCase, instances: u64, step: f64, tolerance: f64) -> Result<CaseOutcome> {
    let mut worst: f64 = 0.0;
    let mut passed = true;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (inputs, f) = (case.build)(&mut rng);
        let report = grad_check(
            |g, _, ids| {
                let y = f(g, ids)?;
                project(g, y, seed)
            },
            &inputs,
            &ParamStore::new(),
            step,
            tolerance,
        )?;
        worst = worst.max(report.max_rel_error());
        passed &= report.passed();
    }
    Ok(CaseOutcome {
        name: case.name,
        instances,
        max_rel_error: worst,
        passed,
    })
}

fn unary(name: &'static str, shape: &'static [usize], f: fn(&mut Graph, NodeId) -> Result<NodeId>) -> CheckCase {
    CheckCase::new(name, move |rng| {
        (vec![rand_tensor(rng, shape)], Box::new(move |g, ids| f(g, ids[0])))
    })
}

fn binary(
    name: &'static str,
    a: &'static [usize],
    b: &'static [usize],
    f: fn(&mut Graph, NodeId, NodeId) -> Result<NodeId>,
) -> CheckCase {
    CheckCase::new(name, move |rng| {
        (
            vec![rand_tensor(rng, a), rand_tensor(rng, b)],
            Box::new(move |g, ids| f(g, ids[0], ids[1])),
        )
    })
}

fn random_pairs(rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    (0..8)
        .map(|_| (rng.random_range(0..4), rng.random_range(0..5)))
        .collect()
}

/// One case per differentiable primitive of [`Graph`].
pub fn primitive_cases() -> Vec<CheckCase> {
    vec![
        CheckCase::new("conv2d", |rng| {
            let stride = rng.random_range(1..=2);
            let c = rng.random_range(1..=3);
            let o = rng.random_range(1..=3);
            let x = rand_tensor(rng, &[c, 5, 6]);
            let w = rand_tensor(rng, &[o, c, 3, 3]);
            let b = rand_tensor(rng, &[o]);
            (
                vec![x, w, b],
                Box::new(move |g, ids| g.conv2d(ids[0], ids[1], Some(ids[2]), stride, 1)),
            )
        }),
        CheckCase::new("linear", |rng| {
            let bias = rng.random_bool(0.5);
            let x = rand_tensor(rng, &[4, 3]);
            let w = rand_tensor(rng, &[2, 3]);
            let b = rand_tensor(rng, &[2]);
            (
                vec![x, w, b],
                Box::new(move |g, ids| g.linear(ids[0], ids[1], bias.then_some(ids[2]))),
            )
        }),
        unary("relu", &[3, 4], |g, x| Ok(g.relu(x))),
        unary("sigmoid", &[3, 4], |g, x| Ok(g.sigmoid(x))),
        unary("abs", &[7], |g, x| Ok(g.abs(x))),
        unary("scale", &[5], |g, x| Ok(g.scale(x, -2.5))),
        unary("add_const", &[5], |g, x| Ok(g.add_const(x, 0.7))),
        unary("softmax", &[3, 5], |g, x| Ok(g.softmax(x))),
        unary("logsumexp_rows", &[3, 5], |g, x| g.logsumexp_rows(x)),
        CheckCase::new("instance_norm", |rng| {
            let x = rand_tensor(rng, &[3, 4, 4]);
            let gamma = rand_tensor(rng, &[3]);
            let beta = rand_tensor(rng, &[3]);
            (
                vec![x, gamma, beta],
                Box::new(|g, ids| g.instance_norm(ids[0], ids[1], ids[2])),
            )
        }),
        CheckCase::new("channel_affine", |rng| {
            let x = rand_tensor(rng, &[6, 2]);
            let s = rand_tensor(rng, &[2]);
            let b = rand_tensor(rng, &[2]);
            (
                vec![x, s, b],
                Box::new(|g, ids| g.channel_affine(ids[0], ids[1], ids[2])),
            )
        }),
        CheckCase::new("resize_bilinear", |rng| {
            let (oh, ow) = (rng.random_range(2..=8), rng.random_range(2..=8));
            (
                vec![rand_tensor(rng, &[2, 4, 3])],
                Box::new(move |g, ids| g.resize_bilinear(ids[0], oh, ow)),
            )
        }),
        unary("l2_normalize", &[4, 3], |g, x| Ok(g.l2_normalize(x))),
        CheckCase::new("concat", |rng| {
            let axis = rng.random_range(0..3);
            let mut sa = [2, 3, 2];
            let mut sb = [2, 3, 2];
            sa[axis] = 1;
            sb[axis] = 3;
            (
                vec![rand_tensor(rng, &sa), rand_tensor(rng, &sb)],
                Box::new(move |g, ids| g.concat(&[ids[0], ids[1]], axis)),
            )
        }),
        unary("max_pool2", &[2, 4, 6], |g, x| g.max_pool2(x)),
        binary("add", &[3, 2], &[3, 2], |g, a, b| g.add(a, b)),
        binary("sub", &[3, 2], &[3, 2], |g, a, b| g.sub(a, b)),
        binary("mul", &[3, 2], &[3, 2], |g, a, b| g.mul(a, b)),
        binary("matmul", &[3, 4], &[4, 2], |g, a, b| g.matmul(a, b)),
        unary("sum", &[2, 3], |g, x| Ok(g.sum(x))),
        unary("mean", &[2, 3], |g, x| Ok(g.mean(x))),
        unary("max", &[2, 3], |g, x| Ok(g.max(x))),
        unary("reshape", &[2, 6], |g, x| g.reshape(x, &[3, 4])),
        unary("transpose", &[2, 5], |g, x| g.transpose(x)),
        CheckCase::new("gather_rows", |rng| {
            let idx: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
            (
                vec![rand_tensor(rng, &[4, 3])],
                Box::new(move |g, ids| g.gather_rows(ids[0], &idx)),
            )
        }),
        CheckCase::new("pair_distance", |rng| {
            let pairs = random_pairs(rng);
            (
                vec![rand_tensor(rng, &[4, 3]), rand_tensor(rng, &[5, 3])],
                Box::new(move |g, ids| g.pair_distance(ids[0], ids[1], &pairs)),
            )
        }),
        CheckCase::new("pair_dot", |rng| {
            let pairs = random_pairs(rng);
            (
                vec![rand_tensor(rng, &[4, 3]), rand_tensor(rng, &[5, 3])],
                Box::new(move |g, ids| g.pair_dot(ids[0], ids[1], &pairs)),
            )
        }),
    ]
}
