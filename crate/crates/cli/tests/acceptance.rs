//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured quantities.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use coam::diffcore::checks::{primitive_cases, run_case};
use coam::geometry::{
    decompose_essential, estimate_essential_ransac, evaluate_homography_matches, load_homography, pose_accuracy,
    pose_errors, NormalizedPair, RansacConfig,
};
use coam::matcher::{
    grid_sample, load_matches, mutual_nn_matches, mutual_nn_matches_exhaustive, refine_matches, top_k,
    weighted_centroid, GridDescriptors, Match, NEIGHBOURHOOD,
};
use coam::net::{DescriptorMap, DistinctivenessMap};
use coam::synth::{generate_two_view_scene, homography_path, image_paths, pair_id, TwoViewSceneSpec};
use coam::training::checks::loss_cases;
use coam::training::{distinctiveness_target, hinge_loss_values, infonce_values};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRAIN_STEPS: &str = "1000";

/// Writes to the process stdout handle, which the test harness does not capture.
fn report(n: u32, passed: bool, detail: String) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n}: {verdict} {detail}").unwrap();
    out.flush().unwrap();
}

fn coam() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coam"));
    c.env_remove("COAM_SEED");
    c
}

fn run(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn coam");
    assert!(
        out.status.success(),
        "{:?} failed:\n{}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn workdir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn p(rel: &str) -> PathBuf {
    workdir().join(rel)
}

fn gen_homography(out: &Path, count: usize, seed: u64, config: Option<&Path>) {
    let mut c = coam();
    c.args([
        "gen-data",
        "--kind",
        "homography",
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
    ])
    .arg("--out")
    .arg(out);
    if let Some(cfg) = config {
        c.arg("--config").arg(cfg);
    }
    run(&mut c);
}

fn train(data: &Path, out: &Path, config: Option<&Path>) {
    let mut c = coam();
    c.args(["train", "--steps", TRAIN_STEPS, "--seed", "3", "--log-time", "none"])
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out);
    if let Some(cfg) = config {
        c.arg("--config").arg(cfg);
    }
    run(&mut c);
}

fn training_set() -> &'static Path {
    static ONCE: OnceLock<PathBuf> = OnceLock::new();
    ONCE.get_or_init(|| {
        let dir = p("train-data");
        gen_homography(&dir, 200, 1, None);
        dir
    })
}

/// Checkpoint directory of the conditioned model.
fn conditioned() -> &'static Path {
    static ONCE: OnceLock<PathBuf> = OnceLock::new();
    ONCE.get_or_init(|| {
        let out = p("conditioned");
        train(training_set(), &out, None);
        out
    })
}

/// Checkpoint directory of the model with attended features zeroed.
fn ablated() -> &'static Path {
    static ONCE: OnceLock<PathBuf> = OnceLock::new();
    ONCE.get_or_init(|| {
        let cfg = p("ablated.toml");
        std::fs::write(&cfg, "[network]\nablate_attention = true\n").unwrap();
        let out = p("ablated");
        train(training_set(), &out, Some(&cfg));
        out
    })
}

#[test]
fn criterion_1_gradient_checks() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst_prim: f64 = 0.0;
    for case in primitive_cases() {
        let o = run_case(&case, 20, 1e-6, 1e-5).unwrap();
        worst_prim = worst_prim.max(o.max_rel_error);
        if !o.passed {
            failures.push(format!("{} ({:.2e})", o.name, o.max_rel_error));
        }
    }
    let mut worst_loss: f64 = 0.0;
    for case in loss_cases() {
        let o = run_case(&case, 20, 1e-6, 1e-4).unwrap();
        worst_loss = worst_loss.max(o.max_rel_error);
        if !o.passed {
            failures.push(format!("{} ({:.2e})", o.name, o.max_rel_error));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = failures.is_empty() && secs < 60.0;
    report(
        1,
        passed,
        format!(
            "primitives max rel {worst_prim:.2e}, losses max rel {worst_loss:.2e}, {secs:.1} s, failures {failures:?}"
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_2_analytic_loss_values() {
    let targets = [
        distinctiveness_target(0, 0.25),
        distinctiveness_target(15, 0.25),
        distinctiveness_target(255, 0.25),
    ];
    let targets_ok = targets == [1.0, 0.5, 0.25];
    let nce = infonce_values(&[0.3], &[0.3, 0.3, 0.3], 20.0).unwrap();
    let nce_ok = (nce - 4f64.ln()).abs() < 1e-9;
    let hinge = [
        hinge_loss_values(&[0.0], &[2.0], 1.0).unwrap(),
        hinge_loss_values(&[0.0], &[0.5], 1.0).unwrap(),
        hinge_loss_values(&[0.3], &[1.0], 1.0).unwrap(),
    ];
    let expected = [(0.0, 0.0), (0.0, 0.5), (0.3, 1.0 + 0.3 - 1.0)];
    let hinge_ok = hinge == expected;
    let passed = targets_ok && nce_ok && hinge_ok;
    report(
        2,
        passed,
        format!("targets {targets:?}, InfoNCE {nce:.12} vs ln 4, hinge {hinge:?}"),
    );
    assert!(passed);
}

fn random_grid(rng: &mut ChaCha8Rng, grid: usize, dim: usize) -> GridDescriptors {
    let coarse = rng.random_bool(0.3);
    let v = |rng: &mut ChaCha8Rng| {
        let x: f64 = rng.random_range(-1.0..1.0);
        if coarse {
            (x * 2.0).round() / 2.0
        } else {
            x
        }
    };
    let desc = (0..grid * grid * dim).map(|_| v(rng)).collect();
    let scores = (0..grid * grid)
        .map(|_| if coarse { 1.0 } else { rng.random_range(0.0..1.0) })
        .collect();
    GridDescriptors::new(grid, dim, 4 * grid, 3 * grid, desc, scores).unwrap()
}

fn bits(m: &[Match]) -> Vec<[u64; 5]> {
    m.iter()
        .map(|m| [m.p1[0], m.p1[1], m.p2[0], m.p2[1], m.score].map(f64::to_bits))
        .collect()
}

#[test]
fn criterion_3_matching_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut one_to_one, mut symmetric, mut blocked) = (0, 0, 0);
    let trials = 1000;
    for _ in 0..trials {
        let g = rng.random_range(1..=16);
        let dim = rng.random_range(1..=8);
        let a = random_grid(&mut rng, g, dim);
        let b = random_grid(&mut rng, g, dim);
        let m = mutual_nn_matches(&a, &b).unwrap();
        let p1: HashSet<_> = m.iter().map(|m| m.p1.map(f64::to_bits)).collect();
        let p2: HashSet<_> = m.iter().map(|m| m.p2.map(f64::to_bits)).collect();
        one_to_one += (p1.len() == m.len() && p2.len() == m.len()) as usize;
        let mut fwd: Vec<_> = bits(&m);
        let mut back: Vec<_> = bits(&mutual_nn_matches(&b, &a).unwrap())
            .into_iter()
            .map(|[a, b, c, d, s]| [c, d, a, b, s])
            .collect();
        fwd.sort();
        back.sort();
        symmetric += (fwd == back) as usize;
        blocked += (bits(&m) == bits(&mutual_nn_matches_exhaustive(&a, &b).unwrap())) as usize;
    }

    let c = [10.0, 10.0];
    let locs: Vec<[f64; 2]> = NEIGHBOURHOOD.iter().map(|o| [c[0] + o[0], c[1] + o[1]]).collect();
    let mut single = [0.5; 9];
    single[4] = 0.9;
    let mut pair = single;
    pair[5] = 0.9;
    let refine = [
        weighted_centroid(c, &locs, &single),
        weighted_centroid(c, &locs, &pair),
        weighted_centroid(c, &locs, &[0.7; 9]),
    ];
    let refine_ok = refine == [Some([10.0, 10.0]), Some([10.5, 10.0]), None];
    let passed = one_to_one == trials && symmetric == trials && blocked == trials && refine_ok;
    report(
        3,
        passed,
        format!(
            "{trials} grids: one-to-one {one_to_one}, swap-symmetric {symmetric}, blocked == exhaustive {blocked}; refinement {refine:?}"
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_4_desk_scale_learning() {
    let start = Instant::now();
    let ckpt = conditioned().join("checkpoint.ckpt");
    let test_dir = p("heldout-moderate");
    gen_homography(&test_dir, 20, 2, None);
    let mut fractions = Vec::new();
    for i in 0..20 {
        let id = pair_id(i);
        let (i1, i2) = image_paths(&test_dir, &id);
        let out = p(&format!("heldout-{id}.matches.txt"));
        run(coam()
            .args(["match", "--grid", "64", "--topk", "500"])
            .arg("--ckpt")
            .arg(&ckpt)
            .arg("--img1")
            .arg(&i1)
            .arg("--img2")
            .arg(&i2)
            .arg("--out")
            .arg(&out));
        let m = load_matches(&out).unwrap();
        let h = load_homography(&homography_path(&test_dir, &id)).unwrap();
        fractions.push(evaluate_homography_matches(&m.matches, &h, &[3.0]).unwrap().fractions[0]);
    }
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    let passed = mean >= 0.9;
    report(
        4,
        passed,
        format!("fraction correct at 3 px {mean:.4} over 20 held-out pairs ({TRAIN_STEPS} steps), {secs:.0} s for this test"),
    );
    assert!(passed);
}

fn pooled_invariance(ckpt_dir: &Path, data: &Path) -> f64 {
    let out = run(coam()
        .arg("invariance")
        .arg("--ckpt")
        .arg(ckpt_dir.join("checkpoint.ckpt"))
        .arg("--data")
        .arg(data));
    let line = out.lines().find(|l| l.starts_with("# pooled")).expect("pooled line");
    line.split_whitespace().nth(2).unwrap().parse().unwrap()
}

#[test]
fn criterion_5_conditioning_effect() {
    let cfg = p("strong.toml");
    std::fs::write(
        &cfg,
        "[homography_data]\nbrightness = 0.3\ncontrast = [0.5, 1.5]\ntint = 0.3\nnoise_sigma = 0.03\n",
    )
    .unwrap();
    let data = p("heldout-strong");
    gen_homography(&data, 20, 4, Some(&cfg));
    let with = pooled_invariance(conditioned(), &data);
    let without = pooled_invariance(ablated(), &data);
    let passed = with < without;
    report(
        5,
        passed,
        format!("mean L1 conditioned {with:.4} vs ablated {without:.4}"),
    );
    assert!(passed);
}

fn estimate(scene: &coam::synth::TwoViewScene) -> Option<(f64, f64)> {
    let k = &scene.intrinsics;
    let pairs: Vec<NormalizedPair> = scene
        .points1
        .iter()
        .zip(&scene.points2)
        .map(|(&a, &b)| (k.to_normalized(a), k.to_normalized(b)))
        .collect();
    let est = estimate_essential_ransac(&pairs, &RansacConfig::default()).ok()?;
    let pose = decompose_essential(&est.e, &est.inlier_pairs(&pairs)).ok()?;
    Some(pose_errors(&pose, &scene.pose))
}

#[test]
fn criterion_6_pose_pipeline() {
    let start = Instant::now();
    let clean = TwoViewSceneSpec::default();
    let noisy = TwoViewSceneSpec {
        noise_sigma_px: 0.5,
        outlier_fraction: 0.25,
        ..TwoViewSceneSpec::default()
    };
    let mut worst = (0.0f64, 0.0f64);
    let mut clean_ok = 0;
    for i in 0..50 {
        let scene = generate_two_view_scene(&clean, 100 + i).unwrap();
        if let Some((r, t)) = estimate(&scene) {
            worst = (worst.0.max(r), worst.1.max(t));
            clean_ok += (r < 0.1 && t < 0.5) as usize;
        } else {
            worst = (f64::INFINITY, f64::INFINITY);
        }
    }
    let errors: Vec<(f64, f64)> = (0..50)
        .map(|i| {
            let scene = generate_two_view_scene(&noisy, 500 + i).unwrap();
            estimate(&scene).unwrap_or((f64::INFINITY, f64::INFINITY))
        })
        .collect();
    let acc = pose_accuracy(&errors, 10.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let passed = clean_ok == 50 && acc.joint >= 0.95 && secs < 60.0;
    report(
        6,
        passed,
        format!(
            "noiseless {clean_ok}/50 (worst rot {:.2e} deg, trans {:.2e} deg); noisy rot / trans {acc}; {secs:.1} s",
            worst.0, worst.1
        ),
    );
    assert!(passed);
}

/// Unit-norm field of smooth random waves evaluated at `(x, y)`.
struct WaveField {
    waves: Vec<[f64; 3]>,
}

impl WaveField {
    fn new(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let waves = (0..dim)
            .map(|_| {
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let freq: f64 = rng.random_range(0.25..0.5);
                [
                    freq * angle.cos(),
                    freq * angle.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ]
            })
            .collect();
        Self { waves }
    }

    fn map(&self, size: usize, offset: [f64; 2]) -> DescriptorMap {
        let mut data = Vec::with_capacity(size * size * self.waves.len());
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + offset[0], y as f64 + offset[1]);
                data.extend(self.waves.iter().map(|w| (w[0] * px + w[1] * py + w[2]).cos()));
            }
        }
        DescriptorMap::from_raw(size, size, self.waves.len(), data).unwrap()
    }
}

#[test]
fn criterion_7_refinement_benefit() {
    let size = 32;
    let ones = DistinctivenessMap::new(size, size, vec![1.0; size * size]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let (mut raw, mut refined, mut n) = (0.0, 0.0, 0usize);
    for _ in 0..10 {
        let field = WaveField::new(&mut rng, 16);
        let delta = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let d1 = field.map(size, [0.0, 0.0]);
        let d2 = field.map(size, delta);
        let g1 = grid_sample(&d1, &ones, 16).unwrap();
        let g2 = grid_sample(&d2, &ones, 16).unwrap();
        let matches = top_k(mutual_nn_matches(&g1, &g2).unwrap(), 500).unwrap();
        let better = refine_matches(&d1, &d2, &matches);
        let err = |m: &Match| (m.p2[0] - (m.p1[0] - delta[0])).hypot(m.p2[1] - (m.p1[1] - delta[1]));
        raw += matches.iter().map(err).sum::<f64>();
        refined += better.iter().map(err).sum::<f64>();
        n += matches.len();
    }
    let (raw, refined) = (raw / n as f64, refined / n as f64);
    let passed = n > 0 && refined < raw;
    report(
        7,
        passed,
        format!("mean error unrefined {raw:.4} px, refined {refined:.4} px over {n} matches"),
    );
    assert!(passed);
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn criterion_8_determinism() {
    let base = p("determinism");
    let mut identical = Vec::new();
    let mut check = |name: &str, a: Vec<(String, Vec<u8>)>, b: Vec<(String, Vec<u8>)>| {
        identical.push((name.to_string(), !a.is_empty() && a == b));
    };
    let mut runs = Vec::new();
    for r in 0..2 {
        let dir = base.join(format!("run{r}"));
        let data = base.join("data");
        if r == 0 {
            gen_homography(&data, 3, 9, None);
        }
        gen_homography(&dir.join("data"), 3, 9, None);
        let ckpt = dir.join("model");
        run(coam()
            .args(["train", "--steps", "3", "--seed", "5", "--log-time", "none"])
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&ckpt));
        let (i1, i2) = image_paths(&data, &pair_id(0));
        let matches = dir.join("m.matches.txt");
        let stdout_match = run(coam()
            .args(["match", "--grid", "16", "--topk", "50", "--refine"])
            .arg("--ckpt")
            .arg(ckpt.join("checkpoint.ckpt"))
            .arg("--img1")
            .arg(&i1)
            .arg("--img2")
            .arg(&i2)
            .arg("--out")
            .arg(&matches));
        let stdout_h = run(coam()
            .args(["eval-homography", "--thresholds", "1,2,3"])
            .arg("--matches")
            .arg(&matches)
            .arg("--H")
            .arg(homography_path(&data, &pair_id(0)))
            .arg("--out")
            .arg(dir.join("curve.txt")));
        let tv = dir.join("twoview");
        run(coam()
            .args(["gen-data", "--kind", "twoview", "--count", "3", "--seed", "4", "--out"])
            .arg(&tv));
        let stdout_pose = run(coam()
            .args(["eval-pose", "--seed", "6"])
            .arg("--matches-dir")
            .arg(&tv)
            .arg("--gt-dir")
            .arg(&tv)
            .arg("--out")
            .arg(dir.join("pose.txt")));
        runs.push((
            dir,
            stdout_match.replace(&format!("run{r}"), "run"),
            stdout_h,
            stdout_pose,
        ));
    }
    let (a, b) = (&runs[0], &runs[1]);
    check(
        "gen-data homography",
        files(&a.0.join("data")),
        files(&b.0.join("data")),
    );
    check("train", files(&a.0.join("model")), files(&b.0.join("model")));
    let read = |d: &Path, f: &str| vec![(f.to_string(), std::fs::read(d.join(f)).unwrap())];
    check("match", read(&a.0, "m.matches.txt"), read(&b.0, "m.matches.txt"));
    check("eval-homography", read(&a.0, "curve.txt"), read(&b.0, "curve.txt"));
    check(
        "gen-data twoview",
        files(&a.0.join("twoview")),
        files(&b.0.join("twoview")),
    );
    check("eval-pose", read(&a.0, "pose.txt"), read(&b.0, "pose.txt"));
    let stdout_same = a.1 == b.1 && a.2 == b.2 && a.3 == b.3;
    let passed = identical.iter().all(|(_, ok)| *ok) && stdout_same;
    report(8, passed, format!("{identical:?}, stdout identical {stdout_same}"));
    assert!(passed);
}
