use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use coam::diffcore::checkpoint::{load_params, save_params};
use coam::diffcore::ParamStore;
use coam::geometry::{
    decompose_essential, estimate_essential_ransac, evaluate_homography_matches, load_homography, load_pose,
    pose_accuracy, pose_errors, validate_thresholds, write_text, NormalizedPair, RansacConfig,
};
use coam::image::Image;
use coam::matcher::{
    descriptor_invariance, extract_matches, format_matches, load_matches, pool_invariance, save_descriptor_dump,
    InvarianceStats, MatchConfig,
};
use coam::net::CoamNet;
use coam::synth::{
    load_homography_pair, matches_path, pose_path, read_manifest, write_homography_dataset, write_twoview_dataset,
};
use coam::training::{batch_indices, derive_seed, Trainer, TrainingPair};

use crate::config::{RunConfig, RUN_FILE};
use crate::{viz, Cli, CliError, Command, DataKind, LogTime};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_LOG: &str = "loss.log";

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let near = match &cli.command {
        Command::Match { ckpt, .. } | Command::Invariance { ckpt, .. } => ckpt.clone(),
        _ => None,
    };
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), near.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GenData { kind, count, out } => gen_data(&cfg, kind, count, &out),
        Command::Train {
            data,
            steps,
            out,
            log_time,
        } => {
            let data = required(data.or(cfg.paths.data_dir.clone()), "--data")?;
            let out = required(out.or(cfg.paths.output_dir.clone()), "--out")?;
            train(cfg, &data, steps, &out, log_time)
        }
        Command::Match {
            ckpt,
            img1,
            img2,
            grid,
            topk,
            refine,
            out,
            viz,
            query_point,
            dump,
        } => {
            let ckpt = required(ckpt.or(cfg.paths.checkpoint.clone()), "--ckpt")?;
            let query = query_point.as_deref().map(parse_point).transpose()?;
            let mc = MatchConfig {
                grid,
                top_k: topk,
                refine,
            };
            match_pair(
                &cfg,
                &ckpt,
                &img1,
                &img2,
                &mc,
                &out,
                viz.as_deref(),
                query,
                dump.as_deref(),
            )
        }
        Command::EvalHomography {
            matches,
            h,
            thresholds,
            out,
        } => eval_homography(&matches, &h, &thresholds, out.as_deref()),
        Command::EvalPose {
            matches_dir,
            gt_dir,
            threshold,
            out,
        } => eval_pose(&cfg, &matches_dir, &gt_dir, threshold, out.as_deref()),
        Command::Invariance { ckpt, data, out } => {
            let ckpt = required(ckpt.or(cfg.paths.checkpoint.clone()), "--ckpt")?;
            let data = required(data.or(cfg.paths.data_dir.clone()), "--data")?;
            invariance(&cfg, &ckpt, &data, out.as_deref())
        }
    }
}

fn required(p: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    p.ok_or_else(|| CliError::Usage(format!("{flag} is required (flag or config paths)")))
}

fn parse_point(s: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::Usage(format!("query point must be x,y, got {s:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let x = parts[0].parse().map_err(|_| bad())?;
    let y = parts[1].parse().map_err(|_| bad())?;
    Ok([x, y])
}

/// Comma-separated thresholds, validated as positive and strictly ascending.
pub fn parse_thresholds(s: &str) -> Result<Vec<f64>> {
    let values = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad threshold {t:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    validate_thresholds(&values)?;
    Ok(values)
}

fn gen_data(cfg: &RunConfig, kind: DataKind, count: usize, out: &Path) -> Result<()> {
    let entries = match kind {
        DataKind::Homography => write_homography_dataset(out, &cfg.homography_data, count, cfg.seed)?,
        DataKind::Twoview => write_twoview_dataset(out, &cfg.twoview_data, count, cfg.seed)?,
    };
    println!("wrote {} pairs to {}", entries.len(), out.display());
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Vec<TrainingPair>> {
    let manifest = read_manifest(dir)?;
    if manifest.is_empty() {
        return Err(CliError::Usage(format!("{}: dataset is empty", dir.display())));
    }
    manifest
        .iter()
        .map(|e| load_homography_pair(dir, &e.pair_id).map_err(CliError::from))
        .collect()
}

fn build_net(cfg: &RunConfig) -> Result<(CoamNet, ParamStore)> {
    let mut store = ParamStore::new();
    let net = CoamNet::new(cfg.network.clone(), &mut store, derive_seed(cfg.seed, 0, 5))?;
    Ok((net, store))
}

fn load_net(cfg: &RunConfig, ckpt: &Path) -> Result<(CoamNet, ParamStore)> {
    let (net, mut store) = build_net(cfg)?;
    load_params(&mut store, ckpt)?;
    Ok((net, store))
}

fn train(mut cfg: RunConfig, data: &Path, steps: u64, out: &Path, log_time: LogTime) -> Result<()> {
    let pairs = load_dataset(data)?;
    let size = cfg.network.image_size;
    if let Some(p) = pairs
        .iter()
        .find(|p| p.image1.width() != size || p.image1.height() != size)
    {
        return Err(CliError::Usage(format!(
            "dataset images are {}x{}, network expects {size}x{size}",
            p.image1.width(),
            p.image1.height()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| coam::Error::io(out, e))?;
    cfg.paths.data_dir = Some(data.to_path_buf());
    cfg.paths.output_dir = None;
    cfg.paths.checkpoint = None;
    write_text(&out.join(RUN_FILE), &cfg.to_toml())?;

    let (net, store) = build_net(&cfg)?;
    let kind = cfg.train.loss_kind;
    let batch = cfg.train.batch_size;
    let mut trainer = Trainer::new(net, store, cfg.train.clone(), cfg.seed)?;
    let log_path = out.join(LOSS_LOG);
    let file = std::fs::File::create(&log_path).map_err(|e| coam::Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let start = Instant::now();
    let mut outcome: Result<()> = Ok(());
    for step in 0..steps {
        let b: Vec<TrainingPair> = batch_indices(pairs.len(), batch, step, cfg.seed)
            .into_iter()
            .map(|i| pairs[i].clone())
            .collect();
        let losses = match trainer.step(&b) {
            Ok(l) => l,
            Err(e) => {
                outcome = Err(e.into());
                break;
            }
        };
        let t = match log_time {
            LogTime::Wall => Some(start.elapsed().as_secs_f64()),
            LogTime::None => None,
        };
        writeln!(log, "{}", losses.log_line(step as usize, kind, t)).map_err(|e| coam::Error::io(&log_path, e))?;
        if step % 100 == 0 || step + 1 == steps {
            eprintln!("step {step}/{steps}: {}", losses.log_line(step as usize, kind, t));
        }
    }
    log.flush().map_err(|e| coam::Error::io(&log_path, e))?;
    outcome?;
    let ckpt = out.join(CHECKPOINT_FILE);
    save_params(&trainer.store, &ckpt)?;
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn match_pair(
    cfg: &RunConfig,
    ckpt: &Path,
    img1: &Path,
    img2: &Path,
    mc: &MatchConfig,
    out: &Path,
    viz_dir: Option<&Path>,
    query: Option<[f64; 2]>,
    dump: Option<&Path>,
) -> Result<()> {
    let (net, store) = load_net(cfg, ckpt)?;
    let a = Image::load_png(img1)?;
    let b = Image::load_png(img2)?;
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(CliError::Usage(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let desc = net.describe_pair(&store, &a, &b)?;
    let matches = extract_matches(&desc, mc)?;
    write_text(out, &format_matches(mc.grid, mc.top_k, &matches))?;
    if let Some(path) = dump {
        save_descriptor_dump(&desc, path)?;
    }
    if let Some(dir) = viz_dir {
        std::fs::create_dir_all(dir).map_err(|e| coam::Error::io(dir, e))?;
        viz::match_overlay(&a, &b, &matches).save_png(&dir.join(viz::OVERLAY_FILE))?;
        let q = query.unwrap_or([a.width() as f64 / 2.0, a.height() as f64 / 2.0]);
        viz::attention_map(&a, &b, &desc, q)?.save_png(&dir.join(viz::ATTENTION_FILE))?;
    }
    println!("{} matches written to {}", matches.len(), out.display());
    Ok(())
}

fn eval_homography(matches: &Path, h: &Path, thresholds: &str, out: Option<&Path>) -> Result<()> {
    let thresholds = parse_thresholds(thresholds)?;
    let file = load_matches(matches)?;
    let h = load_homography(h)?;
    let ev = evaluate_homography_matches(&file.matches, &h, &thresholds)?;
    let mut table = String::from("# threshold correct fraction\n");
    for ((t, c), f) in ev.thresholds.iter().zip(&ev.counts).zip(&ev.fractions) {
        writeln!(table, "{t} {c} {f:.6}").unwrap();
    }
    writeln!(table, "# total {}", ev.total).unwrap();
    print!("{table}");
    if let Some(path) = out {
        write_text(path, &table)?;
    }
    Ok(())
}

fn pair_ids(dir: &Path, suffix: &str) -> Result<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| coam::Error::io(dir, e))?;
    let mut ids = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| coam::Error::io(dir, e))?;
        if let Some(id) = entry.file_name().to_str().and_then(|n| n.strip_suffix(suffix)) {
            ids.insert(id.to_string());
        }
    }
    Ok(ids)
}

fn eval_pose(cfg: &RunConfig, matches_dir: &Path, gt_dir: &Path, threshold: f64, out: Option<&Path>) -> Result<()> {
    let with_matches = pair_ids(matches_dir, ".matches.txt")?;
    let with_gt = pair_ids(gt_dir, ".pose.txt")?;
    let missing: Vec<String> = with_matches.symmetric_difference(&with_gt).cloned().collect();
    if !missing.is_empty() {
        return Err(CliError::MissingPairs(missing));
    }
    if with_matches.is_empty() {
        return Err(CliError::Usage(format!("no match files in {}", matches_dir.display())));
    }
    let mut report = String::from("# pair rotation_deg translation_deg\n");
    let mut errors = Vec::with_capacity(with_matches.len());
    for (i, id) in with_matches.iter().enumerate() {
        let file = load_matches(&matches_path(matches_dir, id))?;
        let gt = load_pose(&pose_path(gt_dir, id))?;
        let k = &gt.intrinsics;
        let pairs: Vec<NormalizedPair> = file
            .matches
            .iter()
            .map(|m| (k.to_normalized(m.p1), k.to_normalized(m.p2)))
            .collect();
        let ransac = RansacConfig {
            rng_seed: derive_seed(cfg.ransac.rng_seed ^ cfg.seed, i as u64, 3),
            ..cfg.ransac.clone()
        };
        let estimate = estimate_essential_ransac(&pairs, &ransac)
            .and_then(|est| decompose_essential(&est.e, &est.inlier_pairs(&pairs)));
        let err = match estimate {
            Ok(pose) => {
                let e = pose_errors(&pose, &gt.pose);
                writeln!(report, "{id} {:.6} {:.6}", e.0, e.1).unwrap();
                e
            }
            Err(e) => {
                eprintln!("{id}: estimation failed: {e}");
                writeln!(report, "{id} failed failed").unwrap();
                (f64::INFINITY, f64::INFINITY)
            }
        };
        errors.push(err);
    }
    let acc = pose_accuracy(&errors, threshold)?;
    writeln!(report, "# rot / trans at {threshold} deg: {acc}").unwrap();
    print!("{report}");
    if let Some(path) = out {
        write_text(path, &report)?;
    }
    Ok(())
}

fn invariance(cfg: &RunConfig, ckpt: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let (net, store) = load_net(cfg, ckpt)?;
    let manifest = read_manifest(data)?;
    let mut report = String::from("# pair mean std pairs\n");
    let mut stats: Vec<InvarianceStats> = Vec::with_capacity(manifest.len());
    for entry in &manifest {
        let pair = load_homography_pair(data, &entry.pair_id)?;
        let desc = net.describe_pair(&store, &pair.image1, &pair.image2)?;
        let s = descriptor_invariance(&desc.d1, &desc.d2, &pair.field.rounded_pairs())?;
        writeln!(report, "{} {:.6} {:.6} {}", entry.pair_id, s.mean, s.std, s.pairs).unwrap();
        stats.push(s);
    }
    let pooled =
        pool_invariance(&stats).ok_or_else(|| CliError::Usage(format!("{}: dataset is empty", data.display())))?;
    writeln!(report, "# pooled {:.6} {:.6} {}", pooled.mean, pooled.std, pooled.pairs).unwrap();
    print!("{report}");
    if let Some(path) = out {
        write_text(path, &report)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_parse_and_validate() {
        assert_eq!(parse_thresholds("1, 2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(parse_thresholds("3,1").is_err());
        assert!(parse_thresholds("1,x").is_err());
        assert!(parse_thresholds("0,1").is_err());
    }

    #[test]
    fn query_point_parsing() {
        assert_eq!(parse_point("3.5,7").unwrap(), [3.5, 7.0]);
        assert!(parse_point("3").is_err());
        assert!(parse_point("a,b").is_err());
    }
}
