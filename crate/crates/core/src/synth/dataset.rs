use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::homography_pair::{generate_homography_pair, homography_field, HomographyPairSpec};
use super::twoview::{generate_two_view_scene, TwoViewSceneSpec};
use crate::error::{Error, Result};
use crate::geometry::{format_homography, format_pose, load_homography, read_text, write_text, PoseRecord};
use crate::image::Image;
use crate::matcher::{format_matches, Match};
use crate::training::{derive_seed, TrainingPair};

pub const MANIFEST: &str = "manifest.txt";
pub const SPEC_FILE: &str = "spec.toml";

/// 64-bit FNV-1a of the spec's TOML form, as 16 hex digits.
pub fn spec_hash<T: Serialize>(spec: &T) -> Result<String> {
    let text = toml::to_string(spec).map_err(|e| Error::Config(e.to_string()))?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub seed: u64,
    pub spec_hash: String,
}

pub fn pair_id(index: usize) -> String {
    format!("pair_{index:04}")
}

/// Seed of pair `index` in a dataset generated with `seed`.
pub fn dataset_pair_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64, 1)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        writeln!(s, "{} {} {}", e.pair_id, e.seed, e.spec_hash).unwrap();
    }
    s
}

pub fn parse_manifest(text: &str, path: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            msg,
        };
        if toks.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", toks.len())));
        }
        let seed = toks[1].parse().map_err(|_| err(format!("bad seed {:?}", toks[1])))?;
        out.push(ManifestEntry {
            pair_id: toks[0].to_string(),
            seed,
            spec_hash: toks[2].to_string(),
        });
    }
    Ok(out)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    parse_manifest(&read_text(&path)?, &path.display().to_string())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_spec<T: Serialize>(dir: &Path, spec: &T) -> Result<()> {
    let text = toml::to_string(spec).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&dir.join(SPEC_FILE), &text)
}

pub fn image_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}_1.png")), dir.join(format!("{id}_2.png")))
}

pub fn homography_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.H.txt"))
}

pub fn pose_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.pose.txt"))
}

pub fn matches_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.matches.txt"))
}

/// Writes `count` homography pairs (two PNGs and an `H` file each), the
/// spec and the manifest.
pub fn write_homography_dataset(
    dir: &Path,
    spec: &HomographyPairSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    create_dir(dir)?;
    let hash = spec_hash(spec)?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let id = pair_id(i);
        let s = dataset_pair_seed(seed, i);
        let pair = generate_homography_pair(spec, s)?;
        let (p1, p2) = image_paths(dir, &id);
        pair.image1.save_png(&p1)?;
        pair.image2.save_png(&p2)?;
        write_text(&homography_path(dir, &id), &format_homography(&pair.h))?;
        entries.push(ManifestEntry {
            pair_id: id,
            seed: s,
            spec_hash: hash.clone(),
        });
    }
    write_spec(dir, spec)?;
    write_text(&dir.join(MANIFEST), &format_manifest(&entries))?;
    Ok(entries)
}

/// Writes `count` two-view scenes: pixel correspondences as a match file and
/// the ground-truth pose file.
pub fn write_twoview_dataset(
    dir: &Path,
    spec: &TwoViewSceneSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    create_dir(dir)?;
    let hash = spec_hash(spec)?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let id = pair_id(i);
        let s = dataset_pair_seed(seed, i);
        let scene = generate_two_view_scene(spec, s)?;
        let matches: Vec<Match> = scene
            .points1
            .iter()
            .zip(&scene.points2)
            .map(|(&p1, &p2)| Match { p1, p2, score: 1.0 })
            .collect();
        write_text(&matches_path(dir, &id), &format_matches(0, matches.len(), &matches))?;
        let rec = PoseRecord {
            intrinsics: scene.intrinsics,
            pose: scene.pose,
        };
        write_text(&pose_path(dir, &id), &format_pose(&rec))?;
        entries.push(ManifestEntry {
            pair_id: id,
            seed: s,
            spec_hash: hash.clone(),
        });
    }
    write_spec(dir, spec)?;
    write_text(&dir.join(MANIFEST), &format_manifest(&entries))?;
    Ok(entries)
}

/// Loads a homography pair from disk with its dense ground truth.
pub fn load_homography_pair(dir: &Path, id: &str) -> Result<TrainingPair> {
    let (p1, p2) = image_paths(dir, id);
    let image1 = Image::load_png(&p1)?;
    let image2 = Image::load_png(&p2)?;
    let h = load_homography(&homography_path(dir, id))?;
    let field = homography_field(&h, image1.width(), image1.height(), image2.width(), image2.height());
    Ok(TrainingPair { image1, image2, field })
}
