use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::homography::Homography;
use super::pose::{CameraIntrinsics, RelativePose};
use crate::error::{Error, Result};

/// Parses whitespace-separated floats on each non-empty line, with line
/// numbers for error messages.
fn parse_float_lines(text: &str, path: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_string(),
                    line: i + 1,
                    msg: format!("not a number: {t:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((i + 1, vals));
    }
    Ok(out)
}

fn expect_rows(rows: &[(usize, Vec<f64>)], widths: &[usize], path: &str) -> Result<()> {
    if rows.len() != widths.len() {
        return Err(Error::Parse {
            path: path.to_string(),
            line: rows.last().map_or(0, |r| r.0),
            msg: format!("expected {} lines, found {}", widths.len(), rows.len()),
        });
    }
    for ((line, vals), &w) in rows.iter().zip(widths) {
        if vals.len() != w {
            return Err(Error::Parse {
                path: path.to_string(),
                line: *line,
                msg: format!("expected {w} values, found {}", vals.len()),
            });
        }
    }
    Ok(())
}

/// Three lines of three floats.
pub fn format_homography(h: &Homography) -> String {
    let mut s = String::new();
    for row in h.rows() {
        writeln!(s, "{} {} {}", row[0], row[1], row[2]).unwrap();
    }
    s
}

pub fn parse_homography(text: &str, path: &str) -> Result<Homography> {
    let rows = parse_float_lines(text, path)?;
    expect_rows(&rows, &[3, 3, 3], path)?;
    let m = Matrix3::from_fn(|r, c| rows[r].1[c]);
    Homography::new(m)
}

/// Ground truth for one calibrated pair: shared intrinsics and the pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseRecord {
    pub intrinsics: CameraIntrinsics,
    pub pose: RelativePose,
}

/// `fx fy cx cy`, then the three rows of `R`, then `t`.
pub fn format_pose(rec: &PoseRecord) -> String {
    let k = rec.intrinsics;
    let (r, t) = (rec.pose.rotation(), rec.pose.translation());
    let mut s = String::new();
    writeln!(s, "{} {} {} {}", k.fx, k.fy, k.cx, k.cy).unwrap();
    for i in 0..3 {
        writeln!(s, "{} {} {}", r[(i, 0)], r[(i, 1)], r[(i, 2)]).unwrap();
    }
    writeln!(s, "{} {} {}", t.x, t.y, t.z).unwrap();
    s
}

pub fn parse_pose(text: &str, path: &str) -> Result<PoseRecord> {
    let rows = parse_float_lines(text, path)?;
    expect_rows(&rows, &[4, 3, 3, 3, 3], path)?;
    let k = &rows[0].1;
    let wrap = |line: usize, e: Error| match e {
        Error::InvalidArgument(msg) => Error::Parse {
            path: path.to_string(),
            line,
            msg,
        },
        other => other,
    };
    let intrinsics = CameraIntrinsics::new(k[0], k[1], k[2], k[3]).map_err(|e| wrap(rows[0].0, e))?;
    let r = Matrix3::from_fn(|i, j| rows[1 + i].1[j]);
    let t = Vector3::new(rows[4].1[0], rows[4].1[1], rows[4].1[2]);
    let pose = RelativePose::new(r, t).map_err(|e| wrap(rows[1].0, e))?;
    Ok(PoseRecord { intrinsics, pose })
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_homography(path: &Path) -> Result<Homography> {
    parse_homography(&read_text(path)?, &path.display().to_string())
}

pub fn load_pose(path: &Path) -> Result<PoseRecord> {
    parse_pose(&read_text(path)?, &path.display().to_string())
}
