use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use super::mnn::Match;
use crate::diffcore::checkpoint::{read_tensors, write_tensors};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::net::{DescriptorMap, DistinctivenessMap, PairDescription};

/// Parsed contents of a match file.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchFile {
    pub grid: usize,
    pub top_k: usize,
    pub matches: Vec<Match>,
}

const HEADER: &str = "# coam-match v1";

/// Header line, then `x1 y1 x2 y2 score` per match with six decimals.
pub fn format_matches(grid: usize, top_k: usize, matches: &[Match]) -> String {
    let mut s = format!("{HEADER} G={grid} K={top_k}\n");
    for m in matches {
        writeln!(
            s,
            "{:.6} {:.6} {:.6} {:.6} {:.6}",
            m.p1[0], m.p1[1], m.p2[0], m.p2[1], m.score
        )
        .unwrap();
    }
    s
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn header_field(tok: Option<&str>, key: &str, path: &str) -> Result<usize> {
    tok.and_then(|t| t.strip_prefix(key))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(path, 1, format!("header needs {key}<count>")))
}

pub fn parse_matches(text: &str, path: &str) -> Result<MatchFile> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(path, 1, "missing header"))?;
    let rest = header
        .strip_prefix(HEADER)
        .ok_or_else(|| parse_err(path, 1, format!("header must start with {HEADER:?}")))?;
    let mut toks = rest.split_whitespace();
    let grid = header_field(toks.next(), "G=", path)?;
    let top_k = header_field(toks.next(), "K=", path)?;
    let mut matches = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(path, line_no, format!("not a number: {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != 5 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 5 values, found {}", vals.len()),
            ));
        }
        matches.push(Match {
            p1: [vals[0], vals[1]],
            p2: [vals[2], vals[3]],
            score: vals[4],
        });
    }
    Ok(MatchFile { grid, top_k, matches })
}

pub fn load_matches(path: &Path) -> Result<MatchFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matches(&text, &path.display().to_string())
}

/// Writes `D1`, `r1`, `D2`, `r2` in the checkpoint tensor format.
pub fn save_descriptor_dump(desc: &PairDescription, path: &Path) -> Result<()> {
    let tensors = [
        desc.d1.to_tensor(),
        desc.r1.to_tensor(),
        desc.d2.to_tensor(),
        desc.r2.to_tensor(),
    ];
    let names = ["D1", "r1", "D2", "r2"];
    let entries: Vec<(&str, &Tensor)> = names.iter().copied().zip(tensors.iter()).collect();
    let mut buf = Vec::new();
    write_tensors(&mut buf, &entries).map_err(|e| Error::io(path, e))?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Reads a dump written by [`save_descriptor_dump`]: `(D1, r1, D2, r2)`.
pub fn load_descriptor_dump(
    path: &Path,
) -> Result<(DescriptorMap, DistinctivenessMap, DescriptorMap, DistinctivenessMap)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let entries = read_tensors(bytes.as_slice())?;
    let find = |name: &str| {
        entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("descriptor dump lacks {name}")))
    };
    let desc = |t: &Tensor| -> Result<DescriptorMap> {
        match t.shape() {
            &[h, w, d] => DescriptorMap::new(h, w, d, t.data().to_vec()),
            s => Err(Error::Checkpoint(format!("descriptor tensor has shape {s:?}"))),
        }
    };
    let score = |t: &Tensor| -> Result<DistinctivenessMap> {
        match t.shape() {
            &[h, w] => DistinctivenessMap::new(h, w, t.data().to_vec()),
            s => Err(Error::Checkpoint(format!("score tensor has shape {s:?}"))),
        }
    };
    Ok((
        desc(find("D1")?)?,
        score(find("r1")?)?,
        desc(find("D2")?)?,
        score(find("r2")?)?,
    ))
}
