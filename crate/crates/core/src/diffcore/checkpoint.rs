//! Binary tensor container shared by parameter checkpoints and descriptor
//! dumps.
//!
//! Layout, little-endian throughout: magic `COAMCKPT`, version `u32`, count
//! `u32`, then per entry: name length `u16`, UTF-8 name, rank `u8`, dims as
//! `u32`, values as `f32` row-major.

use std::io::{Read, Write};
use std::path::Path;

use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"COAMCKPT";
pub const VERSION: u32 = 1;

pub fn write_tensors<W: Write>(mut w: W, entries: &[(&str, &Tensor)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

fn take<const N: usize>(buf: &[u8], pos: &mut usize) -> Result<[u8; N]> {
    let end = *pos + N;
    let bytes = buf
        .get(*pos..end)
        .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", *pos)))?;
    *pos = end;
    Ok(bytes.try_into().expect("slice length"))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut pos = 0;
    let magic: [u8; 8] = take(&buf, &mut pos)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&buf, &mut pos)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&buf, &mut pos)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(take(&buf, &mut pos)?) as usize;
        let name_bytes = buf
            .get(pos..pos + len)
            .ok_or_else(|| Error::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name_bytes.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        pos += len;
        let rank = take::<1>(&buf, &mut pos)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&buf, &mut pos)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f32::from_le_bytes(take(&buf, &mut pos)?) as f64);
        }
        let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - pos)));
    }
    Ok(out)
}

/// Writes every parameter value of `store` in insertion order.
pub fn save_params(store: &ParamStore, path: &Path) -> Result<()> {
    let entries: Vec<(&str, &Tensor)> = store.iter().map(|(_, p)| (p.name.as_str(), &p.value)).collect();
    let mut bytes = Vec::new();
    write_tensors(&mut bytes, &entries).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads values into an existing store by name. Every parameter in `store`
/// must be present with a matching shape.
pub fn load_params(store: &mut ParamStore, path: &Path) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let entries = read_tensors(std::io::BufReader::new(file))?;
    for p in store.iter_mut() {
        let (_, t) = entries
            .iter()
            .find(|(n, _)| *n == p.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?} does not match {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t.clone();
    }
    Ok(())
}
