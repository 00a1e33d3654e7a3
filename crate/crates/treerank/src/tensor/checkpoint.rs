//! Binary checkpoint format for named parameter tensors.
//!
//! Layout (all integers little-endian):
//!   magic   b"TRCK"
//!   version u32
//!   count   u32
//!   entries: name_len u32, name bytes (utf-8), rows u64, cols u64,
//!            rows*cols f64 values (IEEE-754 bits, little-endian)
//!
//! Values round-trip bit-exactly; loading restores `value` only (gradients
//! and optimizer state start fresh).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamCollection, Tensor2D};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<C: ParamCollection + ?Sized>(params: &C, path: &Path) -> Result<()> {
    let mut entries: Vec<(String, Tensor2D)> = Vec::new();
    params.for_each_param(&mut |name, p| entries.push((name.to_string(), p.value.clone())));

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, value) in &entries {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(value.rows() as u64).to_le_bytes())?;
        w.write_all(&(value.cols() as u64).to_le_bytes())?;
        for v in value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor2D)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!(
                "{}: implausible tensor name length {name_len}",
                path.display()
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("{}: tensor name is not utf-8", path.display())))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let numel = rows.checked_mul(cols).ok_or_else(|| {
            Error::Format(format!("{}: tensor shape overflows", path.display()))
        })?;
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push((name, Tensor2D::from_flat(rows, cols, data)?));
    }
    Ok(entries)
}

/// Copy loaded tensor values into a collection. Every name in the file must
/// exist in the collection with a matching shape, and every parameter in the
/// collection must be present in the file.
pub fn apply_checkpoint<C: ParamCollection>(
    params: &mut C,
    entries: &[(String, Tensor2D)],
) -> Result<()> {
    let mut expected = params.param_names();
    expected.sort();
    let mut provided: Vec<String> = entries.iter().map(|(n, _)| n.clone()).collect();
    provided.sort();
    if expected != provided {
        return Err(Error::Format(format!(
            "checkpoint names {provided:?} do not match model parameters {expected:?}"
        )));
    }

    let mut shape_err: Option<Error> = None;
    params.for_each_param_mut(&mut |name, p| {
        if shape_err.is_some() {
            return;
        }
        let (_, value) = entries
            .iter()
            .find(|(n, _)| n == name)
            .expect("name membership verified above");
        if value.shape() != p.value.shape() {
            shape_err = Some(Error::Format(format!(
                "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                value.shape(),
                p.value.shape()
            )));
            return;
        }
        p.value = value.clone();
    });
    match shape_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
