//! Binary policy checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   b"OVARPOL\0"
//! version      u32       1
//! arrays       u32       number of arrays (4)
//! per array:
//!   name_len   u16
//!   name       name_len bytes, UTF-8
//!   ndim       u32
//!   dims       ndim x u32
//!   values     prod(dims) x f64
//! ```
//!
//! Arrays, in order: `temperature [1]`, `tool_logits [3, 4]`,
//! `rank_weights [4]`, `match_weights [3]`. Values are raw IEEE-754 bits, so a
//! save/load cycle is lossless.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{PolicyParams, MATCH_DIM, NUM_BUCKETS, NUM_TOOLS, RANK_DIM};

const MAGIC: &[u8; 8] = b"OVARPOL\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a policy checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("unexpected array {name:?} with shape {dims:?}")]
    Shape { name: String, dims: Vec<u32> },
    #[error("checkpoint contains non-finite or invalid parameters")]
    Invalid,
}

fn put_array<W: Write>(w: &mut W, name: &str, dims: &[u32], values: &[f64]) -> io::Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(params: &PolicyParams, mut w: W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&4u32.to_le_bytes())?;
    put_array(&mut w, "temperature", &[1], &[params.temperature])?;
    let tools: Vec<f64> = params.tool_logits.iter().flatten().copied().collect();
    put_array(&mut w, "tool_logits", &[NUM_BUCKETS as u32, NUM_TOOLS as u32], &tools)?;
    put_array(&mut w, "rank_weights", &[RANK_DIM as u32], &params.rank_weights)?;
    put_array(&mut w, "match_weights", &[MATCH_DIM as u32], &params.match_weights)?;
    w.flush()
}

fn u16_of<R: Read>(r: &mut R) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn u32_of<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn f64_of<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<PolicyParams, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32_of(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = u32_of(&mut r)?;
    let mut params = PolicyParams::uniform();
    let mut seen = 0u8;
    for _ in 0..count {
        let len = u16_of(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8_lossy(&name).into_owned();
        let ndim = u32_of(&mut r)? as usize;
        if ndim > 4 {
            return Err(CheckpointError::Shape { name, dims: vec![] });
        }
        let dims = (0..ndim).map(|_| u32_of(&mut r)).collect::<io::Result<Vec<u32>>>()?;
        let expected: &[u32] = match name.as_str() {
            "temperature" => &[1],
            "tool_logits" => &[NUM_BUCKETS as u32, NUM_TOOLS as u32],
            "rank_weights" => &[RANK_DIM as u32],
            "match_weights" => &[MATCH_DIM as u32],
            _ => &[],
        };
        if expected.is_empty() || dims != expected {
            return Err(CheckpointError::Shape { name, dims });
        }
        let n: u32 = dims.iter().product();
        let values = (0..n).map(|_| f64_of(&mut r)).collect::<io::Result<Vec<f64>>>()?;
        match name.as_str() {
            "temperature" => {
                params.temperature = values[0];
                seen |= 1;
            }
            "tool_logits" => {
                for (b, row) in params.tool_logits.iter_mut().enumerate() {
                    row.copy_from_slice(&values[b * NUM_TOOLS..(b + 1) * NUM_TOOLS]);
                }
                seen |= 2;
            }
            "rank_weights" => {
                params.rank_weights.copy_from_slice(&values);
                seen |= 4;
            }
            _ => {
                params.match_weights.copy_from_slice(&values);
                seen |= 8;
            }
        }
    }
    if seen != 0b1111 || !params.is_finite() {
        return Err(CheckpointError::Invalid);
    }
    Ok(params)
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> io::Result<()> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
