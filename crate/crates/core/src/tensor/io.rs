//! Binary tensor files.
//!
//! Layout: magic `MWT1`, `u8` rank, little-endian `u32` extents, then the
//! row-major payload as little-endian `f32`. Values are stored at f32
//! regardless of the in-memory element type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Elem, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"MWT1";

const MAX_RANK: u8 = 8;

pub fn write_tensor_to<T: Elem, W: Write>(t: &Tensor<T>, w: &mut W) -> Result<()> {
    let rank = t.shape().len();
    if rank > MAX_RANK as usize {
        return Err(Error::data(format!("tensor rank {rank} exceeds format limit")));
    }
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[rank as u8])?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::data("tensor extent exceeds u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&(v.to64() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor_from<R: Read>(r: &mut R) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::data(format!("bad tensor magic {magic:?}")));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)?;
    if rank[0] > MAX_RANK {
        return Err(Error::data(format!("tensor rank {} out of range", rank[0])));
    }
    let mut shape = Vec::with_capacity(rank[0] as usize);
    let mut numel: usize = 1;
    for _ in 0..rank[0] {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        let d = u32::from_le_bytes(buf) as usize;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::data("tensor extent product overflows"))?;
        shape.push(d);
    }
    let mut payload = vec![0u8; numel * 4];
    r.read_exact(&mut payload)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(data, &shape)
}

pub fn write_tensor<T: Elem>(t: &Tensor<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor_to(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor_from(&mut r)
}
