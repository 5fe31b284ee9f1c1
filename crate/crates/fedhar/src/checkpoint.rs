//! Model checkpoint file format.
//!
//! Layout: an 8-byte magic string, a u32 format version, a u32 tensor count,
//! then a shape table (per tensor: u32 rank followed by u32 dimensions), then
//! the tensor payloads as row-major 64-bit little-endian floats, in the fixed
//! order conv_w, conv_b, fc1_w, fc1_b, out_w, out_b. All integers are
//! little-endian.

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{Arch, ModelParams};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FHARCKPT";
const VERSION: u32 = 1;
const TENSOR_COUNT: usize = 6;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn save(p: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(TENSOR_COUNT as u32).to_le_bytes())?;
    for t in p.tensors() {
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for t in p.tensors() {
        for v in t.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams, CheckpointError> {
    let bytes = fs::read(path)?;
    let mut cur = io::Cursor::new(bytes.as_slice());

    let mut magic = [0u8; 8];
    read(&mut cur, &mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic string".into()));
    }
    let version = read_u32(&mut cur)?;
    if version != VERSION {
        return Err(CheckpointError::Corrupt(format!(
            "unsupported format version {version}"
        )));
    }
    let count = read_u32(&mut cur)? as usize;
    if count != TENSOR_COUNT {
        return Err(CheckpointError::Corrupt(format!(
            "expected {TENSOR_COUNT} tensors, found {count}"
        )));
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(&mut cur)? as usize;
        if rank > 4 {
            return Err(CheckpointError::Corrupt(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut cur)? as usize);
        }
        shapes.push(shape);
    }

    let arch = arch_from_shapes(&shapes)?;

    let mut tensors = Vec::with_capacity(count);
    for shape in shapes {
        let n: usize = shape.iter().product();
        let mut values = vec![0.0; n];
        let mut buf = [0u8; 8];
        for v in &mut values {
            read(&mut cur, &mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let t = Tensor::new(shape, values);
        if !t.all_finite() {
            return Err(CheckpointError::Corrupt("non-finite parameter value".into()));
        }
        tensors.push(t);
    }
    if cur.position() != bytes.len() as u64 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }

    let mut it = tensors.into_iter();
    Ok(ModelParams {
        arch,
        conv_w: it.next().unwrap(),
        conv_b: it.next().unwrap(),
        fc1_w: it.next().unwrap(),
        fc1_b: it.next().unwrap(),
        out_w: it.next().unwrap(),
        out_b: it.next().unwrap(),
    })
}

/// Reconstruct the architecture from the shape table. The window geometry
/// (128 samples, pool width 4) is fixed crate-wide, which makes the shapes
/// unambiguous.
fn arch_from_shapes(shapes: &[Vec<usize>]) -> Result<Arch, CheckpointError> {
    let bad = |msg: &str| CheckpointError::Corrupt(format!("shape table: {msg}"));
    let conv_w = shapes[0].as_slice();
    if conv_w.len() != 3 {
        return Err(bad("conv_w must be rank 3"));
    }
    let (filters, kernel, channels) = (conv_w[0], conv_w[1], conv_w[2]);
    let fc1_w = shapes[2].as_slice();
    if fc1_w.len() != 2 {
        return Err(bad("fc1_w must be rank 2"));
    }
    let (hidden, flat) = (fc1_w[0], fc1_w[1]);
    let out_w = shapes[4].as_slice();
    if out_w.len() != 2 {
        return Err(bad("out_w must be rank 2"));
    }
    let classes = out_w[0];

    let arch = Arch {
        filters,
        hidden,
        kernel,
        pool: Arch::PAPER.pool,
        input_len: Arch::PAPER.input_len,
        channels,
        classes,
    };
    if kernel == 0 || kernel > arch.input_len || filters == 0 || hidden == 0 {
        return Err(bad("degenerate dimensions"));
    }
    if flat != arch.flat_dim() {
        return Err(bad(&format!(
            "fc1 input {} inconsistent with {} filters over the window",
            flat, filters
        )));
    }
    if out_w[1] != hidden {
        return Err(bad("out_w width differs from hidden size"));
    }
    let expect: [(usize, Vec<usize>); 3] = [
        (1, vec![filters]),
        (3, vec![hidden]),
        (5, vec![classes]),
    ];
    for (i, shape) in expect {
        if shapes[i] != shape {
            return Err(bad(&format!("bias tensor {i} has shape {:?}", shapes[i])));
        }
    }
    Ok(arch)
}

fn read(cur: &mut io::Cursor<&[u8]>, buf: &mut [u8]) -> Result<(), CheckpointError> {
    cur.read_exact(buf)
        .map_err(|_| CheckpointError::Corrupt("unexpected end of file".into()))
}

fn read_u32(cur: &mut io::Cursor<&[u8]>) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    read(cur, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
