//! Model checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes   "SMXMODEL"
//! version    u32       1
//! hdr_len    u32
//! header     hdr_len bytes of UTF-8 JSON: {arch, width, seed, params, buffers}
//! tensors    params then buffers, in declaration order, each as
//!            rank u32, rank × u64 dims, prod(dims) × f64
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::arch::{ArchSpec, Width};
use super::model::ModelGraph;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SMXMODEL";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchSpec,
    width: Width,
    seed: u64,
    params: usize,
    buffers: usize,
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Invalid(format!("checkpoint tensor rank {rank} is implausible")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&shape, data)
}

pub fn write_model(w: &mut impl Write, model: &ModelGraph) -> Result<()> {
    let params = model.params();
    let buffers = model.buffers();
    let header = serde_json::to_vec(&Header {
        arch: model.arch.clone(),
        width: model.width,
        seed: model.seed,
        params: params.len(),
        buffers: buffers.len(),
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for t in params.into_iter().chain(buffers) {
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<ModelGraph> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Invalid("not a model checkpoint (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Invalid(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u32(r)? as usize;
    let mut hdr = vec![0u8; len];
    r.read_exact(&mut hdr)?;
    let header: Header = serde_json::from_slice(&hdr)?;
    let mut model = ModelGraph::skeleton(&header.arch, header.width)?;
    model.seed = header.seed;
    let (np, nb) = (model.params().len(), model.buffers().len());
    if header.params != np || header.buffers != nb {
        return Err(Error::shape("checkpoint tensor counts", &[np, nb], &[header.params, header.buffers]));
    }
    for slot in model.params_mut() {
        let t = read_tensor(r)?;
        if t.shape() != slot.shape() {
            return Err(Error::shape("checkpoint parameter", slot.shape(), t.shape()));
        }
        *slot = t;
    }
    for slot in model.buffers_mut() {
        let t = read_tensor(r)?;
        if t.shape() != slot.shape() {
            return Err(Error::shape("checkpoint buffer", slot.shape(), t.shape()));
        }
        *slot = t;
    }
    Ok(model)
}

pub fn save_model(path: &std::path::Path, model: &ModelGraph) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model(&mut f, model)?;
    f.flush()?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<ModelGraph> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_model(&mut f)
}
