//! `RDMW` parameter files.
//!
//! Layout (little-endian): magic `RDMW`, version `u32`, count `u32`, then per
//! parameter a `u32`-length-prefixed UTF-8 name, rank `u8`, `rank` × `u32`
//! dims, and the values as `f32`.

use std::io::Read;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::binio::{put_f32s, put_string, put_u32, write_atomic, ByteReader};
use crate::error::{RdmError, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"RDMW";
pub const PARAMS_VERSION: u32 = 1;

pub fn encode_params(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 4);
    out.extend_from_slice(PARAMS_MAGIC);
    put_u32(&mut out, PARAMS_VERSION);
    put_u32(&mut out, params.len() as u32);
    for (name, t) in params.iter() {
        put_string(&mut out, name);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        put_f32s(&mut out, t.data().iter().map(|&v| v as f32));
    }
    out
}

pub fn decode_params<R: Read>(reader: R, file: &str) -> Result<ParamStore> {
    let mut r = ByteReader::new(reader, file);
    r.magic(PARAMS_MAGIC)?;
    let version = r.u32()?;
    if version != PARAMS_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let at = r.offset();
        let name = r.string()?;
        let rank = r.u8()? as usize;
        if rank == 0 {
            return Err(r.error(format!("parameter {name} has rank 0")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape.contains(&0) {
            return Err(r.error(format!("parameter {name} has a zero dimension")));
        }
        let n: usize = shape.iter().product();
        let values = r.f32s(n)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(r.error(format!("parameter {name} holds non-finite values")));
        }
        let t = Tensor::new(shape, values.into_iter().map(f64::from).collect())?;
        store.insert(name.clone(), t).map_err(|_| RdmError::Format {
            file: file.to_string(),
            offset: at,
            reason: format!("duplicate parameter {name}"),
        })?;
    }
    r.expect_eof()?;
    Ok(store)
}

pub fn save_params(params: &ParamStore, path: &Path) -> Result<()> {
    write_atomic(path, &encode_params(params))
}

pub fn load_params(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| RdmError::io(path, e))?;
    decode_params(&bytes[..], &path.display().to_string())
}
