use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::binio::{put_f32s, put_u32, put_u64, write_atomic, ByteReader};
use crate::error::{RdmError, Result};
use crate::numerics::Tensor;

pub const SAMPLES_MAGIC: &[u8; 4] = b"RDMS";
const VERSION: u32 = 1;

/// `RDMS` bytes for `[count, ...shape]` samples, stored as f32.
pub fn encode_samples(samples: &Tensor) -> Result<Vec<u8>> {
    let Some((&count, shape)) = samples.shape().split_first() else {
        return Err(RdmError::contract("samples need a leading count axis"));
    };
    if shape.is_empty() {
        return Err(RdmError::contract("samples need a per-sample shape"));
    }
    let mut out = Vec::with_capacity(24 + samples.len() * 4);
    out.extend_from_slice(SAMPLES_MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, count as u64);
    put_u32(&mut out, shape.len() as u32);
    for &d in shape {
        put_u32(&mut out, d as u32);
    }
    put_f32s(&mut out, samples.data().iter().map(|&x| x as f32));
    Ok(out)
}

pub fn decode_samples<R: Read>(reader: R, file: &str) -> Result<Tensor> {
    let mut r = ByteReader::new(reader, file);
    r.magic(SAMPLES_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let count = r.u64()? as usize;
    let rank = r.u32()? as usize;
    if rank == 0 || rank > 8 {
        return Err(r.error(format!("invalid sample rank {rank}")));
    }
    let mut shape = vec![count];
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n <= 1 << 32)
        .ok_or_else(|| r.error("sample shape too large"))?;
    let data = r.f32s(n)?;
    if data.iter().any(|x| !x.is_finite()) {
        return Err(r.error("non-finite sample value"));
    }
    r.expect_eof()?;
    Tensor::new(shape, data.into_iter().map(f64::from).collect())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `path` and, when given, metadata to `<path>.json`.
pub fn save_samples<M: Serialize>(path: &Path, samples: &Tensor, metadata: Option<&M>) -> Result<()> {
    write_atomic(path, &encode_samples(samples)?)?;
    if let Some(m) = metadata {
        let json = serde_json::to_vec_pretty(m)
            .map_err(|e| RdmError::Build(format!("cannot serialize sample metadata: {e}")))?;
        write_atomic(&sidecar(path), &json)?;
    }
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Tensor> {
    let f = std::fs::File::open(path).map_err(|e| RdmError::io(path, e))?;
    decode_samples(std::io::BufReader::new(f), &path.display().to_string())
}
