//! `RDMV` embedding files.
//!
//! Layout (little-endian): magic `RDMV`, version `u32` = 1, count `u64`,
//! dim `u32`, dtype `u8` (0 = f32), then `count` records of a
//! `u32`-length-prefixed UTF-8 id followed by `dim` f32 values.

use std::io::Read;
use std::path::Path;

use super::Embedding;
use crate::binio::{put_f32s, put_string, put_u32, put_u64, write_atomic, ByteReader};
use crate::error::{RdmError, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"RDMV";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
/// Norm deviation above which a loaded vector is reported, not just fixed.
const WARN_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEmbeddings {
    pub dim: usize,
    pub records: Vec<(String, Embedding)>,
    /// Ids whose stored norm deviated from 1 by more than 1e-3.
    pub warnings: Vec<String>,
}

pub fn encode_embeddings<'a>(
    dim: usize,
    records: impl ExactSizeIterator<Item = (&'a str, &'a Embedding)>,
) -> Result<Vec<u8>> {
    encode_raw(dim, records.map(|(id, e)| (id, e.as_slice())))
}

pub(crate) fn encode_raw<'a>(
    dim: usize,
    records: impl ExactSizeIterator<Item = (&'a str, &'a [f32])>,
) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(21 + records.len() * (dim * 4 + 12));
    out.extend_from_slice(EMBEDDING_MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, records.len() as u64);
    put_u32(&mut out, dim as u32);
    out.push(DTYPE_F32);
    for (id, v) in records {
        if v.len() != dim {
            return Err(RdmError::contract(format!(
                "record {id} has dim {}, file dim is {dim}",
                v.len()
            )));
        }
        put_string(&mut out, id);
        put_f32s(&mut out, v.iter().copied());
    }
    Ok(out)
}

pub fn decode_embeddings<R: Read>(reader: R, file: &str) -> Result<LoadedEmbeddings> {
    let mut r = ByteReader::new(reader, file);
    r.magic(EMBEDDING_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let count = r.u64()?;
    let dim = r.u32()? as usize;
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(r.error(format!("unsupported dtype {dtype}")));
    }
    if dim == 0 && count > 0 {
        return Err(r.error("declared dim is 0 but records are present"));
    }
    let mut records = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut warnings = Vec::new();
    for _ in 0..count {
        let id = r.string()?;
        let at = r.offset();
        let values = r.f32s(dim)?;
        let (e, norm) = Embedding::coerce(values).map_err(|_| RdmError::Format {
            file: file.to_string(),
            offset: at,
            reason: format!("record {id} has zero or non-finite norm"),
        })?;
        if (norm - 1.0).abs() > WARN_TOL {
            log::warn!("{file}: record {id} had norm {norm:.6}, renormalized");
            warnings.push(id.clone());
        }
        records.push((id, e));
    }
    r.expect_eof()?;
    Ok(LoadedEmbeddings {
        dim,
        records,
        warnings,
    })
}

pub fn save_embedding_file(path: &Path, dim: usize, records: &[(String, Embedding)]) -> Result<()> {
    let bytes = encode_embeddings(dim, records.iter().map(|(id, e)| (id.as_str(), e)))?;
    write_atomic(path, &bytes)
}

pub fn load_embedding_file(path: &Path) -> Result<LoadedEmbeddings> {
    let file = std::fs::File::open(path).map_err(|e| RdmError::io(path, e))?;
    decode_embeddings(std::io::BufReader::new(file), &path.display().to_string())
}
