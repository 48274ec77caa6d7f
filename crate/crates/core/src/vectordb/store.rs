use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ivf::IvfIndex;
use super::{IvfParams, VectorDatabase};
use crate::binio::{open_sealed_json, put_u32, seal_json, sha256_hex, write_dir_atomic, ByteReader};
use crate::embedding::decode_embeddings;
use crate::embedding::file::encode_raw;
use crate::error::{RdmError, Result};

const META: &str = "meta.json";
const VECTORS: &str = "vectors.rdmv";
const PAYLOADS: &str = "payloads.bin";
const INDEX: &str = "index.rdmi";
const FORMAT: &str = "rdm-vectordb";
const PAYLOAD_MAGIC: &[u8; 4] = b"RDMP";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatabaseMeta {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub dim: usize,
    pub count: usize,
    pub index: Option<IvfParams>,
    /// sha256 of every data file, keyed by file name.
    pub checksums: BTreeMap<String, String>,
}

fn encode_payloads(db: &VectorDatabase) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PAYLOAD_MAGIC);
    put_u32(&mut out, db.len() as u32);
    for p in &db.payloads {
        put_u32(&mut out, p.len() as u32);
        out.extend_from_slice(p);
    }
    out
}

fn decode_payloads(bytes: &[u8], file: &str, count: usize) -> Result<Vec<Vec<u8>>> {
    let mut r = ByteReader::new(bytes, file);
    r.magic(PAYLOAD_MAGIC)?;
    let n = r.u32()? as usize;
    if n != count {
        return Err(r.error(format!("{n} payloads for {count} records")));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        if len > bytes.len() {
            return Err(r.error(format!("payload length {len} exceeds file size")));
        }
        out.push(r.bytes(len)?);
    }
    r.expect_eof()?;
    Ok(out)
}

/// Writes `meta.json`, `vectors.rdmv`, `payloads.bin` and (when indexed)
/// `index.rdmi` into `dir`, replacing it atomically.
pub fn save_database(db: &VectorDatabase, dir: &Path) -> Result<()> {
    let mut files: Vec<(&str, Vec<u8>)> = vec![
        (
            VECTORS,
            encode_raw(
                db.dim,
                db.ids.iter().enumerate().map(|(i, id)| (id.as_str(), db.vector(i))),
            )?,
        ),
        (PAYLOADS, encode_payloads(db)),
    ];
    if let Some(ix) = &db.index {
        files.push((INDEX, ix.to_bytes()));
    }
    let meta = DatabaseMeta {
        format: FORMAT.into(),
        version: 1,
        name: db.name.clone(),
        dim: db.dim,
        count: db.len(),
        index: db.index.as_ref().map(|ix| *ix.params()),
        checksums: files
            .iter()
            .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
            .collect(),
    };
    let meta_json = seal_json(&meta)?;
    write_dir_atomic(dir, |tmp| {
        for (name, bytes) in files.iter().map(|(n, b)| (*n, b)).chain([(META, &meta_json)]) {
            let path = tmp.join(name);
            std::fs::write(&path, bytes).map_err(|e| RdmError::io(&path, e))?;
        }
        Ok(())
    })
}

fn format_error(file: &Path, reason: impl Into<String>) -> RdmError {
    RdmError::Format {
        file: file.display().to_string(),
        offset: 0,
        reason: reason.into(),
    }
}

fn read_checked(dir: &Path, name: &str, meta: &DatabaseMeta) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let expected = meta
        .checksums
        .get(name)
        .ok_or_else(|| format_error(&dir.join(META), format!("no checksum for {name}")))?;
    let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => format_error(&path, "missing file"),
        _ => RdmError::io(&path, e),
    })?;
    let found = sha256_hex(&bytes);
    if &found != expected {
        return Err(RdmError::Checksum {
            file: path.display().to_string(),
            expected: expected.clone(),
            found,
        });
    }
    Ok(bytes)
}

/// Loads a database written by [`save_database`], verifying checksums.
pub fn load_database(dir: &Path) -> Result<VectorDatabase> {
    let meta_path = dir.join(META);
    let meta_bytes = std::fs::read(&meta_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => format_error(&meta_path, "missing file"),
        _ => RdmError::io(&meta_path, e),
    })?;
    let meta: DatabaseMeta = open_sealed_json(&meta_bytes, &meta_path.display().to_string())?;
    if meta.format != FORMAT || meta.version != 1 {
        return Err(format_error(
            &meta_path,
            format!("unsupported format {} v{}", meta.format, meta.version),
        ));
    }

    let vec_path = dir.join(VECTORS);
    let vec_file = vec_path.display().to_string();
    let loaded = decode_embeddings(&read_checked(dir, VECTORS, &meta)?[..], &vec_file)?;
    if loaded.dim != meta.dim || loaded.records.len() != meta.count {
        return Err(format_error(
            &vec_path,
            format!(
                "holds {} × {}, metadata says {} × {}",
                loaded.records.len(),
                loaded.dim,
                meta.count,
                meta.dim
            ),
        ));
    }
    let pay_file = dir.join(PAYLOADS).display().to_string();
    let payloads = decode_payloads(&read_checked(dir, PAYLOADS, &meta)?, &pay_file, meta.count)?;

    let mut ids = Vec::with_capacity(meta.count);
    let mut vectors = Vec::with_capacity(meta.count * meta.dim);
    let mut seen = std::collections::HashSet::with_capacity(meta.count);
    for (id, e) in loaded.records {
        if !seen.insert(id.clone()) {
            return Err(format_error(&vec_path, format!("duplicate id {id}")));
        }
        vectors.extend_from_slice(e.as_slice());
        ids.push(id);
    }
    let mut db = VectorDatabase::from_parts(meta.name.clone(), meta.dim, ids, vectors, payloads);

    if let Some(params) = meta.index {
        let ix_file = dir.join(INDEX).display().to_string();
        let ix = IvfIndex::from_reader(&read_checked(dir, INDEX, &meta)?[..], &ix_file, db.dim, &db.vectors)?;
        if *ix.params() != params {
            return Err(format_error(&dir.join(INDEX), "index parameters disagree with metadata"));
        }
        db.attach_index(ix);
    }
    Ok(db)
}
