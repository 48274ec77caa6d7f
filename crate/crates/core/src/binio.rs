//! Little-endian readers/writers shared by the binary file formats.

use std::io::{Read, Write};

use crate::error::{RdmError, Result};

/// Reader that tracks its byte offset so format errors can point at it.
pub(crate) struct ByteReader<R> {
    inner: R,
    offset: u64,
    file: String,
}

impl<R: Read> ByteReader<R> {
    pub fn new(inner: R, file: impl Into<String>) -> Self {
        Self {
            inner,
            offset: 0,
            file: file.into(),
        }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn error(&self, reason: impl Into<String>) -> RdmError {
        RdmError::Format {
            file: self.file.clone(),
            offset: self.offset,
            reason: reason.into(),
        }
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    self.offset += read as u64;
                    return Err(self.error(format!(
                        "unexpected end of file ({} of {} bytes)",
                        read,
                        buf.len()
                    )));
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(self.error(e.to_string())),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let start = self.offset;
        let mut buf = [0u8; 4];
        self.fill(&mut buf)?;
        if &buf != expected {
            self.offset = start;
            return Err(self.error(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&buf),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.bytes(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let start = self.offset;
        let raw = self.bytes(len)?;
        String::from_utf8(raw).map_err(|_| RdmError::Format {
            file: self.file.clone(),
            offset: start,
            reason: "invalid UTF-8 string".into(),
        })
    }

    /// Fails unless the stream is exhausted.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.error("trailing bytes after last record")),
            Err(e) => Err(self.error(e.to_string())),
        }
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub(crate) fn write_all<W: Write>(mut w: W, bytes: &[u8], path: &std::path::Path) -> Result<()> {
    w.write_all(bytes).map_err(|e| RdmError::io(path, e))?;
    w.flush().map_err(|e| RdmError::io(path, e))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

const DIGEST_FIELD: &[u8] = b",\n  \"digest\": \"";
const DIGEST_END: &[u8] = b"\"\n}";

/// Pretty JSON for `value` with a trailing top-level `digest`: the SHA-256 of
/// the whole file with the digest itself zeroed.
pub(crate) fn seal_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)
        .map_err(|e| RdmError::Build(format!("cannot serialize metadata: {e}")))?;
    if !out.ends_with(b"\n}") {
        return Err(RdmError::Build("sealed metadata must be a non-empty object".into()));
    }
    out.truncate(out.len() - 2);
    out.extend_from_slice(DIGEST_FIELD);
    let at = out.len();
    out.extend_from_slice(&[b'0'; 64]);
    out.extend_from_slice(DIGEST_END);
    let digest = sha256_hex(&out);
    out[at..at + 64].copy_from_slice(digest.as_bytes());
    Ok(out)
}

/// Verifies and parses a file written by [`seal_json`].
pub(crate) fn open_sealed_json<T: serde::de::DeserializeOwned>(bytes: &[u8], file: &str) -> Result<T> {
    let bad = |offset: usize, reason: &str| RdmError::Format {
        file: file.to_string(),
        offset: offset as u64,
        reason: reason.to_string(),
    };
    let tail = DIGEST_FIELD.len() + 64 + DIGEST_END.len();
    if bytes.len() < tail || !bytes.ends_with(DIGEST_END) {
        return Err(bad(bytes.len(), "missing digest"));
    }
    let start = bytes.len() - tail;
    if &bytes[start..start + DIGEST_FIELD.len()] != DIGEST_FIELD {
        return Err(bad(start, "missing digest"));
    }
    let at = start + DIGEST_FIELD.len();
    let stored = String::from_utf8_lossy(&bytes[at..at + 64]).into_owned();
    let mut zeroed = bytes.to_vec();
    zeroed[at..at + 64].fill(b'0');
    let found = sha256_hex(&zeroed);
    if stored != found {
        return Err(RdmError::Checksum { file: file.to_string(), expected: stored, found });
    }
    let mut body = bytes[..start].to_vec();
    body.extend_from_slice(b"\n}");
    serde_json::from_slice(&body).map_err(|e| bad(0, &format!("invalid metadata: {e}")))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| std::path::Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| RdmError::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let file = std::fs::File::create(&tmp).map_err(|e| RdmError::io(&tmp, e))?;
    write_all(std::io::BufWriter::new(file), bytes, &tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| RdmError::io(path, e))
}

/// Replaces directory `dest` with the contents produced by `fill` in a
/// temporary sibling directory.
pub fn write_dir_atomic(
    dest: &std::path::Path,
    fill: impl FnOnce(&std::path::Path) -> Result<()>,
) -> Result<()> {
    let parent = dest.parent().unwrap_or_else(|| std::path::Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| RdmError::io(parent, e))?;
    let name = dest
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| RdmError::io(&tmp, e))?;
    }
    std::fs::create_dir_all(&tmp).map_err(|e| RdmError::io(&tmp, e))?;
    if let Err(e) = fill(&tmp) {
        let _ = std::fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dest.exists() {
        let old = parent.join(format!(".{name}.old-{}", std::process::id()));
        std::fs::rename(dest, &old).map_err(|e| RdmError::io(dest, e))?;
        std::fs::rename(&tmp, dest).map_err(|e| RdmError::io(dest, e))?;
        let _ = std::fs::remove_dir_all(&old);
    } else {
        std::fs::rename(&tmp, dest).map_err(|e| RdmError::io(dest, e))?;
    }
    Ok(())
}
