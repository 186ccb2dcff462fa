//! Flat binary caching for precomputed tables.
//!
//! Tables are pure functions of the trap geometry, so a file keyed by a
//! magic tag plus integer metadata is enough: if the metadata matches, the
//! payload is the table. Anything malformed is treated as a miss and
//! rebuilt, never trusted.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const VERSION: u32 = 1;

/// Write raw payload bytes under a magic tag and integer metadata key.
pub fn write_bytes(path: &Path, magic: [u8; 4], meta: &[u64], data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut buf =
        Vec::with_capacity(4 + 4 + 8 + meta.len() * 8 + 8 + data.len());
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    for &m in meta {
        buf.extend_from_slice(&m.to_le_bytes());
    }
    buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
    buf.extend_from_slice(data);
    // Write to a sibling then rename so a crash cannot leave a torn file
    // that parses.
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a payload written by `write_bytes`. Returns it only when the magic,
/// version, and metadata all match.
pub fn read_bytes(path: &Path, magic: [u8; 4], meta: &[u64]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let fail = |what: &str| Error::Cache(format!("{}: {what}", path.display()));
    let mut at = 0usize;
    if take(&buf, &mut at, 4).ok_or_else(|| fail("truncated"))? != magic {
        return Err(fail("wrong magic"));
    }
    if read_u32(&buf, &mut at).ok_or_else(|| fail("truncated"))? != VERSION {
        return Err(fail("wrong version"));
    }
    let n_meta = read_u64(&buf, &mut at).ok_or_else(|| fail("truncated"))? as usize;
    if n_meta != meta.len() {
        return Err(fail("metadata shape mismatch"));
    }
    for &want in meta {
        if read_u64(&buf, &mut at).ok_or_else(|| fail("truncated"))? != want {
            return Err(fail("metadata mismatch"));
        }
    }
    let n_data = read_u64(&buf, &mut at).ok_or_else(|| fail("truncated"))? as usize;
    if n_data != buf.len() - at {
        return Err(fail("payload length mismatch"));
    }
    Ok(buf[at..].to_vec())
}

pub fn write_table(path: &Path, magic: [u8; 4], meta: &[u64], data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for &d in data {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    write_bytes(path, magic, meta, &bytes)
}

/// Read a table written by `write_table`. Returns the payload only when the
/// magic, version, and metadata all match.
pub fn read_table(path: &Path, magic: [u8; 4], meta: &[u64]) -> Result<Vec<f64>> {
    let bytes = read_bytes(path, magic, meta)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Cache(format!("{}: payload length mismatch", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

fn take<'a>(buf: &'a [u8], at: &mut usize, n: usize) -> Option<&'a [u8]> {
    let end = at.checked_add(n)?;
    if end > buf.len() {
        return None;
    }
    let s = &buf[*at..end];
    *at = end;
    Some(s)
}

fn read_u32(buf: &[u8], at: &mut usize) -> Option<u32> {
    take(buf, at, 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

fn read_u64(buf: &[u8], at: &mut usize) -> Option<u64> {
    take(buf, at, 8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tbl");
        let meta = [3u64, 99];
        let data = [0.25f64, -1.5e-300, f64::MAX];
        write_table(&path, *b"TST1", &meta, &data).unwrap();
        let back = read_table(&path, *b"TST1", &meta).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn mismatched_key_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tbl");
        write_table(&path, *b"TST1", &[7], &[1.0]).unwrap();
        assert!(read_table(&path, *b"TST2", &[7]).is_err());
        assert!(read_table(&path, *b"TST1", &[8]).is_err());
        assert!(read_table(&path, *b"TST1", &[7, 7]).is_err());
    }

    #[test]
    fn raw_bytes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.tbl");
        let data = [7u8, 0, 255, 3, 1];
        write_bytes(&path, *b"RAW1", &[42], &data).unwrap();
        assert_eq!(read_bytes(&path, *b"RAW1", &[42]).unwrap(), data);
        assert!(read_bytes(&path, *b"RAW1", &[41]).is_err());
    }

    #[test]
    fn truncated_file_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tbl");
        write_table(&path, *b"TST1", &[1], &[1.0, 2.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_table(&path, *b"TST1", &[1]).is_err());
    }
}
