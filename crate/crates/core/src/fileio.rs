use std::io::Write;
use std::path::Path;

use crate::error::{GsError, Result};

/// Write `bytes` to a sibling temp file and rename it over `path`, so a
/// failed write never leaves a partial file behind.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| GsError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| GsError::io(path, e))?;
    tmp.flush().map_err(|e| GsError::io(path, e))?;
    tmp.persist(path).map_err(|e| GsError::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_all(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| GsError::io(path, e))
}

/// Little-endian cursor over a byte buffer. Every read names the field it
/// belongs to so truncation errors are precise.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, len: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(GsError::format(
                field,
                format!(
                    "truncated: need {len} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ),
            )),
        }
    }

    pub(crate) fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub(crate) fn u16(&mut self, field: &'static str) -> Result<u16> {
        let b = self.take(2, field)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, field: &'static str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u32_vec(&mut self, count: usize, field: &'static str) -> Result<Vec<u32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| GsError::format(field, "length overflow"))?;
        let raw = self.take(bytes, field)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub(crate) fn f32_vec(&mut self, count: usize, field: &'static str) -> Result<Vec<f32>> {
        Ok(self
            .u32_vec(count, field)?
            .into_iter()
            .map(f32::from_bits)
            .collect())
    }

    pub(crate) fn finish(&self, field: &'static str) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(GsError::format(
                field,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ))
        }
    }
}
