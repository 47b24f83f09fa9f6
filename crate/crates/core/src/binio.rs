//! Little-endian binary reading/writing with byte-offset error reporting,
//! and atomic file replacement.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Upper bound on any single length field, to reject corrupted headers
/// before allocating.
pub(crate) const MAX_LEN: u64 = 1 << 31;

pub(crate) struct BinReader<R> {
    inner: R,
    path: PathBuf,
    offset: u64,
}

impl BinReader<BufReader<File>> {
    pub(crate) fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(BufReader::new(f), path))
    }
}

impl<R: Read> BinReader<R> {
    pub(crate) fn new(inner: R, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
            offset: 0,
        }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        Error::format(&self.path, self.offset, message)
    }

    pub(crate) fn error_at(&self, offset: u64, message: impl Into<String>) -> Error {
        Error::format(&self.path, offset, message)
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(Error::format(
                        &self.path,
                        self.offset + read as u64,
                        format!("truncated payload: unexpected end of file reading {what}"),
                    ))
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io(&self.path, e)),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let mut buf = vec![0u8; magic.len()];
        let start = self.offset;
        self.fill(&mut buf, "magic")?;
        if buf != magic {
            return Err(Error::format(
                &self.path,
                start,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(&buf)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    /// A `u32` length field, bounded by [`MAX_LEN`].
    pub(crate) fn len(&mut self, what: &str) -> Result<usize> {
        let at = self.offset;
        let v = self.u32(what)? as u64;
        if v >= MAX_LEN {
            return Err(Error::format(&self.path, at, format!("implausible {what} {v}")));
        }
        Ok(v as usize)
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.offset;
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        let v = f64::from_le_bytes(b);
        if !v.is_finite() {
            return Err(Error::format(&self.path, at, format!("non-finite {what}")));
        }
        Ok(v)
    }

    /// `n` finite little-endian `f32`s, widened to `f64`.
    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.offset;
        let mut buf = vec![0u8; n * 4];
        self.fill(&mut buf, what)?;
        buf.chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(Error::format(&self.path, start + 4 * i as u64, format!("non-finite float in {what}")))
                }
            })
            .collect()
    }

    /// Errors unless the stream is exhausted.
    pub(crate) fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.error("trailing bytes after payload")),
            Err(e) => Err(Error::io(&self.path, e)),
        }
    }
}

pub(crate) struct BinWriter<W> {
    inner: W,
    path: PathBuf,
}

impl<W: Write> BinWriter<W> {
    pub(crate) fn new(inner: W, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
        }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes).map_err(|e| Error::io(&self.path, e))
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.put(b)
    }

    pub(crate) fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::OutOfRange(format!("{v} does not fit in u32")))?;
        self.put(&v.to_le_bytes())
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub(crate) fn f64(&mut self, v: f64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub(crate) fn f32s(&mut self, vals: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(vals.len() * 4);
        for &v in vals {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.put(&buf)
    }

    pub(crate) fn into_inner(self) -> W {
        self.inner
    }
}

/// Writes `path` via a sibling temporary file and a rename, so readers never
/// observe a partially written file.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        body(&mut w)?;
        let f = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}
