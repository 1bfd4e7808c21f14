//! Little-endian binary containers for models, features and embeddings.
//!
//! All model files share one envelope: the magic `SVKM1`, a version byte,
//! and a four-byte type tag identifying the payload. Feature caches use the
//! `SVKF1` magic and embedding archives `SVKE1`. Every writer goes through
//! [`atomic_write`] so an interrupted process never leaves a partial file.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const MODEL_MAGIC: &[u8; 5] = b"SVKM1";
pub const FEATURE_MAGIC: &[u8; 5] = b"SVKF1";
pub const EMBEDDING_MAGIC: &[u8; 5] = b"SVKE1";
pub const MODEL_VERSION: u8 = 1;

/// Payload tags inside the `SVKM1` envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Enhancer,
    Ubm,
    IVector,
    Lda,
    XVector,
    Plda,
}

impl ModelKind {
    pub fn tag(self) -> &'static [u8; 4] {
        match self {
            ModelKind::Enhancer => b"AENH",
            ModelKind::Ubm => b"GUBM",
            ModelKind::IVector => b"TVEX",
            ModelKind::Lda => b"LDAP",
            ModelKind::XVector => b"XVEC",
            ModelKind::Plda => b"PLDA",
        }
    }

    pub fn from_tag(tag: &[u8; 4]) -> Option<Self> {
        match tag {
            b"AENH" => Some(ModelKind::Enhancer),
            b"GUBM" => Some(ModelKind::Ubm),
            b"TVEX" => Some(ModelKind::IVector),
            b"LDAP" => Some(ModelKind::Lda),
            b"XVEC" => Some(ModelKind::XVector),
            b"PLDA" => Some(ModelKind::Plda),
            _ => None,
        }
    }
}

/// Write `path` atomically: the payload goes to a sibling temp file which is
/// renamed over the target only after a successful flush.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp: PathBuf = dir.join(format!(".{}.tmp-{}", stem, std::process::id()));
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    match write(&mut w).and_then(|_| {
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        w.get_ref().sync_all().map_err(|e| Error::io(&tmp, e))
    }) {
        Ok(()) => std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e)),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub struct BinWriter<'a, W: Write> {
    inner: &'a mut W,
    path: PathBuf,
}

impl<'a, W: Write> BinWriter<'a, W> {
    pub fn new(inner: &'a mut W, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
        }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.put(b)
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.put(&[v])
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f64_slice(&mut self, v: &[f64]) -> Result<()> {
        for &x in v {
            self.f64(x)?;
        }
        Ok(())
    }

    pub fn f32_slice(&mut self, v: &[f32]) -> Result<()> {
        for &x in v {
            self.f32(x)?;
        }
        Ok(())
    }

    /// Length-prefixed UTF-8 string.
    pub fn string(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        self.put(s.as_bytes())
    }

    /// Model envelope: magic, version, type tag.
    pub fn model_header(&mut self, kind: ModelKind) -> Result<()> {
        self.bytes(MODEL_MAGIC)?;
        self.u8(MODEL_VERSION)?;
        self.bytes(kind.tag())
    }
}

pub struct BinReader<R: Read> {
    inner: R,
    path: PathBuf,
}

impl BinReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            inner: BufReader::new(file),
            path: path.to_path_buf(),
        })
    }
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
        }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::io(&self.path, e))?;
        Ok(buf)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take::<4>()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take::<8>()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take::<4>()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take::<8>()?))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        (0..n).map(|_| self.f32()).collect()
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::io(&self.path, e))?;
        String::from_utf8(buf).map_err(|_| self.malformed("string is not valid UTF-8"))
    }

    pub fn malformed(&self, detail: impl Into<String>) -> Error {
        Error::malformed(&self.path, detail)
    }

    /// Check the model envelope and return the payload kind.
    pub fn model_header(&mut self) -> Result<ModelKind> {
        let magic = self.take::<5>()?;
        if &magic != MODEL_MAGIC {
            return Err(self.malformed("bad magic, not a model file"));
        }
        let version = self.u8()?;
        if version != MODEL_VERSION {
            return Err(self.malformed(format!("unsupported model version {version}")));
        }
        let tag = self.take::<4>()?;
        ModelKind::from_tag(&tag)
            .ok_or_else(|| self.malformed(format!("unknown model type tag {:?}", tag)))
    }

    /// Check the envelope and require a specific payload kind.
    pub fn expect_model(&mut self, want: ModelKind) -> Result<()> {
        let got = self.model_header()?;
        if got != want {
            return Err(self.malformed(format!("expected {:?} model, found {:?}", want, got)));
        }
        Ok(())
    }
}
