//! Binary tensor cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CLFC" | u8 version | u8 rank | rank × u32 dims | f32 payload | u32 meta_len | meta JSON
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"CLFC";
pub const CACHE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheMeta {
    pub prompt_digest: String,
    pub extractor_version: String,
    /// Producer-specific annotations (grid, source fingerprint, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub meta: CacheMeta,
}

impl FeatureCache {
    pub fn new(shape: Vec<usize>, data: Vec<f32>, meta: CacheMeta) -> Result<Self> {
        let cache = FeatureCache { shape, data, meta };
        cache.check_shape().map_err(Error::Shape)?;
        Ok(cache)
    }

    fn check_shape(&self) -> std::result::Result<(), String> {
        if self.shape.is_empty() || self.shape.len() > u8::MAX as usize {
            return Err(format!("rank {} outside 1..=255", self.shape.len()));
        }
        if self.shape.iter().any(|&d| d > u32::MAX as usize) {
            return Err(format!("dimension in {:?} exceeds u32", self.shape));
        }
        let count: usize = self.shape.iter().product();
        if count != self.data.len() {
            return Err(format!(
                "shape {:?} holds {count} elements but data has {}",
                self.shape,
                self.data.len()
            ));
        }
        Ok(())
    }
}

pub fn encode_cache(cache: &FeatureCache) -> Result<Vec<u8>> {
    cache.check_shape().map_err(Error::Shape)?;
    let meta = serde_json::to_vec(&cache.meta).expect("meta serializes");
    let mut out =
        Vec::with_capacity(6 + 4 * cache.shape.len() + 4 * cache.data.len() + 4 + meta.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.push(CACHE_VERSION);
    out.push(cache.shape.len() as u8);
    for &d in &cache.shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &cache.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!("truncated: need {n} bytes at offset {}, file has {}", self.pos, self.bytes.len())
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_cache(bytes: &[u8]) -> std::result::Result<FeatureCache, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4).map_err(|_| "bad magic".to_string())? != CACHE_MAGIC {
        return Err("bad magic".into());
    }
    let version = cur.take(1)?[0];
    if version != CACHE_VERSION {
        return Err(format!("version mismatch: file has {version}, expected {CACHE_VERSION}"));
    }
    let rank = cur.take(1)?[0] as usize;
    if rank == 0 {
        return Err("rank 0 tensor".into());
    }
    let shape = (0..rank)
        .map(|_| cur.u32().map(|d| d as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("shape overflows")?;
    let payload = cur.take(count.checked_mul(4).ok_or("shape overflows")?).map_err(|e| {
        format!("shape/length mismatch: shape {shape:?} needs {count} values ({e})")
    })?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let meta_len = cur.u32()? as usize;
    let meta_bytes = cur.take(meta_len)?;
    if cur.pos != bytes.len() {
        return Err(format!(
            "shape/length mismatch: {} trailing bytes",
            bytes.len() - cur.pos
        ));
    }
    let meta: CacheMeta =
        serde_json::from_slice(meta_bytes).map_err(|e| format!("bad meta block: {e}"))?;
    Ok(FeatureCache { shape, data, meta })
}

/// Write atomically: the payload goes to a sibling temp file that is then
/// renamed over `path`.
pub fn write_cache(cache: &FeatureCache, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cache(cache)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::ErrorKind::NotFound.into()));
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<FeatureCache> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes).map_err(|message| Error::Cache {
        path: path.to_path_buf(),
        message,
    })
}

/// Read only the header and metadata block, seeking over the payload.
pub fn read_cache_meta(path: impl AsRef<Path>) -> Result<(Vec<usize>, CacheMeta)> {
    use std::io::{Read, Seek, SeekFrom};
    let path = path.as_ref();
    let bad = |message: String| Error::Cache { path: path.to_path_buf(), message };
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut head = [0u8; 6];
    f.read_exact(&mut head).map_err(|_| bad("bad magic".into()))?;
    if &head[..4] != CACHE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    if head[4] != CACHE_VERSION {
        return Err(bad(format!("version mismatch: file has {}, expected {CACHE_VERSION}", head[4])));
    }
    let rank = head[5] as usize;
    let mut dims = vec![0u8; 4 * rank];
    f.read_exact(&mut dims).map_err(|e| bad(format!("truncated header: {e}")))?;
    let shape: Vec<usize> = dims.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
    let count: u64 = shape.iter().map(|&d| d as u64).product();
    let meta_at = 6 + 4 * rank as u64 + 4 * count;
    if meta_at + 4 > file_len {
        return Err(bad(format!("shape/length mismatch: shape {shape:?} exceeds file length {file_len}")));
    }
    f.seek(SeekFrom::Start(meta_at)).map_err(|e| Error::io(path, e))?;
    let mut len = [0u8; 4];
    f.read_exact(&mut len).map_err(|e| Error::io(path, e))?;
    let meta_len = u32::from_le_bytes(len) as u64;
    if meta_at + 4 + meta_len != file_len {
        return Err(bad("shape/length mismatch: metadata block length".into()));
    }
    let mut meta = vec![0u8; meta_len as usize];
    f.read_exact(&mut meta).map_err(|e| Error::io(path, e))?;
    let meta = serde_json::from_slice(&meta).map_err(|e| bad(format!("bad meta block: {e}")))?;
    Ok((shape, meta))
}

/// Read a cache and refuse it unless it was produced under `prompt_digest`.
pub fn read_cache_expecting(path: impl AsRef<Path>, prompt_digest: &str) -> Result<FeatureCache> {
    let cache = read_cache(path)?;
    if cache.meta.prompt_digest != prompt_digest {
        return Err(Error::DigestMismatch {
            expected: prompt_digest.to_string(),
            found: cache.meta.prompt_digest,
        });
    }
    Ok(cache)
}
