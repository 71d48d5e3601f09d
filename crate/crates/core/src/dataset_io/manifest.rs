use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

const HEADER: [&str; 3] = ["video_id", "path", "mos"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub video_id: String,
    /// Resolved against the manifest's directory when relative.
    pub path: PathBuf,
    pub mos: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, video_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }

    pub fn mos(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.mos).collect()
    }

    /// Subset in the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }
}

/// Load a `video_id,path,mos` CSV and check every manifest invariant.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Manifest {
            path: path.to_path_buf(),
            message: "file not found".into(),
        },
        _ => Error::io(path, e),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = parse_manifest(&text, base).map_err(|message| Error::Manifest {
        path: path.to_path_buf(),
        message,
    })?;
    for (line, entry) in manifest.entries.iter().enumerate() {
        if !entry.path.exists() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                message: format!(
                    "video path {} does not exist at line {}",
                    entry.path.display(),
                    line + 2
                ),
            });
        }
    }
    Ok(manifest)
}

/// Parse manifest text. Relative paths are joined onto `base`. Path
/// existence is not checked here.
pub fn parse_manifest(text: &str, base: &Path) -> std::result::Result<DatasetManifest, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(format!("malformed header at line 1: {e}")),
        None => return Err("empty manifest, expected header `video_id,path,mos`".into()),
    };
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields != HEADER {
        return Err(format!(
            "bad header at line 1: expected `video_id,path,mos`, found `{}`",
            fields.join(",")
        ));
    }

    let mut entries = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            format!("malformed row at line {line}: {e}")
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(format!(
                "malformed row at line {line}: expected 3 fields, found {}",
                record.len()
            ));
        }
        let video_id = record[0].trim();
        let video_path = record[1].trim();
        let mos_text = record[2].trim();
        if video_id.is_empty() {
            return Err(format!("empty video_id at line {line}"));
        }
        if video_path.is_empty() {
            return Err(format!("empty path at line {line}"));
        }
        let mos: f64 = mos_text
            .parse()
            .map_err(|_| format!("non-numeric mos `{mos_text}` at line {line}"))?;
        if !mos.is_finite() {
            return Err(format!("non-finite mos at line {line}"));
        }
        if let Some(first) = seen.insert(video_id.to_string(), line) {
            return Err(format!(
                "duplicate video_id `{video_id}` at lines {first} and {line}"
            ));
        }
        let p = PathBuf::from(video_path);
        let path = if p.is_absolute() { p } else { base.join(p) };
        entries.push(ManifestEntry {
            video_id: video_id.to_string(),
            path,
            mos,
        });
    }
    Ok(DatasetManifest { entries })
}
