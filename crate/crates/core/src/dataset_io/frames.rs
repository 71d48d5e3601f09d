use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use ndarray::Array3;

use crate::{Error, Result};

/// RGB raster `[height, width, 3]` with values in `[0, 1]`.
pub type Frame = Array3<f32>;

/// Frame rate assumed for directories of numbered images, which carry no
/// timing information of their own.
pub const DIRECTORY_FPS: f64 = 25.0;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalSpec {
    All,
    UniformCount(usize),
}

#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    /// Seconds, one per frame.
    pub timestamps: Vec<f64>,
    pub source_id: String,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, timestamps: Vec<f64>, source_id: impl Into<String>) -> Result<Self> {
        let seq = FrameSequence {
            frames,
            timestamps,
            source_id: source_id.into(),
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Frames at [`DIRECTORY_FPS`].
    pub fn from_frames(frames: Vec<Frame>, source_id: impl Into<String>) -> Result<Self> {
        let timestamps = (0..frames.len()).map(|i| i as f64 / DIRECTORY_FPS).collect();
        Self::new(frames, timestamps, source_id)
    }

    fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::Invalid(format!("{}: frame sequence is empty", self.source_id)));
        };
        if first.dim().2 != 3 {
            return Err(Error::Shape(format!("frames must have 3 channels, found {}", first.dim().2)));
        }
        if let Some((i, f)) = self.frames.iter().enumerate().find(|(_, f)| f.dim() != first.dim()) {
            return Err(Error::Shape(format!(
                "frame {i} is {:?}, frame 0 is {:?}",
                f.dim(),
                first.dim()
            )));
        }
        if self.timestamps.len() != self.frames.len() {
            return Err(Error::Shape("one timestamp per frame required".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` shared by every frame.
    pub fn size(&self) -> (usize, usize) {
        let (h, w, _) = self.frames[0].dim();
        (h, w)
    }
}

/// Indices `round(k·(total−1)/(count−1))`; the middle frame when `count == 1`.
pub fn uniform_indices(total: usize, count: usize) -> Vec<usize> {
    assert!(total >= 1 && count >= 1 && count <= total);
    if count == 1 {
        return vec![((total - 1) as f64 / 2.0).round() as usize];
    }
    (0..count)
        .map(|k| (k as f64 * (total - 1) as f64 / (count - 1) as f64).round() as usize)
        .collect()
}

fn select_indices(total: usize, spec: TemporalSpec, source: &Path) -> Result<Vec<usize>> {
    match spec {
        TemporalSpec::All => Ok((0..total).collect()),
        TemporalSpec::UniformCount(0) => Err(Error::Invalid("uniform_count needs N >= 1".into())),
        TemporalSpec::UniformCount(n) if n > total => {
            log::warn!(
                "{}: requested {n} frames but only {total} available, using all",
                source.display()
            );
            Ok((0..total).collect())
        }
        TemporalSpec::UniformCount(n) => Ok(uniform_indices(total, n)),
    }
}

/// Decode a video given either as a directory of numbered images or as a
/// container file (through an external `ffmpeg`).
pub fn decode_frames(video: impl AsRef<Path>, spec: TemporalSpec) -> Result<FrameSequence> {
    let video = video.as_ref();
    let source_id = video
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if video.is_dir() {
        decode_directory(video, spec, source_id)
    } else {
        decode_container(video, spec, source_id)
    }
}

fn frame_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort_by(|a, b| frame_number(a).cmp(&frame_number(b)).then_with(|| a.cmp(b)));
    Ok(files)
}

fn decode_directory(dir: &Path, spec: TemporalSpec, source_id: String) -> Result<FrameSequence> {
    let files = list_frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::Decode {
            path: dir.to_path_buf(),
            message: "directory holds no image frames".into(),
        });
    }
    let indices = select_indices(files.len(), spec, dir)?;
    let frames = indices
        .iter()
        .map(|&i| load_image(&files[i]))
        .collect::<Result<Vec<_>>>()?;
    let timestamps = indices.iter().map(|&i| i as f64 / DIRECTORY_FPS).collect();
    FrameSequence::new(frames, timestamps, source_id)
}

fn load_image(path: &Path) -> Result<Frame> {
    let img = image::open(path)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Ok(Array3::from_shape_vec((h as usize, w as usize, 3), data).expect("rgb8 buffer size"))
}

/// Write a frame as an 8-bit PNG (values are clamped and rounded).
pub fn write_frame_png(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = frame.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, found {c}")));
    }
    let bytes: Vec<u8> = frame
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer size");
    img.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

struct StreamInfo {
    width: usize,
    height: usize,
    fps: f64,
}

fn probe_stream(path: &Path) -> Result<StreamInfo> {
    let fail = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let out = Command::new("ffprobe")
        .args([
            "-v",
            "error",
            "-select_streams",
            "v:0",
            "-show_entries",
            "stream=width,height,avg_frame_rate",
            "-of",
            "csv=p=0",
        ])
        .arg(path)
        .output()
        .map_err(|e| fail(format!("cannot run ffprobe: {e}")))?;
    if !out.status.success() {
        return Err(fail(String::from_utf8_lossy(&out.stderr).trim().to_string()));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let parts: Vec<&str> = text.trim().split(',').collect();
    if parts.len() < 3 {
        return Err(fail(format!("unexpected ffprobe output `{}`", text.trim())));
    }
    let width = parts[0].parse().map_err(|_| fail("bad width".into()))?;
    let height = parts[1].parse().map_err(|_| fail("bad height".into()))?;
    let fps = match parts[2].split_once('/') {
        Some((n, d)) => {
            let (n, d): (f64, f64) = (n.parse().unwrap_or(0.0), d.parse().unwrap_or(1.0));
            if d > 0.0 { n / d } else { 0.0 }
        }
        None => parts[2].parse().unwrap_or(0.0),
    };
    Ok(StreamInfo {
        width,
        height,
        fps: if fps > 0.0 { fps } else { DIRECTORY_FPS },
    })
}

fn decode_container(path: &Path, spec: TemporalSpec, source_id: String) -> Result<FrameSequence> {
    if !path.exists() {
        return Err(Error::io(path, std::io::ErrorKind::NotFound.into()));
    }
    let info = probe_stream(path)?;
    let fail = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let mut child = Command::new("ffmpeg")
        .args(["-nostdin", "-v", "error", "-i"])
        .arg(path)
        .args(["-map", "0:v:0", "-vsync", "passthrough", "-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| fail(format!("cannot run ffmpeg: {e}")))?;
    let mut raw = Vec::new();
    child
        .stdout
        .take()
        .expect("piped stdout")
        .read_to_end(&mut raw)
        .map_err(|e| Error::io(path, e))?;
    let status = child.wait().map_err(|e| Error::io(path, e))?;
    if !status.success() {
        return Err(fail(format!("ffmpeg exited with {status}")));
    }
    let frame_bytes = info.width * info.height * 3;
    if frame_bytes == 0 || raw.len() < frame_bytes {
        return Err(fail("no decodable frames".into()));
    }
    let total = raw.len() / frame_bytes;
    let indices = select_indices(total, spec, path)?;
    let frames = indices
        .iter()
        .map(|&i| {
            let data = raw[i * frame_bytes..(i + 1) * frame_bytes]
                .iter()
                .map(|&v| v as f32 / 255.0)
                .collect();
            Array3::from_shape_vec((info.height, info.width, 3), data).expect("frame size")
        })
        .collect();
    let timestamps = indices.iter().map(|&i| i as f64 / info.fps).collect();
    FrameSequence::new(frames, timestamps, source_id)
}
