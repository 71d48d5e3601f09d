//! Dataset ingestion: MOS manifests, frame decoding and the binary feature
//! cache shared by every stage of the pipeline.

mod cache;
mod frames;
mod manifest;

pub use cache::{
    decode_cache, encode_cache, read_cache, read_cache_expecting, read_cache_meta, write_cache, CacheMeta,
    FeatureCache, CACHE_MAGIC, CACHE_VERSION,
};
pub use frames::{
    decode_frames, uniform_indices, write_frame_png, Frame, FrameSequence, TemporalSpec,
    DIRECTORY_FPS,
};
pub use manifest::{load_manifest, parse_manifest, DatasetManifest, ManifestEntry};
