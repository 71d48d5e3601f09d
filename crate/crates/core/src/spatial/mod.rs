//! Low-level spatial branch: fragment sampling, a pluggable backbone, a
//! 1×1×1 convolution head and flattening.

mod backbone;
mod fragments;
mod head;

pub use backbone::{
    backbone_features, build_backbone, prepare_patches, Backbone, BackboneOutput, PreparedClip, StubBackbone,
    TinyBackbone, BACKBONE_STRIDE, PATCH_FRAMES, POOL,
};
pub use fragments::{sample_fragments, splice_fragments, FragmentClip, FragmentPlan, FragmentSpec};
pub use head::{flatten, ConvHead, ConvHeadTrace, SpatialFeatures};
