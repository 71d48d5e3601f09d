use ndarray::{Array4, ArrayView3};

/// Per-channel normalization constants of the CLIP image tower.
pub const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_1];

/// `[H, W, 3]` raster in `[0, 1]` to a normalized `[1, 3, H, W]` batch.
pub fn image_to_nchw(block: ArrayView3<f32>) -> Array4<f32> {
    let (h, w, _) = block.dim();
    Array4::from_shape_fn((1, 3, h, w), |(_, c, y, x)| (block[[y, x, c]] - CLIP_MEAN[c]) / CLIP_STD[c])
}
