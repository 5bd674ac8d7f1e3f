//! Sequence I/O and seeded synthetic fixtures: procedural textures,
//! irregular masks, affine pairs and evaluation videos.

mod io;
mod masks;
mod pair;
mod texture;
mod video;

pub use io::{
    dequantize, frame_file_name, image_from_rgb8, image_to_rgb8, load_frames, load_image,
    load_mask, load_masks, load_sequence, mask_from_gray8, mask_to_gray8, quantize, save_frames,
    save_image, save_mask, save_masks, save_sequence, Sequence, SequenceSpec, FRAMES_DIR, MANIFEST,
    MASKS_DIR,
};
pub use masks::{
    dilate_mask, gen_irregular_mask, gen_mask_with_fraction, random_affine_mask, MaskGenParams,
    FRACTION_ATTEMPTS,
};
pub use pair::{
    gen_affine_pair, gen_masked_pair, sample_theta, AffinePair, MaskedPair, ThetaRange,
};
pub use texture::ProceduralTexture;
pub use video::{
    composite_eval_video, reflect_index, translating_video, SyntheticVideo, TranslatingVideoParams,
};
