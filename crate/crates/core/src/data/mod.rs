//! Clips, the on-disk dataset layout, preprocessing and the synthetic
//! deforming-myocardium generator.

mod clip;
mod manifest;
mod preprocess;
mod split;
mod synth;

pub use clip::{read_clip, write_clip, Clip, CLIP_MAGIC, CLIP_VERSION};
pub use manifest::{read_manifest, write_manifest, Dataset, ManifestRecord, Split};
pub use preprocess::{
    preprocess, resample_times, resize_bilinear, Normalization, PreprocessConfig, RawVideo,
    TARGET_FRAME_TIME_MS,
};
pub use split::split_dataset;
pub use synth::{
    displacement_ratio, synth_dataset, synth_generate, SynthConfig, APICAL_POINTS, BASAL_POINTS,
};
