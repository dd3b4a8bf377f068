//! Synthetic dataset, image files and evaluation metrics.

mod dataset;
mod image;
pub mod metrics;
mod synth;

pub use dataset::{
    load_dataset, read_manifest, write_dataset, write_manifest, Dataset, ManifestRow, TestPair, MANIFEST,
};
pub use image::{hstack, Image8};
pub use metrics::{
    lesion_preservation_iou, mae, mask_iou, mse, neighborhood_preservation, pair_scores, psnr, ssim, PairScores,
};
pub use synth::{
    gen_synthetic_dataset, render_b, render_scene, DatasetSplit, Domain, SynthConfig, SyntheticSample, LESION_MAX_B,
    LESION_MIN_A, SIZE_MULTIPLE,
};
