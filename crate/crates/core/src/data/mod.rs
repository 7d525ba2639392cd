//! Ground-truth generation, augmentation, rasters, manifests, and the
//! synthetic dataset generator.

pub mod augment;
pub mod groundtruth;
pub mod manifest;
pub mod raster;
pub mod synth;

pub use augment::{add_gaussian_noise, gaussian_blur, hflip, sample_patch_corners, sample_patches, PatchCorner};
pub use groundtruth::{boundary_pixels, overlay_annotations, thin};
pub use manifest::{DatasetManifest, ManifestEntry, Split, MAX_DIST_BSDS, MAX_DIST_NYUD};
pub use raster::{EdgeGroundTruth, EdgeMap, RasterImage, SegmentationMap};
pub use synth::{synth_dataset, synth_sample, synth_samples, Shape, SynthSample};
