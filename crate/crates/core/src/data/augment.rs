//! Training-time augmentation: random crops, horizontal flips, additive
//! Gaussian noise, and an optional Gaussian blur.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::raster::{EdgeGroundTruth, RasterImage};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Top-left corner of a square crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchCorner {
    pub x: usize,
    pub y: usize,
}

/// Draws `count` uniformly random in-bounds corners for `size × size` crops.
pub fn sample_patch_corners(width: usize, height: usize, count: usize, size: usize, seed: u64) -> Result<Vec<PatchCorner>> {
    if size == 0 || size > width || size > height {
        return Err(Error::invalid(
            "sample_patches",
            format!("patch size {size} does not fit a {width}x{height} image; pad it first"),
        ));
    }
    let mut rng = rng_for(seed, &[0x7061_7463]);
    Ok((0..count)
        .map(|_| PatchCorner { x: rng.random_range(0..=width - size), y: rng.random_range(0..=height - size) })
        .collect())
}

/// Crops `count` congruent image/ground-truth patch pairs.
pub fn sample_patches(
    image: &RasterImage,
    gt: &EdgeGroundTruth,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<(RasterImage, EdgeGroundTruth)>> {
    if (image.width, image.height) != (gt.width, gt.height) {
        return Err(Error::invalid(
            "sample_patches",
            format!("image {}x{} vs ground truth {}x{}", image.width, image.height, gt.width, gt.height),
        ));
    }
    Ok(sample_patch_corners(image.width, image.height, count, size, seed)?
        .into_iter()
        .map(|c| (image.crop(c.x, c.y, size, size), gt.crop(c.x, c.y, size, size)))
        .collect())
}

fn flip_rows<V: Copy>(data: &mut [V], width: usize) {
    data.chunks_mut(width).for_each(|row| row.reverse());
}

/// Mirrors both rasters left-right when `coin` is set.
pub fn hflip(mut patch: RasterImage, mut gt: EdgeGroundTruth, coin: bool) -> (RasterImage, EdgeGroundTruth) {
    if coin {
        flip_rows(&mut patch.data, patch.width);
        flip_rows(&mut gt.data, gt.width);
    }
    (patch, gt)
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation `std`
/// (intensity scale `[0, 1]`) to every sample, then clamps to `[0, 1]`.
pub fn add_gaussian_noise(patch: &RasterImage, std: f64, seed: u64) -> RasterImage {
    let mut out = patch.clone();
    if std <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut rng = rng_for(seed, &[0x6e6f_6973]);
    for v in &mut out.data {
        *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Separable Gaussian blur with reflected borders, radius `ceil(3 sigma)`.
pub fn gaussian_blur(patch: &RasterImage, sigma: f64) -> RasterImage {
    if sigma <= 0.0 {
        return patch.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let (w, h) = (patch.width as isize, patch.height as isize);
    let refl = |i: isize, n: isize| -> usize {
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut out = patch.clone();
    let mut tmp = vec![0.0f64; (w * h) as usize];
    for c in 0..patch.channels {
        let plane = &patch.data[c * (w * h) as usize..(c + 1) * (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                tmp[(y * w + x) as usize] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * plane[(y * w) as usize + refl(x + k as isize - r, w)] as f64)
                    .sum::<f64>()
                    / norm;
            }
        }
        let dst = &mut out.data[c * (w * h) as usize..(c + 1) * (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                let v: f64 =
                    taps.iter().enumerate().map(|(k, t)| t * tmp[refl(y + k as isize - r, h) * w as usize + x as usize]).sum();
                dst[(y * w + x) as usize] = (v / norm).clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> RasterImage {
        RasterImage::new(w, h, 3, (0..3 * w * h).map(|i| (i % 97) as f32 / 96.0).collect()).unwrap()
    }

    #[test]
    fn full_size_patches_are_copies() {
        let img = ramp(8, 8);
        let gt = EdgeGroundTruth::new(8, 8, (0..64).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        let patches = sample_patches(&img, &gt, 5, 8, 1).unwrap();
        assert_eq!(patches.len(), 5);
        assert!(patches.iter().all(|(p, g)| *p == img && *g == gt));
    }

    #[test]
    fn corners_stay_in_bounds_and_are_seeded() {
        let c = sample_patch_corners(40, 30, 500, 16, 9).unwrap();
        assert!(c.iter().all(|p| p.x + 16 <= 40 && p.y + 16 <= 30));
        assert_eq!(c, sample_patch_corners(40, 30, 500, 16, 9).unwrap());
        assert_ne!(c, sample_patch_corners(40, 30, 500, 16, 10).unwrap());
        assert!(sample_patch_corners(10, 30, 1, 16, 0).is_err());
    }

    #[test]
    fn patches_are_congruent() {
        let img = ramp(20, 12);
        let gt = EdgeGroundTruth::new(20, 12, (0..240).map(|i| (i % 7 == 0) as u8).collect()).unwrap();
        for ((p, g), c) in sample_patches(&img, &gt, 10, 6, 3).unwrap().iter().zip(sample_patch_corners(20, 12, 10, 6, 3).unwrap()) {
            assert_eq!(*p, img.crop(c.x, c.y, 6, 6));
            assert_eq!(*g, gt.crop(c.x, c.y, 6, 6));
        }
    }

    #[test]
    fn flip_mirrors_both_and_is_an_involution() {
        let img = ramp(5, 3);
        let mut gt = EdgeGroundTruth::empty(5, 3);
        gt.data[5 + 1] = 1; // (y=1, x=1)
        let (fi, fg) = hflip(img.clone(), gt.clone(), true);
        assert!(fg.get(1, 3) && fg.count() == 1);
        assert_eq!(fi.get(2, 0, 0), img.get(2, 0, 4));
        let (bi, bg) = hflip(fi, fg, true);
        assert_eq!((bi, bg), (img.clone(), gt.clone()));
        assert_eq!(hflip(img.clone(), gt.clone(), false), (img, gt));
    }

    #[test]
    fn noise_is_clamped_seeded_and_zero_std_is_identity() {
        let img = ramp(16, 16);
        assert_eq!(add_gaussian_noise(&img, 0.0, 5), img);
        let a = add_gaussian_noise(&img, 0.5, 5);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, add_gaussian_noise(&img, 0.5, 5));
        assert_ne!(a, add_gaussian_noise(&img, 0.5, 6));
    }

    #[test]
    fn blur_keeps_constants() {
        let img = RasterImage::filled(9, 7, 3, 0.4);
        let b = gaussian_blur(&img, 1.5);
        assert!(b.data.iter().all(|v| (v - 0.4).abs() < 1e-6));
    }
}
