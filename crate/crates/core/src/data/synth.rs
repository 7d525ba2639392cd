//! Synthetic dataset: anti-aliased ellipses and convex polygons over a
//! textured background, with ground truth derived from the exact label map.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::groundtruth::{boundary_pixels, thin};
use crate::data::manifest::{DatasetManifest, ManifestEntry, Split, MAX_DIST_BSDS};
use crate::data::raster::{EdgeGroundTruth, RasterImage, SegmentationMap};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// A filled shape in pixel coordinates; pixel `(x, y)` covers `[x, x+1) × [y, y+1)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Polygon { vertices: Vec<(f64, f64)> },
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = (c * dx + s * dy) / rx;
                let v = (-s * dx + c * dy) / ry;
                u * u + v * v <= 1.0
            }
            Shape::Polygon { vertices } => {
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let (xi, yi) = vertices[i];
                    let (xj, yj) = vertices[(i + n - 1) % n];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    /// Euclidean distance from `(x, y)` to the shape outline. Ellipses are
    /// measured against a dense polyline, accurate to a few hundredths of a pixel.
    pub fn boundary_distance(&self, x: f64, y: f64) -> f64 {
        let seg = |(ax, ay): (f64, f64), (bx, by): (f64, f64)| {
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 == 0.0 { 0.0 } else { (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0) };
            ((ax + t * dx - x).powi(2) + (ay + t * dy - y).powi(2)).sqrt()
        };
        let outline = self.outline();
        let n = outline.len();
        (0..n).map(|i| seg(outline[i], outline[(i + 1) % n])).fold(f64::INFINITY, f64::min)
    }

    fn outline(&self) -> Vec<(f64, f64)> {
        match self {
            Shape::Polygon { vertices } => vertices.clone(),
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (s, c) = angle.sin_cos();
                (0..4096)
                    .map(|i| {
                        let t = 2.0 * PI * i as f64 / 4096.0;
                        let (u, v) = (rx * t.cos(), ry * t.sin());
                        (cx + c * u - s * v, cy + s * u + c * v)
                    })
                    .collect()
            }
        }
    }
}

/// One generated sample with its exact geometry.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub image: RasterImage,
    pub segmentation: SegmentationMap,
    pub gt: EdgeGroundTruth,
    pub shapes: Vec<Shape>,
}

const SUPERSAMPLE: usize = 4;

fn random_shape(rng: &mut ChaCha8Rng, size: f64) -> Shape {
    let cx = rng.random_range(0.2..0.8) * size;
    let cy = rng.random_range(0.2..0.8) * size;
    let r = rng.random_range(0.14..0.3) * size;
    if rng.random_bool(0.5) {
        Shape::Ellipse { cx, cy, rx: r, ry: r * rng.random_range(0.5..1.0), angle: rng.random_range(0.0..PI) }
    } else {
        let n = rng.random_range(3..=6);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        angles.sort_by(f64::total_cmp);
        // Keep the polygon convex-ish and non-degenerate: enforce a minimum angular gap.
        for i in 1..n {
            if angles[i] - angles[i - 1] < 0.5 {
                angles[i] = angles[i - 1] + 0.5;
            }
        }
        let vertices = angles
            .iter()
            .filter(|&&a| a < angles[0] + 2.0 * PI - 0.5)
            .map(|a| {
                let rr = r * rng.random_range(0.75..1.0);
                (cx + rr * a.cos(), cy + rr * a.sin())
            })
            .collect::<Vec<_>>();
        if vertices.len() < 3 {
            Shape::Ellipse { cx, cy, rx: r, ry: r, angle: 0.0 }
        } else {
            Shape::Polygon { vertices }
        }
    }
}

/// Distinct brightness levels, one per region, so every boundary has contrast.
const LEVELS: [f64; 4] = [0.15, 0.38, 0.62, 0.85];

fn tinted(rng: &mut ChaCha8Rng, level: f64) -> [f64; 3] {
    [0, 1, 2].map(|_| (level + rng.random_range(-0.06..0.06)).clamp(0.0, 1.0))
}

/// Generates one `size × size` sample. Deterministic in `seed`.
pub fn synth_sample(size: usize, seed: u64) -> SynthSample {
    let mut rng = rng_for(seed, &[0x7379_6e74]);
    let sz = size as f64;
    let n_shapes = rng.random_range(2..=3);
    let shapes: Vec<Shape> = (0..n_shapes).map(|_| random_shape(&mut rng, sz)).collect();
    let mut levels = LEVELS;
    levels.shuffle(&mut rng);
    let palette: Vec<[f64; 3]> = levels[..=n_shapes].iter().map(|&l| tinted(&mut rng, l)).collect();
    // Low-frequency texture shared by all regions plus fine grain per pixel.
    let freq = (rng.random_range(0.05..0.2), rng.random_range(0.05..0.2));
    let phase = rng.random_range(0.0..2.0 * PI);
    let amp = 0.05;

    let label_at = |x: f64, y: f64| -> usize {
        shapes.iter().enumerate().rev().find(|(_, s)| s.contains(x, y)).map_or(0, |(i, _)| i + 1)
    };

    let plane = size * size;
    let mut labels = vec![0u32; plane];
    let mut data = vec![0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            labels[y * size + x] = label_at(x as f64 + 0.5, y as f64 + 0.5) as u32;
            let mut acc = [0.0f64; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    let c = palette[label_at(px, py)];
                    acc.iter_mut().zip(c).for_each(|(a, v)| *a += v);
                }
            }
            let texture = amp * (freq.0 * x as f64 + freq.1 * y as f64 + phase).sin();
            let grain: f64 = rng.random_range(-0.02..0.02);
            for (c, a) in acc.iter().enumerate() {
                let v = a / (SUPERSAMPLE * SUPERSAMPLE) as f64 + texture + grain;
                data[c * plane + y * size + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    let segmentation = SegmentationMap { width: size, height: size, labels };
    let gt = thin(&boundary_pixels(&segmentation));
    SynthSample { image: RasterImage { width: size, height: size, channels: 3, data }, segmentation, gt, shapes }
}

/// `n` samples of `size × size`, sample `i` seeded from `(seed, i)`.
pub fn synth_samples(n: usize, size: usize, seed: u64) -> Vec<SynthSample> {
    (0..n).map(|i| synth_sample(size, crate::seed::derive_seed(seed, &[i as u64]))).collect()
}

/// Writes `n` samples under `dir` (`images/synth_XXX.png`, `gt/synth_XXX.png`)
/// plus `dir/manifest.txt`, and returns the manifest.
pub fn synth_dataset(n: usize, size: usize, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::invalid("synth_dataset", "need at least one image"));
    }
    if size == 0 {
        return Err(Error::invalid("synth_dataset", "image size must be positive"));
    }
    for sub in ["images", "gt"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(n);
    for (i, s) in synth_samples(n, size, seed).into_iter().enumerate() {
        let entry = ManifestEntry {
            image: dir.join("images").join(format!("synth_{i:03}.png")),
            gt: dir.join("gt").join(format!("synth_{i:03}.png")),
        };
        s.image.write(&entry.image)?;
        s.gt.write(&entry.gt)?;
        entries.push(entry);
    }
    let manifest = DatasetManifest { split: Split::Train, max_dist: MAX_DIST_BSDS, entries };
    manifest.write(&dir.join("manifest.txt"))?;
    Ok(manifest)
}
