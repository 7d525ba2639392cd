//! Raster types and their file formats.
//!
//! Images and ground truths are stored as 8-bit PNGs. Edge maps are stored
//! either as 8-bit grayscale PNGs (confidence = value / 255) or as raw float
//! files: the ASCII header line `REDNET-EDGE f32 <width> <height>\n`
//! followed by `width * height` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const EDGE_MAGIC: &str = "REDNET-EDGE";

/// Image with `channels` planes of `height * width` values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Per-pixel integer class labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

/// Binary edge raster; `1` marks an edge pixel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EdgeGroundTruth {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Per-pixel edge confidence in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) || data.len() != width * height * channels {
            return Err(Error::invalid("raster", format!("bad image geometry {width}x{height}x{channels}")));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self { width, height, channels, data: vec![value.clamp(0.0, 1.0); width * height * channels] }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// `[1, 3, h, w]` tensor; grayscale planes are replicated.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let mut data = Vec::with_capacity(3 * plane);
        for c in 0..3 {
            let src = if self.channels == 3 { c } else { 0 };
            data.extend(self.data[src * plane..(src + 1) * plane].iter().map(|&v| T::from_f64(v as f64)));
        }
        Tensor::new(vec![1, 3, self.height, self.width], data).expect("consistent geometry")
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            for y in y0..y0 + h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            }
        }
        Self { width: w, height: h, channels: self.channels, data }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let mut data = vec![0.0; 3 * w * h];
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    data[(c * h + y as usize) * w + x as usize] = p[c] as f32 / 255.0;
                }
            }
            Self::new(w, h, 3, data)
        } else {
            let g = img.to_luma8();
            Self::new(w, h, 1, g.pixels().map(|p| p[0] as f32 / 255.0).collect())
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let res = if self.channels == 3 {
            let img: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
                Rgb([0, 1, 2].map(|c| q(self.get(c, y as usize, x as usize))))
            });
            img.save(path)
        } else {
            let img: GrayImage = ImageBuffer::from_fn(w, h, |x, y| Luma([q(self.get(0, y as usize, x as usize))]));
            img.save(path)
        };
        res.map_err(|source| Error::Image { path: path.into(), source })
    }
}

impl SegmentationMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::invalid("segmentation", format!("bad geometry {width}x{height}")));
        }
        Ok(Self { width, height, labels })
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

impl EdgeGroundTruth {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height || data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("ground truth", format!("bad binary raster {width}x{height}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Self { width: w, height: h, data }
    }

    /// Any nonzero (after rounding to 8 bits, above half scale) pixel is an edge.
    pub fn read(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?.to_luma8();
        let data = img.pixels().map(|p| u8::from(p[0] >= 128)).collect();
        Self::new(img.width() as usize, img.height() as usize, data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let img: GrayImage = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        });
        img.save(path).map_err(|source| Error::Image { path: path.into(), source })
    }

    pub fn to_edge_map(&self) -> EdgeMap {
        EdgeMap { width: self.width, height: self.height, data: self.data.iter().map(|&v| v as f64).collect() }
    }
}

impl EdgeMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::invalid("edge map", format!("bad geometry {width}x{height}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// From a `[1, 1, h, w]` network output.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (n, c, h, w) = t.dims4("edge map")?;
        if n != 1 || c != 1 {
            return Err(Error::invalid("edge map", format!("expected [1, 1, h, w], got {:?}", t.shape())));
        }
        Self::new(w, h, t.data().iter().map(|v| v.as_f64()).collect())
    }

    /// Pixels with confidence `>= threshold`.
    pub fn binarize(&self, threshold: f64) -> EdgeGroundTruth {
        EdgeGroundTruth {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| u8::from(v >= threshold)).collect(),
        }
    }

    pub fn quantized(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Reads an 8-bit PNG or a raw float `.edge` file, chosen by extension.
    pub fn read(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "edge") {
            return Self::read_raw(path);
        }
        let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?.to_luma8();
        Self::new(img.width() as usize, img.height() as usize, img.pixels().map(|p| p[0] as f64 / 255.0).collect())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.quantized()).expect("geometry");
        img.save(path).map_err(|source| Error::Image { path: path.into(), source })
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut bytes = format!("{EDGE_MAGIC} f32 {} {}\n", self.width, self.height).into_bytes();
        for &v in &self.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    fn read_raw(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::format(path, "missing header line"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::format(path, "header is not ASCII"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [magic, "f32", w, h] = fields[..] else {
            return Err(Error::format(path, format!("bad header `{header}`")));
        };
        if magic != EDGE_MAGIC {
            return Err(Error::format(path, format!("bad magic `{magic}`")));
        }
        let (w, h): (usize, usize) = match (w.parse(), h.parse()) {
            (Ok(w), Ok(h)) => (w, h),
            _ => return Err(Error::format(path, format!("bad extent in `{header}`"))),
        };
        let payload = &bytes[nl + 1..];
        if payload.len() != 4 * w * h {
            return Err(Error::format(path, format!("expected {} payload bytes, found {}", 4 * w * h, payload.len())));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Self::new(w, h, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_map_raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.edge");
        let m = EdgeMap::new(3, 2, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125]).unwrap();
        m.write_raw(&path).unwrap();
        assert_eq!(EdgeMap::read(&path).unwrap(), m);
    }

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let gt = EdgeGroundTruth::new(4, 3, vec![0, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1]).unwrap();
        let p = dir.path().join("gt.png");
        gt.write(&p).unwrap();
        assert_eq!(EdgeGroundTruth::read(&p).unwrap(), gt);

        let img = RasterImage::new(2, 2, 3, (0..12).map(|i| i as f32 * 17.0 / 255.0).collect()).unwrap();
        let p = dir.path().join("img.png");
        img.write(&p).unwrap();
        let back = RasterImage::read(&p).unwrap();
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gray_images_replicate_into_three_planes() {
        let img = RasterImage::new(2, 1, 1, vec![0.25, 0.5]).unwrap();
        let t = img.to_tensor::<f64>();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data(), &[0.25, 0.5, 0.25, 0.5, 0.25, 0.5]);
    }
}
