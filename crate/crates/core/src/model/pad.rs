//! Reflect padding to the encoder's spatial grid, and the matching crop.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Original spatial extent of a padded tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRecord {
    pub height: usize,
    pub width: usize,
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflect-pads the right and bottom edges of `[n, c, h, w]` up to the next
/// multiple of `multiple`.
pub fn pad_to_grid<T: Real>(image: &Tensor<T>, multiple: usize) -> Result<(Tensor<T>, CropRecord)> {
    if multiple == 0 {
        return Err(Error::invalid("pad_to_grid", "multiple must be at least 1"));
    }
    let (n, c, h, w) = image.dims4("pad_to_grid")?;
    let record = CropRecord { height: h, width: w };
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if (ph, pw) == (h, w) {
        return Ok((image.clone(), record));
    }
    let src = image.data();
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..ph {
            let row = base + reflect(y, h) * w;
            out.extend((0..pw).map(|x| src[row + reflect(x, w)]));
        }
    }
    Ok((Tensor::new(vec![n, c, ph, pw], out)?, record))
}

/// Crops the top-left `record` extent out of `[n, c, h, w]`.
pub fn crop<T: Real>(padded: &Tensor<T>, record: CropRecord) -> Result<Tensor<T>> {
    let (n, c, h, w) = padded.dims4("crop")?;
    if record.height > h || record.width > w {
        return Err(Error::invalid("crop", format!("crop {record:?} exceeds {h}x{w}")));
    }
    let src = padded.data();
    let mut out = Vec::with_capacity(n * c * record.height * record.width);
    for plane in 0..n * c {
        for y in 0..record.height {
            let start = (plane * h + y) * w;
            out.extend_from_slice(&src[start..start + record.width]);
        }
    }
    Tensor::new(vec![n, c, record.height, record.width], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bsds_size_pads_to_grid() {
        let img = Tensor::<f32>::zeros(&[1, 3, 321, 481]);
        let (p, rec) = pad_to_grid(&img, 16).unwrap();
        assert_eq!(p.shape(), &[1, 3, 336, 496]);
        assert_eq!(rec, CropRecord { height: 321, width: 481 });
    }

    #[test]
    fn aligned_input_is_untouched() {
        let img = Tensor::<f64>::from_fn(&[1, 1, 32, 16], |i| i as f64);
        let (p, _) = pad_to_grid(&img, 16).unwrap();
        assert_eq!(p, img);
    }

    #[test]
    fn pad_then_crop_is_lossless() {
        let img = Tensor::<f64>::from_fn(&[2, 3, 7, 5], |i| (i as f64).sin());
        let (p, rec) = pad_to_grid(&img, 4).unwrap();
        assert_eq!(p.shape(), &[2, 3, 8, 8]);
        assert_eq!(crop(&p, rec).unwrap(), img);
    }

    #[test]
    fn padding_mirrors_without_repeating_the_edge() {
        let img = Tensor::<f64>::new(vec![1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let (p, _) = pad_to_grid(&img, 8).unwrap();
        assert_eq!(&p.data()[..8], &[1.0, 2.0, 3.0, 2.0, 1.0, 2.0, 3.0, 2.0]);
        assert!(pad_to_grid(&img, 0).is_err());
    }
}
