//! Low-level compute kernels shared by the convolution operators.

use crate::tensor::Real;

/// Row-major GEMM: `c (m×n) = a · b`, or `c += a · b` when `accumulate`.
///
/// `a` is stored `m×k`, or `k×m` when `trans_a`. `b` is stored `k×n`, or
/// `n×k` when `trans_b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the assertions above bound every index the strides can reach.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-d sliding window over one `channels × height × width` plane stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub padding: usize,
    pub stride: usize,
}

impl Window {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    /// Rows of the column matrix.
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    /// Columns of the column matrix.
    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Output positions `ox` in `0..out` whose input coordinate
/// `ox * stride + k - pad` falls inside `0..extent`.
fn valid_range(out: usize, extent: usize, k: usize, pad: usize, stride: usize) -> std::ops::Range<usize> {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if extent + pad > k { ((extent + pad - k - 1) / stride + 1).min(out) } else { 0 };
    lo.min(hi)..hi
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Unfolds `input` into a `(c·kh·kw) × (oh·ow)` column matrix.
pub fn im2col<T: Real>(input: &[T], g: &Window, col: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (pad, s) = (g.padding, g.stride);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            let ys = valid_range(oh, g.height, ky, pad, s);
            for kx in 0..g.kernel_w {
                let xs = valid_range(ow, g.width, kx, pad, s);
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if !ys.contains(&oy) || xs.is_empty() {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let iy = oy * s + ky - pad;
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    out_row[..xs.start].fill(T::zero());
                    out_row[xs.end..].fill(T::zero());
                    let x0 = xs.start * s + kx - pad;
                    if s == 1 {
                        out_row[xs.clone()].copy_from_slice(&src[x0..x0 + xs.len()]);
                    } else {
                        for (i, v) in out_row[xs.clone()].iter_mut().enumerate() {
                            *v = src[x0 + i * s];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds a column matrix back onto `output`, summing overlapping taps.
/// `output` is accumulated into, not overwritten.
pub fn col2im<T: Real>(col: &[T], g: &Window, output: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (pad, s) = (g.padding, g.stride);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut output[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            let ys = valid_range(oh, g.height, ky, pad, s);
            for kx in 0..g.kernel_w {
                let xs = valid_range(ow, g.width, kx, pad, s);
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in ys.clone() {
                    let iy = oy * s + ky - pad;
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let x0 = xs.start * s + kx - pad;
                    for (i, &v) in src[oy * ow + xs.start..oy * ow + xs.end].iter().enumerate() {
                        dst[x0 + i * s] += v;
                    }
                }
                row += 1;
            }
        }
    }
}
