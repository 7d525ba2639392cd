//! Oriented non-maximum suppression of edge maps.

use crate::data::raster::EdgeMap;

/// Factor applied to a pixel's own value before comparing it with its
/// neighbours along the normal, so near-ties survive.
const NMS_MARGIN: f64 = 1.01;

fn at(map: &[f64], w: usize, h: usize, y: isize, x: isize) -> f64 {
    let yc = y.clamp(0, h as isize - 1) as usize;
    let xc = x.clamp(0, w as isize - 1) as usize;
    map[yc * w + xc]
}

/// Separable `[1, 2, 1] / 4` smoothing with replicated borders.
pub fn triangle_smooth(edge: &EdgeMap) -> EdgeMap {
    let (w, h) = (edge.width, edge.height);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            tmp[y * w + x] =
                (at(&edge.data, w, h, yi, xi - 1) + 2.0 * edge.data[y * w + x] + at(&edge.data, w, h, yi, xi + 1)) / 4.0;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            out[y * w + x] = (at(&tmp, w, h, yi - 1, xi) + 2.0 * tmp[y * w + x] + at(&tmp, w, h, yi + 1, xi)) / 4.0;
        }
    }
    EdgeMap { width: w, height: h, data: out }
}

fn bilinear(map: &[f64], w: usize, h: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
    let bottom = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Unit normal `(ny, nx)` at every pixel: the eigenvector of the smoothed
/// map's Hessian with the most negative eigenvalue, i.e. the direction of
/// strongest downward curvature across a ridge.
pub fn normals(smoothed: &EdgeMap) -> Vec<(f64, f64)> {
    let (w, h) = (smoothed.width, smoothed.height);
    let s = |y: isize, x: isize| at(&smoothed.data, w, h, y, x);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let c = s(y, x);
            let sxx = s(y, x + 1) - 2.0 * c + s(y, x - 1);
            let syy = s(y + 1, x) - 2.0 * c + s(y - 1, x);
            let sxy = (s(y + 1, x + 1) - s(y + 1, x - 1) - s(y - 1, x + 1) + s(y - 1, x - 1)) / 4.0;
            let half_diff = (sxx - syy) / 2.0;
            let lambda = (sxx + syy) / 2.0 - (half_diff * half_diff + sxy * sxy).sqrt();
            // Two algebraically equivalent eigenvector forms; take the better conditioned one.
            let a = (sxy, lambda - sxx);
            let b = (lambda - syy, sxy);
            let (vy, vx) = if a.0.hypot(a.1) >= b.0.hypot(b.1) { a } else { (b.1, b.0) };
            let norm = vy.hypot(vx);
            out.push(if norm > 1e-12 { (vy / norm, vx / norm) } else if sxx <= syy { (0.0, 1.0) } else { (1.0, 0.0) });
        }
    }
    out
}

/// Whether `(y, x)` lies in some 2x2 block whose values are all `>= e`.
/// Unit-width curves never do; flat-topped ridges at least two pixels wide do.
fn in_plateau(map: &[f64], w: usize, h: usize, y: usize, x: usize, e: f64) -> bool {
    [(-1isize, -1isize), (-1, 0), (0, -1), (0, 0)].iter().any(|&(oy, ox)| {
        let (y0, x0) = (y as isize + oy, x as isize + ox);
        if y0 < 0 || x0 < 0 || y0 + 1 >= h as isize || x0 + 1 >= w as isize {
            return false;
        }
        let (y0, x0) = (y0 as usize, x0 as usize);
        [(0, 0), (0, 1), (1, 0), (1, 1)].iter().all(|&(dy, dx)| map[(y0 + dy) * w + x0 + dx] >= e)
    })
}

/// Suppresses every pixel that is not a local maximum along its normal.
///
/// A pixel `e` is removed when either neighbour one pixel away along the
/// normal (bilinearly interpolated) exceeds `1.01 * e`. Inside flat plateaus
/// it is also removed when it ties a neighbour whose smoothed response is
/// strictly larger, which thins wide ridges to their centre line while
/// leaving unit-width curves, corners included, intact. Survivors keep
/// their value.
pub fn nms(edge: &EdgeMap) -> EdgeMap {
    let (w, h) = (edge.width, edge.height);
    let smoothed = triangle_smooth(edge);
    let dirs = normals(&smoothed);
    let mut out = edge.data.clone();
    for y in 0..h {
        for x in 0..w {
            let e = edge.data[y * w + x];
            if e <= 0.0 {
                continue;
            }
            let s0 = smoothed.data[y * w + x];
            let plateau = in_plateau(&edge.data, w, h, y, x, e);
            let (ny, nx) = dirs[y * w + x];
            let suppressed = [1.0, -1.0].iter().any(|&sign| {
                let (py, px) = (y as f64 + sign * ny, x as f64 + sign * nx);
                let neighbour = bilinear(&edge.data, w, h, py, px);
                e * NMS_MARGIN < neighbour || (plateau && e <= neighbour && s0 < bilinear(&smoothed.data, w, h, py, px))
            });
            if suppressed {
                out[y * w + x] = 0.0;
            }
        }
    }
    EdgeMap { width: w, height: h, data: out }
}
