//! Ground-truth edge generation from label maps: boundary extraction,
//! Zhang-Suen thinning, and multi-annotation overlay.

use crate::data::raster::{EdgeGroundTruth, SegmentationMap};
use crate::error::{Error, Result};

/// Marks every pixel that has a 4-neighbor with a different label.
pub fn boundary_pixels(seg: &SegmentationMap) -> EdgeGroundTruth {
    let (w, h) = (seg.width, seg.height);
    let mut data = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let l = seg.get(y, x);
            let differs = (x > 0 && seg.get(y, x - 1) != l)
                || (x + 1 < w && seg.get(y, x + 1) != l)
                || (y > 0 && seg.get(y - 1, x) != l)
                || (y + 1 < h && seg.get(y + 1, x) != l);
            data[y * w + x] = u8::from(differs);
        }
    }
    EdgeGroundTruth { width: w, height: h, data }
}

/// Neighbors P2..P9 clockwise from north. Out-of-image pixels read as 0.
fn neighbors(img: &[u8], w: usize, h: usize, y: usize, x: usize) -> [u8; 8] {
    let at = |dy: isize, dx: isize| -> u8 {
        let (yy, xx) = (y as isize + dy, x as isize + dx);
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            0
        } else {
            img[yy as usize * w + xx as usize]
        }
    };
    [at(-1, 0), at(-1, 1), at(0, 1), at(1, 1), at(1, 0), at(1, -1), at(0, -1), at(-1, -1)]
}

/// One Zhang-Suen sub-iteration. Returns whether any pixel was removed.
fn sub_iteration(img: &mut [u8], w: usize, h: usize, first: bool, scratch: &mut Vec<usize>) -> bool {
    scratch.clear();
    for y in 0..h {
        for x in 0..w {
            if img[y * w + x] == 0 {
                continue;
            }
            let p = neighbors(img, w, h, y, x);
            let b: u8 = p.iter().sum();
            if !(2..=6).contains(&b) {
                continue;
            }
            let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
            if a != 1 {
                continue;
            }
            let [p2, _, p4, _, p6, _, p8, _] = p;
            let keep = if first { p2 * p4 * p6 != 0 || p4 * p6 * p8 != 0 } else { p2 * p4 * p8 != 0 || p2 * p6 * p8 != 0 };
            if !keep {
                scratch.push(y * w + x);
            }
        }
    }
    for &i in scratch.iter() {
        img[i] = 0;
    }
    !scratch.is_empty()
}

/// Zhang-Suen thinning iterated to a fixpoint.
pub fn thin(binary: &EdgeGroundTruth) -> EdgeGroundTruth {
    let (w, h) = (binary.width, binary.height);
    let mut img = binary.data.clone();
    let mut scratch = Vec::new();
    loop {
        let a = sub_iteration(&mut img, w, h, true, &mut scratch);
        let b = sub_iteration(&mut img, w, h, false, &mut scratch);
        if !a && !b {
            break;
        }
    }
    EdgeGroundTruth { width: w, height: h, data: img }
}

/// Pixelwise OR of several annotations of one image, then [`thin`].
pub fn overlay_annotations(gts: &[EdgeGroundTruth]) -> Result<EdgeGroundTruth> {
    let first = gts.first().ok_or_else(|| Error::invalid("overlay_annotations", "no annotations"))?;
    let mut union = EdgeGroundTruth::empty(first.width, first.height);
    for gt in gts {
        if (gt.width, gt.height) != (first.width, first.height) {
            return Err(Error::invalid(
                "overlay_annotations",
                format!("annotation {}x{} differs from {}x{}", gt.width, gt.height, first.width, first.height),
            ));
        }
        union.data.iter_mut().zip(&gt.data).for_each(|(u, &v)| *u |= v);
    }
    Ok(thin(&union))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_rows(rows: &[&str]) -> EdgeGroundTruth {
        let h = rows.len();
        let w = rows[0].len();
        let data = rows.iter().flat_map(|r| r.bytes().map(|b| u8::from(b == b'#'))).collect();
        EdgeGroundTruth::new(w, h, data).unwrap()
    }

    #[test]
    fn constant_labels_have_no_boundary() {
        let seg = SegmentationMap::new(5, 4, vec![7; 20]).unwrap();
        assert_eq!(boundary_pixels(&seg).count(), 0);
    }

    #[test]
    fn half_planes_give_two_columns() {
        let (w, h, c) = (10, 6, 4);
        let labels = (0..w * h).map(|i| u32::from(i % w >= c)).collect();
        let gt = boundary_pixels(&SegmentationMap::new(w, h, labels).unwrap());
        for y in 0..h {
            for x in 0..w {
                assert_eq!(gt.get(y, x), x == c - 1 || x == c, "({y},{x})");
            }
        }
    }

    #[test]
    fn checkerboard_is_all_boundary() {
        let labels = (0..36).map(|i| ((i / 6 + i % 6) % 2) as u32).collect();
        let gt = boundary_pixels(&SegmentationMap::new(6, 6, labels).unwrap());
        assert_eq!(gt.count(), 36);
    }

    #[test]
    fn boundary_invariant_under_label_permutation() {
        let labels: Vec<u32> = (0..64).map(|i| ((i * 7) % 5) as u32 / 2).collect();
        let permuted: Vec<u32> = labels.iter().map(|&l| [9, 3, 5][l as usize]).collect();
        let a = boundary_pixels(&SegmentationMap::new(8, 8, labels).unwrap());
        let b = boundary_pixels(&SegmentationMap::new(8, 8, permuted).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn thin_line_is_unchanged() {
        let line = from_rows(&["..........", ".########.", ".........."]);
        assert_eq!(thin(&line), line);
        let diag = from_rows(&["#....", ".#...", "..#..", "...#.", "....#"]);
        assert_eq!(thin(&diag), diag);
    }

    #[test]
    fn filled_bar_thins_to_its_centerline() {
        let mut rows = vec![".".repeat(24); 5];
        for r in rows.iter_mut().take(4).skip(1) {
            *r = format!("..{}..", "#".repeat(20));
        }
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let bar = from_rows(&refs);
        let thinned = thin(&bar);
        // Frozen from an independent reference thinning of the same bar
        // (columns 2..=21, rows 1..=3): the centre row survives from 3 to 19.
        let expect: Vec<(usize, usize)> = (3..=19).map(|x| (2, x)).collect();
        let got: Vec<(usize, usize)> =
            (0..5).flat_map(|y| (0..24).map(move |x| (y, x))).filter(|&(y, x)| thinned.get(y, x)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn overlay_rules() {
        let a = from_rows(&["......", ".####.", "......", "......"]);
        let b = from_rows(&["......", "......", "......", "#####."]);
        assert_eq!(overlay_annotations(std::slice::from_ref(&a)).unwrap(), thin(&a));
        assert_eq!(overlay_annotations(&[a.clone(), a.clone()]).unwrap(), thin(&a));
        let both = overlay_annotations(&[a.clone(), b.clone()]).unwrap();
        assert!(both.get(1, 2) && both.get(3, 2));
        assert!(overlay_annotations(&[]).is_err());
    }
}
