//! Tolerance-radius bipartite correspondence between predicted and
//! ground-truth edge pixels.

use std::collections::VecDeque;

use crate::data::raster::EdgeGroundTruth;
use crate::error::{Error, Result};

/// A maximum-cardinality one-to-one matching.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Matched `(pred (y, x), gt (y, x))` pairs.
    pub pairs: Vec<((usize, usize), (usize, usize))>,
    pub pred_total: usize,
    pub gt_total: usize,
    /// Tolerance radius in pixels.
    pub radius: f64,
}

impl MatchResult {
    pub fn matched_pred(&self) -> usize {
        self.pairs.len()
    }

    pub fn matched_gt(&self) -> usize {
        self.pairs.len()
    }
}

/// `max_dist` times the image diagonal.
pub fn tolerance_radius(width: usize, height: usize, max_dist: f64) -> f64 {
    max_dist * ((width * width + height * height) as f64).sqrt()
}

fn pixels(map: &EdgeGroundTruth) -> Vec<(usize, usize)> {
    (0..map.height).flat_map(|y| (0..map.width).map(move |x| (y, x))).filter(|&(y, x)| map.get(y, x)).collect()
}

/// Adjacency of each left vertex to right vertices within `radius`.
fn adjacency(left: &[(usize, usize)], right_map: &EdgeGroundTruth, radius: f64) -> (Vec<Vec<usize>>, Vec<(usize, usize)>) {
    let right = pixels(right_map);
    let mut index = vec![usize::MAX; right_map.width * right_map.height];
    for (i, &(y, x)) in right.iter().enumerate() {
        index[y * right_map.width + x] = i;
    }
    let reach = radius.floor() as isize;
    let r2 = radius * radius;
    let mut offsets = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d2 = (dy * dy + dx * dx) as f64;
            if d2 <= r2 {
                offsets.push((d2, dy, dx));
            }
        }
    }
    // Nearest candidates first keeps the search order deterministic and local.
    offsets.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let adj = left
        .iter()
        .map(|&(y, x)| {
            offsets
                .iter()
                .filter_map(|&(_, dy, dx)| {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy < 0 || xx < 0 || yy >= right_map.height as isize || xx >= right_map.width as isize {
                        return None;
                    }
                    let i = index[yy as usize * right_map.width + xx as usize];
                    (i != usize::MAX).then_some(i)
                })
                .collect()
        })
        .collect();
    (adj, right)
}

/// Hopcroft–Karp maximum bipartite matching. Returns `match_left[u] = Some(v)`.
pub fn hopcroft_karp(adj: &[Vec<usize>], n_right: usize) -> Vec<Option<usize>> {
    const INF: usize = usize::MAX;
    let n_left = adj.len();
    let mut match_l: Vec<Option<usize>> = vec![None; n_left];
    let mut match_r: Vec<Option<usize>> = vec![None; n_right];
    let mut dist = vec![INF; n_left];
    loop {
        let mut queue = VecDeque::new();
        for u in 0..n_left {
            if match_l[u].is_none() {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = INF;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                match match_r[v] {
                    None => found = true,
                    Some(w) if dist[w] == INF => {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                    Some(_) => {}
                }
            }
        }
        if !found {
            break;
        }
        // Iterative DFS along the layered graph.
        let mut next = vec![0usize; n_left];
        for root in 0..n_left {
            if match_l[root].is_some() {
                continue;
            }
            let mut stack = vec![root];
            while let Some(&u) = stack.last() {
                if next[u] == adj[u].len() {
                    dist[u] = INF;
                    stack.pop();
                    continue;
                }
                let v = adj[u][next[u]];
                next[u] += 1;
                match match_r[v] {
                    None => {
                        // Augment along the stack: each stacked vertex takes the
                        // edge it most recently advanced over.
                        let mut right = v;
                        while let Some(l) = stack.pop() {
                            let prev = match_l[l];
                            match_l[l] = Some(right);
                            match_r[right] = Some(l);
                            match prev {
                                Some(p) => right = p,
                                None => break,
                            }
                        }
                        stack.clear();
                    }
                    Some(w) if dist[w] == dist[u] + 1 => stack.push(w),
                    Some(_) => {}
                }
            }
        }
    }
    match_l
}

/// Matches predicted edge pixels to ground-truth pixels within
/// `max_dist * diagonal`, maximizing the number of matched pairs.
pub fn correspond(pred: &EdgeGroundTruth, gt: &EdgeGroundTruth, max_dist: f64) -> Result<MatchResult> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::ShapeMismatch {
            op: "correspond",
            lhs_name: "pred",
            lhs: vec![pred.height, pred.width],
            rhs_name: "gt",
            rhs: vec![gt.height, gt.width],
        });
    }
    if !(max_dist > 0.0 && max_dist.is_finite()) {
        return Err(Error::invalid("correspond", format!("max_dist must be positive, got {max_dist}")));
    }
    let radius = tolerance_radius(gt.width, gt.height, max_dist);
    let left = pixels(pred);
    let (adj, right) = adjacency(&left, gt, radius);
    let assignment = hopcroft_karp(&adj, right.len());
    let pairs = assignment.iter().enumerate().filter_map(|(u, v)| v.map(|v| (left[u], right[v]))).collect();
    Ok(MatchResult { pairs, pred_total: left.len(), gt_total: right.len(), radius })
}
