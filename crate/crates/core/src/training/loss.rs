//! Class-balanced cross-entropy and its deep-supervised sum.

use crate::autodiff::{Tape, Var};
use crate::data::raster::{EdgeGroundTruth, EdgeMap};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Fraction of edge pixels, `|Y+| / |Y|`. Zero for an empty raster.
pub fn class_balance_beta(gt: &EdgeGroundTruth) -> f64 {
    if gt.data.is_empty() {
        return 0.0;
    }
    gt.count() as f64 / gt.data.len() as f64
}

/// Per-pixel targets and weights: edge pixels weigh `1 - beta`, the rest `beta`.
pub fn balanced_targets(gt: &EdgeGroundTruth) -> (Vec<f64>, Vec<f64>) {
    let beta = class_balance_beta(gt);
    gt.data.iter().map(|&y| if y == 1 { (1.0, 1.0 - beta) } else { (0.0, beta) }).unzip()
}

/// Weights of the deep-supervised sum, one per recursion iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: Vec<f64>,
}

impl LossWeights {
    /// `alpha_l = l + 1` for `l = 0..=depth`: later iterations weigh more.
    pub fn increasing(depth: usize) -> Self {
        Self { alpha: (0..=depth).map(|l| (l + 1) as f64).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config(format!("loss weights must be positive, got {:?}", self.alpha)));
        }
        Ok(())
    }
}

/// Class-balanced cross-entropy of one edge map, summed over pixels.
pub fn weighted_bce(pred: &EdgeMap, gt: &EdgeGroundTruth) -> Result<f64> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::ShapeMismatch {
            op: "weighted_bce",
            lhs_name: "pred",
            lhs: vec![pred.height, pred.width],
            rhs_name: "gt",
            rhs: vec![gt.height, gt.width],
        });
    }
    let (target, weight) = balanced_targets(gt);
    let mut loss = 0.0;
    for ((&p, y), w) in pred.data.iter().zip(target).zip(weight) {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    }
    Ok(loss)
}

/// `sum_l alpha_l * weighted_bce(f^(l), gt)`.
pub fn deep_supervised_loss(edge_maps: &[EdgeMap], gt: &EdgeGroundTruth, weights: &LossWeights) -> Result<f64> {
    check_lengths(edge_maps.len(), weights)?;
    edge_maps.iter().zip(&weights.alpha).map(|(m, a)| Ok(a * weighted_bce(m, gt)?)).sum()
}

fn check_lengths(maps: usize, weights: &LossWeights) -> Result<()> {
    if maps != weights.alpha.len() {
        return Err(Error::invalid(
            "deep_supervised_loss",
            format!("{maps} edge maps but {} loss weights", weights.alpha.len()),
        ));
    }
    Ok(())
}

/// Records the class-balanced cross-entropy of a `[n, 1, h, w]` prediction on
/// the tape. `beta` is computed separately for each of the `n` ground truths.
pub fn weighted_bce_on_tape<T: Real>(tape: &mut Tape<T>, pred: Var, gts: &[EdgeGroundTruth]) -> Result<Var> {
    let (n, c, h, w) = tape.value(pred).dims4("weighted_bce")?;
    if c != 1 || n != gts.len() || gts.iter().any(|g| (g.width, g.height) != (w, h)) {
        return Err(Error::ShapeMismatch {
            op: "weighted_bce",
            lhs_name: "pred",
            lhs: vec![n, c, h, w],
            rhs_name: "gt",
            rhs: gts.first().map_or(vec![0], |g| vec![gts.len(), 1, g.height, g.width]),
        });
    }
    let mut target = Vec::with_capacity(n * h * w);
    let mut weight = Vec::with_capacity(n * h * w);
    for g in gts {
        let (t, wt) = balanced_targets(g);
        target.extend(t.into_iter().map(T::from_f64));
        weight.extend(wt.into_iter().map(T::from_f64));
    }
    tape.binary_cross_entropy(pred, target, weight, T::from_f64(BCE_EPS))
}

/// Records the deep-supervised loss on the tape. Returns the total and the
/// unweighted per-iteration values.
pub fn deep_supervised_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    edge_maps: &[Var],
    gts: &[EdgeGroundTruth],
    weights: &LossWeights,
) -> Result<(Var, Vec<f64>)> {
    check_lengths(edge_maps.len(), weights)?;
    let mut total: Option<Var> = None;
    let mut parts = Vec::with_capacity(edge_maps.len());
    for (&map, &alpha) in edge_maps.iter().zip(&weights.alpha) {
        let l = weighted_bce_on_tape(tape, map, gts)?;
        parts.push(tape.value(l).data()[0].as_f64());
        let scaled = tape.scale(l, T::from_f64(alpha));
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    Ok((total.expect("at least one edge map"), parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn gt(bits: &[u8], w: usize) -> EdgeGroundTruth {
        EdgeGroundTruth::new(w, bits.len() / w, bits.to_vec()).unwrap()
    }

    #[test]
    fn beta_definition() {
        let mut bits = vec![0u8; 16];
        bits[..4].fill(1);
        assert_eq!(class_balance_beta(&gt(&bits, 4)), 0.25);
        assert_eq!(class_balance_beta(&gt(&[0; 16], 4)), 0.0);
        assert_eq!(class_balance_beta(&gt(&[1; 16], 4)), 1.0);
    }

    #[test]
    fn hand_value() {
        let pred = EdgeMap::new(4, 1, vec![0.5; 4]).unwrap();
        let l = weighted_bce(&pred, &gt(&[1, 0, 0, 0], 4)).unwrap();
        assert!((l - 1.5 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn exact_prediction_and_degenerate_beta() {
        let g = gt(&[1, 0, 1, 0], 2);
        let exact = EdgeMap::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(weighted_bce(&exact, &g).unwrap() < 1e-5);
        let any = EdgeMap::new(2, 2, vec![0.3, 0.9, 0.01, 0.5]).unwrap();
        assert_eq!(weighted_bce(&any, &gt(&[1; 4], 2)).unwrap(), 0.0);
    }

    #[test]
    fn deep_supervision_is_linear() {
        let g = gt(&[1, 0, 0, 1, 0, 0], 3);
        let m = EdgeMap::new(3, 2, vec![0.2, 0.4, 0.6, 0.7, 0.1, 0.5]).unwrap();
        let single = weighted_bce(&m, &g).unwrap();
        let maps = vec![m.clone(), m.clone(), m];
        let total = deep_supervised_loss(&maps, &g, &LossWeights::increasing(2)).unwrap();
        assert!((total - 6.0 * single).abs() < 1e-12);
        assert!(deep_supervised_loss(&maps[..2], &g, &LossWeights::increasing(2)).is_err());
    }

    #[test]
    fn tape_matches_direct_evaluation() {
        let g = vec![gt(&[1, 0, 0, 0], 2), gt(&[1, 1, 0, 0], 2)];
        let vals = [0.3, 0.6, 0.2, 0.9, 0.5, 0.5, 0.1, 0.7];
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::new(vec![2, 1, 2, 2], vals.to_vec()).unwrap());
        let l = weighted_bce_on_tape(&mut tape, p, &g).unwrap();
        let direct: f64 = (0..2)
            .map(|i| weighted_bce(&EdgeMap::new(2, 2, vals[i * 4..i * 4 + 4].to_vec()).unwrap(), &g[i]).unwrap())
            .sum();
        assert!((tape.value(l).data()[0] - direct).abs() < 1e-12);
    }
}
