//! Boundary benchmark: non-maximum suppression, tolerance-radius matching,
//! threshold sweeps, and ODS / OIS / AP.

pub mod matching;
pub mod metrics;
pub mod nms;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

pub use matching::{correspond, hopcroft_karp, tolerance_radius, MatchResult};
pub use metrics::{
    aggregate_curve, ap_of_curve, average_precision, default_thresholds, f_measure, ods, ois, pr_sweep, PrCounts, PrPoint,
    AP_RECALL_LEVELS,
};
pub use nms::nms;

use crate::data::manifest::DatasetManifest;
use crate::data::raster::{EdgeGroundTruth, EdgeMap};
use crate::error::{Error, Result};
use crate::model::{predict, ModelParameters};
use crate::tensor::Real;

/// Best point of one image's sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub best: PrPoint,
}

/// ODS / OIS / AP with the aggregate curve they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkScores {
    pub ods: f64,
    pub ods_threshold: f64,
    pub ois: f64,
    pub ap: f64,
    pub curve: Vec<PrPoint>,
    pub per_image: Vec<ImageScore>,
}

impl BenchmarkScores {
    /// Scores precomputed per-image sweeps.
    pub fn from_sweeps(ids: &[String], sweeps: &[Vec<PrPoint>]) -> Result<Self> {
        let (ods_threshold, ods_f) = ods(sweeps)?;
        let (ois_f, chosen) = ois(sweeps)?;
        let curve = aggregate_curve(sweeps)?;
        Ok(Self {
            ods: ods_f,
            ods_threshold,
            ois: ois_f,
            ap: ap_of_curve(&curve),
            curve,
            per_image: ids.iter().zip(chosen).map(|(id, best)| ImageScore { id: id.clone(), best }).collect(),
        })
    }

    pub fn scores_csv(&self) -> String {
        format!("ods,ods_threshold,ois,ap\n{},{},{},{}\n", self.ods, self.ods_threshold, self.ois, self.ap)
    }

    pub fn per_image_csv(&self) -> String {
        let mut s = "image,best_threshold,precision,recall,f\n".to_string();
        for img in &self.per_image {
            let p = img.best;
            let _ = writeln!(s, "{},{},{},{},{}", img.id, p.threshold, p.precision, p.recall, p.f);
        }
        s
    }

    pub fn pr_curve_csv(&self) -> String {
        let mut s = "threshold,precision,recall,f\n".to_string();
        for p in &self.curve {
            let _ = writeln!(s, "{},{},{},{}", p.threshold, p.precision, p.recall, p.f);
        }
        s
    }

    /// Writes `scores.csv`, `per_image.csv`, and `pr_curve.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("scores.csv", self.scores_csv()),
            ("per_image.csv", self.per_image_csv()),
            ("pr_curve.csv", self.pr_curve_csv()),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Suppresses and sweeps every raw prediction, then scores the dataset.
/// Images are processed in parallel on the current rayon pool; results are
/// reduced in input order, so scores do not depend on the worker count.
pub fn evaluate_maps(items: &[(String, EdgeMap, EdgeGroundTruth)], max_dist: f64) -> Result<BenchmarkScores> {
    let thresholds = default_thresholds();
    let sweeps = items
        .par_iter()
        .map(|(id, pred, gt)| {
            if (pred.width, pred.height) != (gt.width, gt.height) {
                return Err(Error::invalid(
                    "evaluate",
                    format!("`{id}`: prediction {}x{} vs ground truth {}x{}", pred.width, pred.height, gt.width, gt.height),
                ));
            }
            pr_sweep(&nms(pred), gt, &thresholds, max_dist)
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = items.iter().map(|(id, _, _)| id.clone()).collect();
    BenchmarkScores::from_sweeps(&ids, &sweeps)
}

/// Final edge map `f^(depth)` for an image, at its original size.
pub fn predict_final<T: Real>(params: &ModelParameters<T>, image: &crate::data::raster::RasterImage, depth: usize) -> Result<EdgeMap> {
    let maps = predict(params, &image.to_tensor::<T>(), depth)?;
    EdgeMap::from_tensor(maps.last().expect("depth + 1 maps"))
}

/// Runs the model over every manifest entry and scores the final edge maps.
pub fn evaluate<T: Real>(
    manifest: &DatasetManifest,
    params: &ModelParameters<T>,
    depth: usize,
    max_dist: f64,
) -> Result<BenchmarkScores> {
    let items = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let (image, gt) = entry.load()?;
            Ok((entry.stem(), predict_final(params, &image, depth)?, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_maps(&items, max_dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_samples;

    #[test]
    fn ground_truth_as_prediction_scores_one() {
        let items: Vec<_> = synth_samples(4, 64, 21)
            .into_iter()
            .enumerate()
            .map(|(i, s)| (format!("s{i}"), s.gt.to_edge_map(), s.gt))
            .collect();
        let scores = evaluate_maps(&items, 0.0075).unwrap();
        assert_eq!((scores.ods, scores.ois, scores.ap), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_zero_prediction_scores_zero() {
        let items: Vec<_> = synth_samples(3, 32, 2)
            .into_iter()
            .map(|s| ("z".to_string(), EdgeMap::zeros(32, 32), s.gt))
            .collect();
        let scores = evaluate_maps(&items, 0.0075).unwrap();
        assert_eq!((scores.ods, scores.ois, scores.ap), (0.0, 0.0, 0.0));
    }
}
