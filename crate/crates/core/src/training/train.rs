//! The training loop.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::augment::{add_gaussian_noise, gaussian_blur, hflip, sample_patches};
use crate::data::raster::{EdgeGroundTruth, RasterImage};
use crate::error::{Error, Result};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::model::network::{Mode, Session};
use crate::model::{build_model, ModelParameters};
use crate::seed::{derive_seed, rng_for};
use crate::tensor::{Real, Tensor};
use crate::training::adam::{adam_step, AdamState};
use crate::training::config::TrainConfig;
use crate::training::loss::deep_supervised_loss_on_tape;

const TAG_MODEL: u64 = 1;
const TAG_PATCHES: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_FLIP: u64 = 4;
const TAG_NOISE: u64 = 5;

/// One training image with its ground truth.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub id: String,
    pub image: RasterImage,
    pub gt: EdgeGroundTruth,
}

#[derive(Clone, Debug)]
struct Patch {
    id: String,
    image: RasterImage,
    gt: EdgeGroundTruth,
}

/// Loss of one optimizer step: unweighted per-iteration terms and the weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub per_iteration: Vec<f64>,
    pub total: f64,
}

impl LossRecord {
    pub fn csv_header(depth: usize) -> String {
        let mut s = "step,epoch".to_string();
        for l in 0..=depth {
            let _ = write!(s, ",loss_l{l}");
        }
        s + ",total"
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{}", self.step, self.epoch);
        for v in &self.per_iteration {
            let _ = write!(s, ",{v}");
        }
        let _ = write!(s, ",{}", self.total);
        s
    }
}

/// Stacks equally sized images into an `[n, 3, h, w]` tensor.
pub fn stack_images<T: Real>(images: &[RasterImage]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::invalid("stack_images", "empty batch"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(Error::invalid("stack_images", format!("{}x{} image in a {w}x{h} batch", img.width, img.height)));
        }
        data.extend_from_slice(img.to_tensor::<T>().data());
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

/// Optimizer, parameters, and the fixed patch set of one training run.
pub struct Trainer<T: Real> {
    config: TrainConfig,
    params: ModelParameters<T>,
    adam: AdamState<T>,
    patches: Vec<Patch>,
    step: u64,
    epoch: usize,
}

impl<T: Real> Trainer<T> {
    /// Fresh model initialized from `config.seed`; patches are cropped once here.
    pub fn new(config: TrainConfig, samples: &[TrainSample]) -> Result<Self> {
        config.validate()?;
        let params = build_model::<T>(&config.model, derive_seed(config.seed, &[TAG_MODEL]))?;
        let adam = AdamState::new(&params, config.adam);
        let patches = Self::crop_patches(&config, samples)?;
        Ok(Self { config, params, adam, patches, step: 0, epoch: 0 })
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    /// With the same config and samples, the remaining steps are bitwise
    /// identical to an uninterrupted run.
    pub fn resume(config: TrainConfig, samples: &[TrainSample], checkpoint: Checkpoint<T>) -> Result<Self> {
        config.validate()?;
        if checkpoint.params.config != config.model {
            return Err(Error::Config("checkpoint network config differs from the training config".into()));
        }
        let adam = checkpoint.optimizer.ok_or_else(|| Error::Config("checkpoint has no optimizer state".into()))?;
        let counter = |key: &str| -> Result<u64> {
            checkpoint
                .meta
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("checkpoint metadata lacks `{key}`")))
        };
        let (step, epoch) = (counter("step")?, counter("epoch")? as usize);
        let mut adam = adam;
        adam.config = config.adam;
        let patches = Self::crop_patches(&config, samples)?;
        Ok(Self { config, params: checkpoint.params, adam, patches, step, epoch })
    }

    fn crop_patches(config: &TrainConfig, samples: &[TrainSample]) -> Result<Vec<Patch>> {
        if samples.is_empty() {
            return Err(Error::invalid("train", "the training set is empty"));
        }
        let mut patches = Vec::with_capacity(samples.len() * config.patches_per_image);
        for (i, s) in samples.iter().enumerate() {
            let seed = derive_seed(config.seed, &[TAG_PATCHES, i as u64]);
            let crops = sample_patches(&s.image, &s.gt, config.patches_per_image, config.patch_size, seed)
                .map_err(|e| Error::invalid("train", format!("sample `{}`: {e}", s.id)))?;
            for (j, (image, gt)) in crops.into_iter().enumerate() {
                patches.push(Patch { id: format!("{}#{j}", s.id), image, gt });
            }
        }
        Ok(patches)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParameters<T> {
        &self.params
    }

    pub fn into_params(self) -> ModelParameters<T> {
        self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Patch order of the given epoch.
    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.patches.len()).collect();
        order.shuffle(&mut rng_for(self.config.seed, &[TAG_SHUFFLE, epoch as u64]));
        order
    }

    /// Runs the next epoch and returns one record per step.
    pub fn run_epoch(&mut self) -> Result<Vec<LossRecord>> {
        let order = self.epoch_order(self.epoch);
        let mut records = Vec::new();
        for batch in order.chunks(self.config.batch_size) {
            records.push(self.train_step(batch)?);
        }
        self.epoch += 1;
        Ok(records)
    }

    fn augmented_batch(&self, batch: &[usize]) -> (Vec<RasterImage>, Vec<EdgeGroundTruth>) {
        let mut images = Vec::with_capacity(batch.len());
        let mut gts = Vec::with_capacity(batch.len());
        for (k, &i) in batch.iter().enumerate() {
            let p = &self.patches[i];
            let tags = [self.step, k as u64];
            let coin = self.config.hflip && rng_for(self.config.seed, &[TAG_FLIP, tags[0], tags[1]]).random_bool(0.5);
            let (mut image, gt) = hflip(p.image.clone(), p.gt.clone(), coin);
            if self.config.blur_sigma > 0.0 {
                image = gaussian_blur(&image, self.config.blur_sigma);
            }
            if self.config.noise_std > 0.0 {
                let seed = derive_seed(self.config.seed, &[TAG_NOISE, tags[0], tags[1]]);
                image = add_gaussian_noise(&image, self.config.noise_std / 255.0, seed);
            }
            images.push(image);
            gts.push(gt);
        }
        (images, gts)
    }

    /// Augment, forward through all recursion iterations, back-propagate the
    /// deep-supervised loss, and take one Adam step.
    pub fn train_step(&mut self, batch: &[usize]) -> Result<LossRecord> {
        let (images, gts) = self.augmented_batch(batch);
        let input = stack_images::<T>(&images)?;
        let weights = self.config.loss_weights();
        let (per_iteration, total, grads, norm_updates) = {
            let mut session = Session::new(&self.params, Mode::Train);
            let x = session.tape.leaf(input);
            let result = session.forward(x, self.config.model.recursion_depth)?;
            let (loss, parts) = deep_supervised_loss_on_tape(&mut session.tape, &result.edge_maps, &gts, &weights)?;
            let total = session.tape.value(loss).data()[0].as_f64();
            if !total.is_finite() || parts.iter().any(|v| !v.is_finite()) {
                let ids: Vec<&str> = batch.iter().map(|&i| self.patches[i].id.as_str()).collect();
                return Err(Error::NonFinite(format!(
                    "loss {total} at step {} (epoch {}) on batch [{}]",
                    self.step,
                    self.epoch,
                    ids.join(", ")
                )));
            }
            session.tape.backward(loss)?;
            (parts, total, session.param_grads(), session.norm_updates().to_vec())
        };
        adam_step(&mut self.params, &grads, &mut self.adam)?;
        self.params.apply_norm_updates(&norm_updates)?;
        let record = LossRecord { step: self.step, epoch: self.epoch, per_iteration, total };
        self.step += 1;
        Ok(record)
    }

    /// Snapshot of parameters, optimizer state, counters, and the config.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        let mut ck = Checkpoint::new(self.params.clone());
        ck.optimizer = Some(self.adam.clone());
        ck.meta.insert("step".into(), self.step.to_string());
        ck.meta.insert("epoch".into(), self.epoch.to_string());
        ck
    }
}

/// Files produced by [`train_to_dir`].
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub records: Vec<LossRecord>,
    pub params: ModelParameters<T>,
    pub loss_csv: PathBuf,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

/// Trains to completion, writing `loss.csv`, `checkpoints/epoch_NNNN.ckpt`
/// every `checkpoint_every` epochs, `best.ckpt` (lowest mean epoch loss), and
/// `last.ckpt` under `out`. With `resume`, training continues from that
/// checkpoint and `loss.csv` keeps only the rows before the resumed step.
pub fn train_to_dir<T: Real>(
    config: &TrainConfig,
    samples: &[TrainSample],
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(config.clone(), samples, load_checkpoint::<T>(path)?)?,
        None => Trainer::new(config.clone(), samples)?,
    };
    let loss_csv = out.join("loss.csv");
    let mut csv = LossRecord::csv_header(config.model.recursion_depth) + "\n";
    if resume.is_some() {
        if let Ok(previous) = fs::read_to_string(&loss_csv) {
            for line in previous.lines().skip(1) {
                let step: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
                if step.is_some_and(|s| s < trainer.step()) {
                    csv.push_str(line);
                    csv.push('\n');
                }
            }
        }
    }
    let mut file = fs::File::create(&loss_csv).map_err(|e| Error::io(&loss_csv, e))?;
    file.write_all(csv.as_bytes()).map_err(|e| Error::io(&loss_csv, e))?;

    let best_path = out.join("best.ckpt");
    let last_path = out.join("last.ckpt");
    let mut best: Option<(f64, Checkpoint<T>)> = None;
    let mut best_dirty = false;
    let mut records = Vec::new();
    while !trainer.is_done() {
        let epoch_records = trainer.run_epoch()?;
        let mut lines = String::new();
        for r in &epoch_records {
            lines.push_str(&r.csv_row());
            lines.push('\n');
        }
        file.write_all(lines.as_bytes()).map_err(|e| Error::io(&loss_csv, e))?;
        let mean = epoch_records.iter().map(|r| r.total).sum::<f64>() / epoch_records.len().max(1) as f64;
        log::info!("epoch {} step {} mean loss {mean:.6}", trainer.epoch(), trainer.step());
        records.extend(epoch_records);
        if best.as_ref().is_none_or(|(b, _)| mean < *b) {
            let mut ck = trainer.checkpoint();
            ck.meta.insert("epoch_mean_loss".into(), mean.to_string());
            best = Some((mean, ck));
            best_dirty = true;
        }
        let epoch = trainer.epoch();
        if epoch % config.checkpoint_every == 0 || trainer.is_done() {
            let path = out.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt"));
            save_checkpoint(&trainer.checkpoint(), &path)?;
            if best_dirty {
                save_checkpoint(&best.as_ref().expect("set above").1, &best_path)?;
                best_dirty = false;
            }
        }
    }
    save_checkpoint(&trainer.checkpoint(), &last_path)?;
    if let Some((_, ck)) = &best {
        if best_dirty {
            save_checkpoint(ck, &best_path)?;
        }
    }
    Ok(TrainOutcome {
        records,
        params: trainer.into_params(),
        loss_csv,
        last_checkpoint: last_path,
        best_checkpoint: best_path,
    })
}
