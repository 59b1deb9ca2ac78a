//! Training loops: decoupled-weight-decay Adam, one-cycle schedule,
//! discriminative learning rates, frozen-head warmup, progressive
//! resizing, and checkpoint-on-metric-improvement.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gray::{GrayImage, LabelMask};
use crate::imgproc::{
    augment, clahe, mixup_lambda, resize_f32, znormalize, AugmentParams, ClaheParams, MixupParams,
    ResizeMode,
};
use crate::manifest::Manifest;
use crate::nets::{
    ce_label_smoothing, dice_ce_loss, save_checkpoint, Classifier, ClassifierConfig, LossWeights,
    Mode, UNet, UNetConfig,
};
use crate::nn::{AdamW, Tensor};
use crate::stats::{basic_metrics, confusion, ScoredSet};

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycleConfig {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycleConfig {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        Self {
            max_lr,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return Err(Error::Schedule(format!(
                "pct_start must be in (0,1), got {}",
                self.pct_start
            )));
        }
        if self.div_factor <= 1.0 || self.final_div_factor <= 1.0 {
            return Err(Error::Schedule("div factors must exceed 1".into()));
        }
        if self.max_lr <= 0.0 || self.total_steps == 0 {
            return Err(Error::Schedule("need positive max_lr and steps".into()));
        }
        Ok(())
    }
}

/// One-cycle learning rate at `step`: cosine rise from
/// `max_lr/div_factor` to `max_lr` over the first `pct_start` fraction
/// of steps, then cosine fall to `max_lr/final_div_factor`.
pub fn one_cycle_lr(step: usize, cfg: &OneCycleConfig) -> Result<f64> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(Error::Schedule(format!(
            "step {step} outside [0, {}]",
            cfg.total_steps
        )));
    }
    let t = step as f64;
    let total = cfg.total_steps as f64;
    let warm = cfg.pct_start * total;
    let lo = cfg.max_lr / cfg.div_factor;
    let floor = cfg.max_lr / cfg.final_div_factor;
    let lr = if t <= warm {
        let frac = t / warm;
        lo + (cfg.max_lr - lo) * (1.0 - (std::f64::consts::PI * frac).cos()) / 2.0
    } else {
        let frac = (t - warm) / (total - warm);
        floor + (cfg.max_lr - floor) * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
    };
    Ok(lr)
}

/// Per-group learning rates: group g (0 = earliest layers, G-1 = head)
/// gets `head_lr / rho^(G-1-g)`, increasing toward deeper layers.
pub fn discriminative_lrs(head_lr: f64, groups: usize, rho: f64) -> Result<Vec<f64>> {
    if groups == 0 {
        return Err(Error::Schedule("need at least one LR group".into()));
    }
    if rho < 1.0 || head_lr <= 0.0 {
        return Err(Error::Schedule(format!(
            "need rho >= 1 and positive head_lr, got rho={rho}, head_lr={head_lr}"
        )));
    }
    Ok((0..groups)
        .map(|g| head_lr / rho.powi((groups - 1 - g) as i32))
        .collect())
}

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    AnatomyAware,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::AnatomyAware => "anatomy_aware",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Variant::Standard),
            "anatomy_aware" | "anatomy-aware" => Ok(Variant::AnatomyAware),
            other => Err(Error::Config(format!(
                "unknown variant {other} (expected standard | anatomy_aware)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub weight_decay: f64,
    pub unet: UNetConfig,
    pub augment: AugmentParams,
    pub loss: LossWeights,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 1e-3,
            batch: 8,
            weight_decay: 1e-2,
            unet: UNetConfig::default(),
            augment: AugmentParams::segmentation_default(),
            loss: LossWeights {
                label_smooth_eps: 0.0,
                ..Default::default()
            },
        }
    }
}

impl SegTrainConfig {
    /// Scaled-down defaults that finish in minutes on a CPU without
    /// changing the algorithmic structure.
    pub fn desk_scale() -> Self {
        Self {
            epochs: 30,
            unet: UNetConfig {
                input_size: (64, 64),
                channels: vec![8, 16, 32],
                classes: 3,
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("segmentation config needs positive values".into()));
        }
        self.unet.validate()?;
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClfTrainConfig {
    /// (H, W, unfrozen epochs) per progressive-resizing phase.
    pub size_schedule: Vec<(usize, usize, usize)>,
    /// Head-only warmup epochs at the start of every size phase.
    pub frozen_head_epochs: usize,
    pub batch: usize,
    /// Batch size used once an input reaches `large_input_pixels`.
    pub large_input_batch: usize,
    pub large_input_pixels: usize,
    pub head_lr: f64,
    pub lr_group_ratio: f64,
    pub mixup: MixupParams,
    pub label_smooth_eps: f64,
    pub weight_decay: f64,
    pub classifier: ClassifierConfig,
    pub augment: AugmentParams,
}

impl Default for ClfTrainConfig {
    fn default() -> Self {
        Self {
            size_schedule: vec![(106, 158, 25), (208, 314, 25), (312, 472, 30), (416, 628, 40)],
            frozen_head_epochs: 15,
            batch: 64,
            large_input_batch: 32,
            large_input_pixels: 416 * 628,
            head_lr: 1e-3,
            lr_group_ratio: 2.6,
            mixup: MixupParams::default(),
            label_smooth_eps: 0.1,
            weight_decay: 1e-2,
            classifier: ClassifierConfig::default(),
            augment: AugmentParams::default(),
        }
    }
}

impl ClfTrainConfig {
    /// Scaled-down schedule (epochs 5/5/6/8, small inputs, thin net)
    /// preserving progressive resizing and frozen-head warmup.
    pub fn desk_scale() -> Self {
        Self {
            size_schedule: vec![(64, 96, 5), (80, 120, 5), (96, 144, 6), (112, 168, 8)],
            frozen_head_epochs: 2,
            batch: 32,
            classifier: ClassifierConfig {
                stages: vec![(8, 1), (16, 1), (32, 1), (64, 1)],
                classes: 2,
                layer_groups: 3,
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size_schedule.is_empty() {
            return Err(Error::Config("empty size schedule".into()));
        }
        for w in self.size_schedule.windows(2) {
            let ((h0, w0, _), (h1, w1, _)) = (w[0], w[1]);
            if h1 * w1 <= h0 * w0 || h1 < h0 || w1 < w0 {
                return Err(Error::Config(format!(
                    "size schedule must strictly increase in resolution: {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        if self.size_schedule.iter().any(|&(_, _, e)| e == 0) {
            return Err(Error::Config("every phase needs at least one epoch".into()));
        }
        if self.batch == 0
            || self.large_input_batch == 0
            || self.head_lr <= 0.0
            || self.lr_group_ratio < 1.0
            || self.weight_decay < 0.0
            || !(0.0..1.0).contains(&self.label_smooth_eps)
        {
            return Err(Error::Config("classifier hyperparameters out of range".into()));
        }
        self.classifier.validate()
    }

    pub fn batch_for(&self, h: usize, w: usize) -> usize {
        if h * w >= self.large_input_pixels {
            self.large_input_batch
        } else {
            self.batch
        }
    }
}

/// SHA-256 of the canonical JSON encoding of a config; the two
/// classifier variants must hash identically (the "fully comparable"
/// contract — only the input images differ).
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

// ---------------------------------------------------------------------------
// Data loading
// ---------------------------------------------------------------------------

/// Load a PNG, apply CLAHE, and scale to [0,1].
pub fn load_image_01(path: &Path) -> Result<Array2<f32>> {
    let img = GrayImage::load_png(path)?;
    let eq = clahe(&img, &ClaheParams::default())?;
    let max = eq.max_value() as f32;
    Ok(eq.to_f32() / max)
}

/// Deterministic inference-time preprocessing: CLAHE, bilinear resize,
/// per-image z-normalization.
pub fn preprocess_for_model(path: &Path, size: (usize, usize)) -> Result<Array2<f32>> {
    let img = load_image_01(path)?;
    let resized = resize_f32(&img, size.0, size.1, ResizeMode::Bilinear)?;
    Ok(znormalize(&resized))
}

fn stack_images(images: &[Array2<f32>]) -> Tensor {
    let (h, w) = images[0].dim();
    let mut t = Tensor::zeros((images.len(), 1, h, w));
    for (n, img) in images.iter().enumerate() {
        t.slice_mut(ndarray::s![n, 0, .., ..]).assign(img);
    }
    t
}

struct SegSample {
    image: Array2<f32>, // [0,1], resized to network input
    mask: Array2<u8>,
}

fn load_seg_samples(
    manifest_path: &Path,
    manifest: &Manifest,
    size: (usize, usize),
) -> Result<Vec<SegSample>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let mask_rel = e.mask_path.as_ref().ok_or_else(|| Error::UpstreamMissing {
                path: manifest_path.to_path_buf(),
                stage: "generate".into(),
            })?;
            let image = load_image_01(&Manifest::resolve(manifest_path, &e.image_path))?;
            let image = resize_f32(&image, size.0, size.1, ResizeMode::Bilinear)?;
            let mask = LabelMask::load_png(&Manifest::resolve(manifest_path, mask_rel))?;
            let mask = crate::imgproc::resize_mask(&mask, size.0, size.1)?;
            Ok(SegSample {
                image,
                mask: mask.data().clone(),
            })
        })
        .collect()
}

struct ClfSample {
    image: Array2<f32>, // [0,1], original resolution
    label: usize,
    sample_id: String,
}

fn load_clf_samples(
    manifest_path: &Path,
    manifest: &Manifest,
    variant: Variant,
) -> Result<Vec<ClfSample>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let rel = match variant {
                Variant::Standard => &e.image_path,
                Variant::AnatomyAware => e.crop_path.as_ref().ok_or_else(|| {
                    Error::UpstreamMissing {
                        path: Manifest::resolve(manifest_path, &e.image_path),
                        stage: "crop".into(),
                    }
                })?,
            };
            Ok(ClfSample {
                image: load_image_01(&Manifest::resolve(manifest_path, rel))?,
                label: e.label as usize,
                sample_id: e.sample_id.clone(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// History and outputs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub phase: String,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut out = String::from("epoch,phase,lr,train_loss,val_metric\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.phase, r.lr, r.train_loss, r.val_metric
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub history_path: PathBuf,
    pub best_metric: f64,
    pub best_epoch: usize,
    pub history: Vec<HistoryRow>,
}

// ---------------------------------------------------------------------------
// Segmentation training
// ---------------------------------------------------------------------------

/// Mean over foreground classes of the hard Dice coefficient between an
/// argmax prediction and the truth mask; an absent class present in
/// neither map scores 1.
pub fn hard_mean_dice(pred: &Array2<u8>, truth: &Array2<u8>, classes: usize) -> f64 {
    let mut total = 0.0;
    let n_fg = classes - 1;
    for c in 1..classes {
        let c = c as u8;
        let mut inter = 0usize;
        let mut p = 0usize;
        let mut g = 0usize;
        for (pv, gv) in pred.iter().zip(truth.iter()) {
            let pi = *pv == c;
            let gi = *gv == c;
            p += pi as usize;
            g += gi as usize;
            inter += (pi && gi) as usize;
        }
        total += if p + g == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (p + g) as f64
        };
    }
    total / n_fg as f64
}

fn argmax_channels(logits: &Tensor, n: usize) -> Array2<u8> {
    let (_, c, h, w) = logits.dim();
    Array2::from_shape_fn((h, w), |(r, col)| {
        let mut best = (0u8, f32::NEG_INFINITY);
        for ci in 0..c {
            let v = logits[[n, ci, r, col]];
            if v > best.1 {
                best = (ci as u8, v);
            }
        }
        best.0
    })
}

fn to_f64(t: &Tensor) -> Array4<f64> {
    t.mapv(|v| v as f64)
}

fn to_f32_4(t: &Array4<f64>) -> Tensor {
    t.mapv(|v| v as f32)
}

/// Train the U-Net, monitoring validation mean Dice and checkpointing
/// on every strict improvement. Aborts on non-finite loss.
pub fn train_segmentation(
    train_manifest: &Path,
    val_manifest: &Path,
    cfg: &SegTrainConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let train_m = Manifest::load(train_manifest)?;
    let val_m = Manifest::load(val_manifest)?;
    if train_m.is_empty() {
        return Err(Error::Config("empty training manifest".into()));
    }
    if val_m.is_empty() {
        return Err(Error::Config("empty validation manifest".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let size = cfg.unet.input_size;
    let train_data = load_seg_samples(train_manifest, &train_m, size)?;
    let val_data = load_seg_samples(val_manifest, &val_m, size)?;

    let mut net = UNet::new(cfg.unet.clone(), seed)?;
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e67_7261_696e);

    let steps_per_epoch = train_data.len().div_ceil(cfg.batch);
    let schedule = OneCycleConfig::new(cfg.lr, cfg.epochs * steps_per_epoch);

    let ckpt_path = out_dir.join("seg.ckpt");
    let history_path = out_dir.join("seg_history.csv");
    let mut history = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut step = 0usize;

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_lr = 0.0;
        for batch in order.chunks(cfg.batch) {
            let lr = one_cycle_lr(step, &schedule)?;
            epoch_lr = lr;
            step += 1;

            let mut images = Vec::with_capacity(batch.len());
            let mut masks = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &train_data[i];
                let (img, msk) =
                    augment(&s.image, Some(&s.mask), &cfg.augment, &mut rng)?;
                images.push(znormalize(&img));
                masks.push(msk.expect("mask passed through"));
            }
            let x = stack_images(&images);
            let mut target = Array3::<u8>::zeros((batch.len(), size.0, size.1));
            for (n, m) in masks.iter().enumerate() {
                target.slice_mut(ndarray::s![n, .., ..]).assign(m);
            }

            net.zero_grad();
            let logits = net.forward(&x, Mode::Train)?;
            let (loss, grad) = dice_ce_loss(&to_f64(&logits), &target, &cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite segmentation loss at epoch {epoch}, step {step}"
                )));
            }
            epoch_loss += loss * batch.len() as f64;
            net.backward(&to_f32_4(&grad));
            let mut params = Vec::new();
            net.for_each_param(&mut |p| params.push(p as *mut _));
            // SAFETY: pointers collected from disjoint &mut borrows within
            // a single exclusive borrow of the network.
            let param_refs: Vec<&mut crate::nn::Param> =
                params.into_iter().map(|p| unsafe { &mut *p }).collect();
            opt.step(param_refs, &[lr])?;
        }
        epoch_loss /= train_data.len() as f64;

        // validation mean Dice over foreground classes
        let mut dice_sum = 0.0;
        for s in &val_data {
            let x = stack_images(&[znormalize(&s.image)]);
            let logits = net.forward(&x, Mode::Eval)?;
            dice_sum += hard_mean_dice(&argmax_channels(&logits, 0), &s.mask, cfg.unet.classes);
        }
        let val_dice = dice_sum / val_data.len() as f64;

        history.push(HistoryRow {
            epoch,
            phase: "seg".into(),
            lr: epoch_lr,
            train_loss: epoch_loss,
            val_metric: val_dice,
        });
        if val_dice > best {
            best = val_dice;
            best_epoch = epoch;
            save_checkpoint(
                &ckpt_path,
                "unet",
                serde_json::to_value(cfg)?,
                epoch as u32,
                val_dice,
                &net.state_tensors(),
            )?;
        }
    }
    write_history(&history_path, &history)?;
    Ok(TrainOutput {
        checkpoint: ckpt_path,
        history_path,
        best_metric: best,
        best_epoch,
        history,
    })
}

// ---------------------------------------------------------------------------
// Classifier training
// ---------------------------------------------------------------------------

fn mcc_at_half(probs: &[(String, f64, u8)]) -> f64 {
    let set = match ScoredSet::new(
        probs
            .iter()
            .map(|(id, p, l)| crate::stats::ScoredEntry {
                sample_id: id.clone(),
                probability: *p,
                label: *l,
            })
            .collect(),
    ) {
        Ok(s) => s,
        Err(_) => return 0.0,
    };
    match confusion(&set, 0.5) {
        Ok(m) => basic_metrics(&m).mcc.unwrap_or(0.0),
        Err(_) => 0.0,
    }
}

fn softmax_prob1(logits: &Array2<f32>, n: usize) -> f64 {
    let l0 = logits[[n, 0]] as f64;
    let l1 = logits[[n, 1]] as f64;
    let m = l0.max(l1);
    let e0 = (l0 - m).exp();
    let e1 = (l1 - m).exp();
    e1 / (e0 + e1)
}

/// Score every sample in `data` at `size` and return (id, p, label).
fn score_samples(
    net: &mut Classifier,
    data: &[ClfSample],
    size: (usize, usize),
    batch: usize,
) -> Result<Vec<(String, f64, u8)>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch) {
        let images: Vec<Array2<f32>> = chunk
            .iter()
            .map(|s| {
                Ok(znormalize(&resize_f32(
                    &s.image,
                    size.0,
                    size.1,
                    ResizeMode::Bilinear,
                )?))
            })
            .collect::<Result<_>>()?;
        let logits = net.forward(&stack_images(&images), Mode::Eval)?;
        for (n, s) in chunk.iter().enumerate() {
            out.push((s.sample_id.clone(), softmax_prob1(&logits, n), s.label as u8));
        }
    }
    Ok(out)
}

struct BestTracker {
    metric: f64,
    epoch: usize,
    state: Option<Vec<(String, ndarray::ArrayD<f32>)>>,
}

/// Train one classifier variant with the frozen-head / progressive
/// resizing regimen, monitoring validation MCC at the 0.5 cut-off.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    train_manifest: &Path,
    val_manifest: &Path,
    cfg: &ClfTrainConfig,
    variant: Variant,
    seed: u64,
    out_dir: &Path,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let train_m = Manifest::load(train_manifest)?;
    let val_m = Manifest::load(val_manifest)?;
    if train_m.is_empty() || val_m.is_empty() {
        return Err(Error::Config("empty manifest".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let train_data = load_clf_samples(train_manifest, &train_m, variant)?;
    let val_data = load_clf_samples(val_manifest, &val_m, variant)?;

    let mut net = Classifier::new(cfg.classifier.clone(), seed)?;
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636c_6173_7369_6679);
    let groups = cfg.classifier.layer_groups;
    let disc = discriminative_lrs(cfg.head_lr, groups, cfg.lr_group_ratio)?;
    let mut frozen_max = vec![0.0f64; groups];
    frozen_max[groups - 1] = cfg.head_lr;

    let ckpt_path = out_dir.join(format!("clf_{}.ckpt", variant.as_str()));
    let history_path = out_dir.join(format!("clf_{}_history.csv", variant.as_str()));
    let mut history = Vec::new();
    let mut best = BestTracker {
        metric: f64::NEG_INFINITY,
        epoch: 0,
        state: None,
    };
    let mut global_epoch = 0usize;

    for (phase_idx, &(h, w, unfrozen_epochs)) in cfg.size_schedule.iter().enumerate() {
        let size = (h, w);
        let batch = cfg.batch_for(h, w);
        // per-phase resized cache in [0,1]
        let resized: Vec<Array2<f32>> = train_data
            .iter()
            .map(|s| resize_f32(&s.image, h, w, ResizeMode::Bilinear))
            .collect::<Result<_>>()?;

        for (frozen, epochs) in [(true, cfg.frozen_head_epochs), (false, unfrozen_epochs)] {
            if epochs == 0 {
                continue;
            }
            if !frozen {
                // resume unfrozen training from the best weights so far
                if let Some(state) = &best.state {
                    let map: std::collections::HashMap<_, _> = state.iter().cloned().collect();
                    net.load_state(&map)?;
                }
            }
            let phase_name = format!(
                "s{phase_idx}-{}",
                if frozen { "frozen" } else { "unfrozen" }
            );
            let group_max = if frozen { &frozen_max } else { &disc };
            let head_max = group_max[groups - 1];
            let steps_per_epoch = train_data.len().div_ceil(batch);
            let schedule = OneCycleConfig::new(head_max, epochs * steps_per_epoch);
            let mut step = 0usize;
            let mut order: Vec<usize> = (0..train_data.len()).collect();

            for _ in 0..epochs {
                order.shuffle(&mut rng);
                let mut epoch_loss = 0.0;
                let mut epoch_lr = 0.0;
                for chunk in order.chunks(batch) {
                    let factor = one_cycle_lr(step, &schedule)? / head_max;
                    epoch_lr = head_max * factor;
                    step += 1;
                    let group_lrs: Vec<f64> = group_max.iter().map(|&m| m * factor).collect();

                    // augment, then mixup against the batch rotated by one
                    let mut images = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        let (img, _) = augment(&resized[i], None, &cfg.augment, &mut rng)?;
                        images.push(znormalize(&img));
                    }
                    let lambda = mixup_lambda(&cfg.mixup, &mut rng)?;
                    let n = chunk.len();
                    let mut blended = Vec::with_capacity(n);
                    let mut ta = Vec::with_capacity(n);
                    let mut tb = Vec::with_capacity(n);
                    for k in 0..n {
                        let partner = (k + 1) % n;
                        blended.push(crate::imgproc::mixup_blend(
                            &images[k],
                            &images[partner],
                            lambda,
                        )?);
                        ta.push(train_data[chunk[k]].label);
                        tb.push(train_data[chunk[partner]].label);
                    }

                    net.zero_grad();
                    let logits = net.forward(&stack_images(&blended), Mode::Train)?;
                    let logits64 = logits.mapv(|v| v as f64);
                    let (la, ga) = ce_label_smoothing(&logits64, &ta, cfg.label_smooth_eps)?;
                    let (lb, gb) = ce_label_smoothing(&logits64, &tb, cfg.label_smooth_eps)?;
                    let loss = lambda * la + (1.0 - lambda) * lb;
                    if !loss.is_finite() {
                        return Err(Error::Numerical(format!(
                            "non-finite classifier loss in phase {phase_name}, epoch {global_epoch}"
                        )));
                    }
                    epoch_loss += loss * n as f64;
                    let grad = (&ga * lambda + &gb * (1.0 - lambda)).mapv(|v| v as f32);
                    net.backward(&grad);
                    let mut params = Vec::new();
                    net.for_each_param(&mut |p| params.push(p as *mut _));
                    // SAFETY: disjoint parameters under one exclusive borrow.
                    let param_refs: Vec<&mut crate::nn::Param> =
                        params.into_iter().map(|p| unsafe { &mut *p }).collect();
                    opt.step(param_refs, &group_lrs)?;
                }
                epoch_loss /= train_data.len() as f64;

                let scores = score_samples(&mut net, &val_data, size, batch)?;
                let metric = mcc_at_half(&scores);
                history.push(HistoryRow {
                    epoch: global_epoch,
                    phase: phase_name.clone(),
                    lr: epoch_lr,
                    train_loss: epoch_loss,
                    val_metric: metric,
                });
                if metric > best.metric {
                    best.metric = metric;
                    best.epoch = global_epoch;
                    best.state = Some(net.state_tensors());
                    save_checkpoint(
                        &ckpt_path,
                        "classifier",
                        serde_json::to_value(cfg)?,
                        global_epoch as u32,
                        metric,
                        best.state.as_ref().unwrap(),
                    )?;
                }
                global_epoch += 1;
            }
        }
    }
    write_history(&history_path, &history)?;
    Ok(TrainOutput {
        checkpoint: ckpt_path,
        history_path,
        best_metric: best.metric,
        best_epoch: best.epoch,
        history,
    })
}
