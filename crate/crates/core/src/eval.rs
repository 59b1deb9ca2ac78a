//! Checkpoint-driven inference and evaluation: predicted masks, SIJ
//! crops, probability scoring, evaluation reports, paired model
//! comparison, and corpus-level Grad-CAM localization fractions.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::anatomy::{
    crop_to_sij, default_dilation_radius, locate_sij, MaskSource, SegMask, SijBoxes,
    DEFAULT_BOX_MARGIN,
};
use crate::error::{Error, Result};
use crate::explain::{activation_in_box_fraction, embed_crop, embed_full, grad_cam};
use crate::gray::{GrayImage, LabelMask};
use crate::manifest::{Manifest, ManifestEntry};
use crate::nets::{load_checkpoint, Classifier, Mode, UNet};
use crate::nn::Tensor;
use crate::stats::{
    build_report, delong_test, mcnemar, DelongResult, EvalReport, McNemarResult, ScoredEntry,
    ScoredSet,
};
use crate::train::{preprocess_for_model, ClfTrainConfig, SegTrainConfig, Variant};

// ---------------------------------------------------------------------------
// Checkpoint loading
// ---------------------------------------------------------------------------

pub struct LoadedClassifier {
    pub net: Classifier,
    pub cfg: ClfTrainConfig,
    /// Final training resolution; inference preprocesses to this size.
    pub input_size: (usize, usize),
    pub epoch: u32,
    pub metric: f64,
}

pub fn load_classifier(path: &Path) -> Result<LoadedClassifier> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.header.model_kind != "classifier" {
        return Err(Error::Config(format!(
            "{} is a {} checkpoint, expected a classifier",
            path.display(),
            ckpt.header.model_kind
        )));
    }
    let cfg: ClfTrainConfig = serde_json::from_value(ckpt.header.config.clone())
        .map_err(|e| Error::Config(format!("checkpoint config echo: {e}")))?;
    let &(h, w, _) = cfg.size_schedule.last().expect("validated schedule");
    let mut net = Classifier::new(cfg.classifier.clone(), 0)?;
    net.load_state(&ckpt.tensors)?;
    Ok(LoadedClassifier {
        net,
        cfg,
        input_size: (h, w),
        epoch: ckpt.header.epoch,
        metric: ckpt.header.metric,
    })
}

pub struct LoadedUNet {
    pub net: UNet,
    pub cfg: SegTrainConfig,
}

pub fn load_unet(path: &Path) -> Result<LoadedUNet> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.header.model_kind != "unet" {
        return Err(Error::Config(format!(
            "{} is a {} checkpoint, expected a unet",
            path.display(),
            ckpt.header.model_kind
        )));
    }
    let cfg: SegTrainConfig = serde_json::from_value(ckpt.header.config.clone())
        .map_err(|e| Error::Config(format!("checkpoint config echo: {e}")))?;
    let mut net = UNet::new(cfg.unet.clone(), 0)?;
    net.load_state(&ckpt.tensors)?;
    Ok(LoadedUNet { net, cfg })
}

// ---------------------------------------------------------------------------
// Segmentation inference and cropping
// ---------------------------------------------------------------------------

/// Manifests store paths that may be resolved from other directories,
/// so stage outputs are recorded as absolute paths.
fn absolutize(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

fn single_input(image: &Array2<f32>) -> Tensor {
    let (h, w) = image.dim();
    let mut t = Tensor::zeros((1, 1, h, w));
    t.slice_mut(ndarray::s![0, 0, .., ..]).assign(image);
    t
}

/// Predict a full-resolution label mask for one image: preprocess to the
/// network size, argmax the logits, resize back with nearest neighbor.
pub fn predict_mask(model: &mut LoadedUNet, image_path: &Path) -> Result<LabelMask> {
    let original = GrayImage::load_png(image_path)?;
    let size = model.cfg.unet.input_size;
    let input = preprocess_for_model(image_path, size)?;
    let logits = model.net.forward(&single_input(&input), Mode::Eval)?;
    let (_, c, h, w) = logits.dim();
    let small = Array2::from_shape_fn((h, w), |(r, col)| {
        let mut best = (0u8, f32::NEG_INFINITY);
        for ci in 0..c {
            let v = logits[[0, ci, r, col]];
            if v > best.1 {
                best = (ci as u8, v);
            }
        }
        best.0
    });
    let small = LabelMask::new(small)?;
    crate::imgproc::resize_mask(&small, original.height(), original.width())
}

/// Run the `segment` stage: write a predicted mask per entry under
/// `out_dir/pred_masks` and return the updated manifest (paths stored
/// as absolutes). With `use_ground_truth`, the truth masks are copied
/// through, bypassing the model (oracle-mask ablations).
pub fn segment_manifest(
    manifest_path: &Path,
    checkpoint: Option<&Path>,
    use_ground_truth: bool,
    out_dir: &Path,
) -> Result<Manifest> {
    let manifest_path = &absolutize(manifest_path);
    let manifest = Manifest::load(manifest_path)?;
    let mask_dir = absolutize(out_dir).join("pred_masks");
    fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;

    let mut model = match (use_ground_truth, checkpoint) {
        (true, _) => None,
        (false, Some(p)) => Some(load_unet(p)?),
        (false, None) => {
            return Err(Error::Config(
                "segment needs a checkpoint unless --use-ground-truth is set".into(),
            ))
        }
    };

    let mut out = manifest.clone();
    for e in out.entries.iter_mut() {
        let image_abs = Manifest::resolve(manifest_path, &e.image_path);
        let pred_path = mask_dir.join(format!("{}.png", e.sample_id));
        if use_ground_truth {
            let mask_rel = e.mask_path.as_ref().ok_or_else(|| Error::UpstreamMissing {
                path: image_abs.clone(),
                stage: "generate".into(),
            })?;
            let mask_abs = Manifest::resolve(manifest_path, mask_rel);
            fs::copy(&mask_abs, &pred_path).map_err(|err| Error::io(&pred_path, err))?;
        } else {
            let mask = predict_mask(model.as_mut().expect("model loaded"), &image_abs)?;
            mask.save_png(&pred_path)?;
        }
        e.image_path = image_abs;
        e.mask_path = e
            .mask_path
            .take()
            .map(|m| Manifest::resolve(manifest_path, &m));
        e.pred_mask_path = Some(pred_path);
    }
    Ok(out)
}

/// Outcome of the `crop` stage.
pub struct CropOutcome {
    pub manifest: Manifest,
    /// Samples where SIJ localization failed and the full image was used.
    pub fallbacks: Vec<String>,
}

/// Run the `crop` stage: locate the SIJs on every predicted mask and
/// write crops under `out_dir/crops`. Localization failures abort
/// unless `fallback_full` substitutes the whole image.
pub fn crop_manifest(
    manifest_path: &Path,
    fallback_full: bool,
    out_dir: &Path,
) -> Result<CropOutcome> {
    let manifest_path = &absolutize(manifest_path);
    let manifest = Manifest::load(manifest_path)?;
    let crop_dir = absolutize(out_dir).join("crops");
    fs::create_dir_all(&crop_dir).map_err(|e| Error::io(&crop_dir, e))?;

    let mut out = manifest.clone();
    let mut fallbacks = Vec::new();
    for e in out.entries.iter_mut() {
        let image_abs = Manifest::resolve(manifest_path, &e.image_path);
        let pred_rel = e.pred_mask_path.as_ref().ok_or_else(|| Error::UpstreamMissing {
            path: image_abs.clone(),
            stage: "segment".into(),
        })?;
        let pred_abs = Manifest::resolve(manifest_path, pred_rel);
        let labels = LabelMask::load_png(&pred_abs)?;
        let seg = SegMask {
            labels,
            source: MaskSource::Model,
        };
        let image = GrayImage::load_png(&image_abs)?;
        let radius = default_dilation_radius(image.width());
        let crop_path = crop_dir.join(format!("{}.png", e.sample_id));
        match locate_sij(&seg, radius, DEFAULT_BOX_MARGIN) {
            Ok(boxes) => {
                let crop = crop_to_sij(&image, &boxes)?;
                crop.save_png(&crop_path)?;
                e.sij_boxes = Some(boxes);
            }
            Err(Error::Localization(msg)) => {
                if !fallback_full {
                    return Err(Error::Localization(format!(
                        "{msg} (sample {}); rerun with --fallback-full to substitute the full image",
                        e.sample_id
                    )));
                }
                image.save_png(&crop_path)?;
                e.sij_boxes = None;
                fallbacks.push(e.sample_id.clone());
            }
            Err(other) => return Err(other),
        }
        e.image_path = image_abs;
        e.mask_path = e
            .mask_path
            .take()
            .map(|m| Manifest::resolve(manifest_path, &m));
        e.pred_mask_path = Some(pred_abs);
        e.crop_path = Some(crop_path);
    }
    Ok(CropOutcome {
        manifest: out,
        fallbacks,
    })
}

// ---------------------------------------------------------------------------
// Scoring and reports
// ---------------------------------------------------------------------------

fn entry_input_path(
    manifest_path: &Path,
    entry: &ManifestEntry,
    variant: Variant,
) -> Result<PathBuf> {
    match variant {
        Variant::Standard => Ok(Manifest::resolve(manifest_path, &entry.image_path)),
        Variant::AnatomyAware => entry
            .crop_path
            .as_ref()
            .map(|p| Manifest::resolve(manifest_path, p))
            .ok_or_else(|| Error::UpstreamMissing {
                path: Manifest::resolve(manifest_path, &entry.image_path),
                stage: "crop".into(),
            }),
    }
}

/// Score every manifest entry with a loaded classifier: probability of
/// the positive class after the standard preprocessing.
pub fn score_manifest(
    manifest_path: &Path,
    model: &mut LoadedClassifier,
    variant: Variant,
) -> Result<ScoredSet> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.is_empty() {
        return Err(Error::Config("empty manifest".into()));
    }
    let mut entries = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let path = entry_input_path(manifest_path, e, variant)?;
        let input = preprocess_for_model(&path, model.input_size)?;
        let logits = model.net.forward(&single_input(&input), Mode::Eval)?;
        let l0 = logits[[0, 0]] as f64;
        let l1 = logits[[0, 1]] as f64;
        let m = l0.max(l1);
        let p = ((l1 - m).exp()) / ((l0 - m).exp() + (l1 - m).exp());
        entries.push(ScoredEntry {
            sample_id: e.sample_id.clone(),
            probability: p,
            label: e.label,
        });
    }
    ScoredSet::new(entries)
}

/// Score a manifest and assemble the full evaluation report at a fixed
/// cut-off.
pub fn evaluate_manifest(
    dataset: &str,
    manifest_path: &Path,
    model: &mut LoadedClassifier,
    variant: Variant,
    cutoff: f64,
    bootstrap_replicates: u64,
    seed: u64,
) -> Result<EvalReport> {
    let set = score_manifest(manifest_path, model, variant)?;
    build_report(dataset, &set, cutoff, bootstrap_replicates, seed)
}

/// Paired comparison of the two variants on one dataset: DeLong on the
/// probabilities, McNemar on the decisions at each model's own cut-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub dataset: String,
    pub n: usize,
    pub cutoff_standard: f64,
    pub cutoff_anatomy: f64,
    pub delong: DelongResult,
    pub mcnemar: McNemarResult,
}

pub fn compare_scored(
    dataset: &str,
    standard: &ScoredSet,
    anatomy: &ScoredSet,
    cutoff_standard: f64,
    cutoff_anatomy: f64,
) -> Result<ComparisonReport> {
    let delong = delong_test(standard, anatomy)?;
    // align by sample id for the paired decisions
    let mut a = standard.entries.clone();
    let mut b = anatomy.entries.clone();
    a.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    b.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    let preds_a: Vec<u8> = a
        .iter()
        .map(|e| u8::from(e.probability > cutoff_standard))
        .collect();
    let preds_b: Vec<u8> = b
        .iter()
        .map(|e| u8::from(e.probability > cutoff_anatomy))
        .collect();
    let labels: Vec<u8> = a.iter().map(|e| e.label).collect();
    let mc = mcnemar(&preds_a, &preds_b, &labels)?;
    Ok(ComparisonReport {
        dataset: dataset.to_string(),
        n: standard.len(),
        cutoff_standard,
        cutoff_anatomy,
        delong,
        mcnemar: mc,
    })
}

// ---------------------------------------------------------------------------
// Grad-CAM localization fractions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamFraction {
    pub sample_id: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamFractionSummary {
    pub variant: Variant,
    pub layer_id: String,
    pub per_sample: Vec<CamFraction>,
    pub mean: f64,
}

/// Grad-CAM heatmap for one manifest entry, embedded into the
/// full-image frame (crop-frame maps go through the stored crop offset).
pub fn cam_full_frame(
    manifest_path: &Path,
    entry: &ManifestEntry,
    model: &mut LoadedClassifier,
    variant: Variant,
    target_class: usize,
    layer: Option<&str>,
) -> Result<(Array2<f32>, String)> {
    let image_abs = Manifest::resolve(manifest_path, &entry.image_path);
    let full = GrayImage::load_png(&image_abs)?;
    let full_size = (full.height(), full.width());
    let path = entry_input_path(manifest_path, entry, variant)?;
    let input = preprocess_for_model(&path, model.input_size)?;
    let map = grad_cam(&mut model.net, &input, target_class, layer)?;
    let embedded = match variant {
        Variant::Standard => embed_full(&map.values, full_size)?,
        Variant::AnatomyAware => {
            let boxes = entry.sij_boxes.as_ref().ok_or_else(|| {
                Error::Frame(format!(
                    "sample {} has a crop but no stored crop offset",
                    entry.sample_id
                ))
            })?;
            embed_crop(&map.values, full_size, &boxes.union())?
        }
    };
    Ok((embedded, map.layer_id))
}

/// In-box activation fractions over a whole manifest, scored against
/// reference boxes (keyed by sample id; typically the generator's truth
/// boxes). The target class is the positive class.
pub fn cam_in_box_fractions(
    manifest_path: &Path,
    model: &mut LoadedClassifier,
    variant: Variant,
    layer: Option<&str>,
    reference_boxes: &HashMap<String, SijBoxes>,
) -> Result<CamFractionSummary> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.is_empty() {
        return Err(Error::Config("empty manifest".into()));
    }
    let mut per_sample = Vec::new();
    let mut layer_id = String::new();
    for e in &manifest.entries {
        let boxes = reference_boxes.get(&e.sample_id).ok_or_else(|| {
            Error::Config(format!("no reference boxes for sample {}", e.sample_id))
        })?;
        let (map, lid) = cam_full_frame(manifest_path, e, model, variant, 1, layer)?;
        layer_id = lid;
        per_sample.push(CamFraction {
            sample_id: e.sample_id.clone(),
            fraction: activation_in_box_fraction(&map, boxes)?,
        });
    }
    let mean = per_sample.iter().map(|f| f.fraction).sum::<f64>() / per_sample.len() as f64;
    Ok(CamFractionSummary {
        variant,
        layer_id,
        per_sample,
        mean,
    })
}

/// Reference boxes from a manifest that still carries them (the
/// generator writes truth boxes).
pub fn boxes_by_sample(manifest: &Manifest) -> HashMap<String, SijBoxes> {
    manifest
        .entries
        .iter()
        .filter_map(|e| e.sij_boxes.map(|b| (e.sample_id.clone(), b)))
        .collect()
}
