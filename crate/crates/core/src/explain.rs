//! Grad-CAM heatmaps and the quantitative localization metric: the
//! fraction of total activation falling inside the SIJ boxes.

use std::path::Path;

use ndarray::Array2;

use crate::anatomy::SijBoxes;
use crate::error::{Error, Result};
use crate::gray::{GrayImage, Rect};
use crate::imgproc::{resize_f32, ResizeMode};
use crate::nets::Classifier;
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    /// Non-negative activations, max-normalized to [0,1] unless all-zero.
    pub values: Array2<f32>,
    pub target_class: usize,
    pub layer_id: String,
}

/// Raw class-activation map from captured features and score gradients:
/// per-channel weights are the spatial means of the gradient, the map is
/// the ReLU of the weighted channel sum. Input tensors are (1, C, h, w).
pub fn cam_from_capture(features: &Tensor, grad: &Tensor) -> Result<Array2<f32>> {
    if features.dim() != grad.dim() || features.dim().0 != 1 {
        return Err(Error::Shape {
            expected: format!("matching (1, C, h, w), features {:?}", features.dim()),
            got: format!("{:?}", grad.dim()),
        });
    }
    let (_, c, h, w) = features.dim();
    let spatial = (h * w) as f32;
    let mut map = Array2::<f32>::zeros((h, w));
    for k in 0..c {
        let weight: f32 = grad
            .slice(ndarray::s![0, k, .., ..])
            .iter()
            .sum::<f32>()
            / spatial;
        for r in 0..h {
            for col in 0..w {
                map[[r, col]] += weight * features[[0, k, r, col]];
            }
        }
    }
    map.mapv_inplace(|v| v.max(0.0));
    Ok(map)
}

fn max_normalize(map: &mut Array2<f32>) {
    let max = map.iter().fold(0.0f32, |a, &b| a.max(b));
    if max > 0.0 {
        map.mapv_inplace(|v| v / max);
    }
}

/// Grad-CAM for one preprocessed input image (z-normalized, model input
/// size). `layer_id` of `None` selects the last convolutional stage.
pub fn grad_cam(
    model: &mut Classifier,
    input: &Array2<f32>,
    target_class: usize,
    layer_id: Option<&str>,
) -> Result<HeatMap> {
    let layer = layer_id
        .map(str::to_string)
        .unwrap_or_else(|| model.config.default_cam_layer());
    let (h, w) = input.dim();
    let mut x = Tensor::zeros((1, 1, h, w));
    x.slice_mut(ndarray::s![0, 0, .., ..]).assign(input);
    let (features, grad) = model.grad_cam_capture(&x, target_class, &layer)?;
    let map = cam_from_capture(&features, &grad)?;
    let mut values = resize_f32(&map, h, w, ResizeMode::Bilinear)?;
    values.mapv_inplace(|v| v.max(0.0));
    max_normalize(&mut values);
    Ok(HeatMap {
        values,
        target_class,
        layer_id: layer,
    })
}

/// Resize a model-input heatmap to the full-image frame (standard
/// variant: the input covered the whole image).
pub fn embed_full(values: &Array2<f32>, full_size: (usize, usize)) -> Result<Array2<f32>> {
    resize_f32(values, full_size.0, full_size.1, ResizeMode::Bilinear)
}

/// Re-embed a crop-frame heatmap into the full-image frame through the
/// crop offset: the map is resized to the crop rectangle and pasted at
/// its position; everything outside the crop is zero.
pub fn embed_crop(
    values: &Array2<f32>,
    full_size: (usize, usize),
    crop: &Rect,
) -> Result<Array2<f32>> {
    if crop.is_empty() || crop.row1 > full_size.0 || crop.col1 > full_size.1 {
        return Err(Error::Frame(format!(
            "crop rectangle {crop:?} does not fit a {}x{} image",
            full_size.0, full_size.1
        )));
    }
    let patch = resize_f32(values, crop.height(), crop.width(), ResizeMode::Bilinear)?;
    let mut out = Array2::<f32>::zeros(full_size);
    out.slice_mut(ndarray::s![crop.row0..crop.row1, crop.col0..crop.col1])
        .assign(&patch);
    Ok(out)
}

/// Fraction of total activation inside the SIJ boxes (union of left and
/// right, each pixel counted once). Both map and boxes must be in the
/// full-image frame. An all-zero map scores 0.
pub fn activation_in_box_fraction(values: &Array2<f32>, boxes: &SijBoxes) -> Result<f64> {
    let (h, w) = values.dim();
    for b in [&boxes.left, &boxes.right] {
        if b.row1 > h || b.col1 > w {
            return Err(Error::Frame(format!(
                "box {b:?} outside the {h}x{w} map — frames disagree"
            )));
        }
    }
    if values.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("heatmap values must be non-negative".into()));
    }
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for ((r, c), &v) in values.indexed_iter() {
        total += v as f64;
        if boxes.left.contains(r, c) || boxes.right.contains(r, c) {
            inside += v as f64;
        }
    }
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(inside / total)
}

/// Save a [0,1] heatmap as a 16-bit grayscale PNG.
pub fn save_heatmap_png(values: &Array2<f32>, path: &Path) -> Result<()> {
    let img = GrayImage::from_f32(&values.mapv(|v| v.clamp(0.0, 1.0)), 16)?;
    img.save_png(path)
}

/// Save a blend of the underlying [0,1] image and the heatmap as a
/// 16-bit grayscale PNG overlay.
pub fn save_overlay_png(image01: &Array2<f32>, values: &Array2<f32>, path: &Path) -> Result<()> {
    if image01.dim() != values.dim() {
        return Err(Error::Shape {
            expected: format!("{:?}", image01.dim()),
            got: format!("{:?}", values.dim()),
        });
    }
    let blend = image01
        .iter()
        .zip(values.iter())
        .map(|(&i, &v)| (0.55 * i + 0.45 * v).clamp(0.0, 1.0))
        .collect::<Vec<f32>>();
    let blend = Array2::from_shape_vec(image01.raw_dim(), blend).expect("same shape");
    GrayImage::from_f32(&blend, 16)?.save_png(path)
}

/// Raw heatmap export: height, width, and row-major f32 values as JSON.
pub fn save_heatmap_raw(map: &HeatMap, path: &Path) -> Result<()> {
    let (h, w) = map.values.dim();
    let doc = serde_json::json!({
        "height": h,
        "width": w,
        "target_class": map.target_class,
        "layer_id": map.layer_id,
        "values": map.values.iter().copied().collect::<Vec<f32>>(),
    });
    std::fs::write(path, serde_json::to_string(&doc)?).map_err(|e| Error::io(path, e))
}
