//! Segmentation-driven SIJ localization: dilate the sacrum label,
//! intersect with the pelvis, keep the two largest connected components,
//! fit margined bounding boxes, and crop the radiograph to the joint
//! span plus the area in between.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gray::{GrayImage, LabelMask, Rect, LABEL_PELVIS, LABEL_SACRUM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSource {
    Model,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    pub labels: LabelMask,
    pub source: MaskSource,
}

/// Left/right SIJ boxes in full-image coordinates, ordered by centroid
/// column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SijBoxes {
    pub left: Rect,
    pub right: Rect,
    pub margin_applied: f64,
}

impl SijBoxes {
    pub fn union(&self) -> Rect {
        self.left.union(&self.right)
    }
}

/// Default dilation radius: 2% of image width, at least 1 px.
pub fn default_dilation_radius(width: usize) -> usize {
    ((width as f64 * 0.02).round() as usize).max(1)
}

pub const DEFAULT_BOX_MARGIN: f64 = 0.1;

/// Morphological dilation with a disk structuring element (pixels at
/// Euclidean distance <= radius).
pub fn dilate(mask: &Array2<bool>, radius: usize) -> Array2<bool> {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let r = radius as isize;
    let r2 = (radius * radius) as isize;
    // disk offsets, precomputed once
    let mut offsets = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r2 {
                offsets.push((dr, dc));
            }
        }
    }
    let mut out = Array2::from_elem((h, w), false);
    for ((row, col), &set) in mask.indexed_iter() {
        if !set {
            continue;
        }
        for &(dr, dc) in &offsets {
            let nr = row as isize + dr;
            let nc = col as isize + dc;
            if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w {
                out[[nr as usize, nc as usize]] = true;
            }
        }
    }
    out
}

/// One 8-connected component: pixel count, centroid, tight box.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub area: usize,
    pub centroid: (f64, f64),
    pub bbox: Rect,
    pub pixels: Vec<(usize, usize)>,
}

/// 8-connected component labelling via flood fill.
pub fn connected_components(map: &Array2<bool>) -> Vec<Component> {
    let (h, w) = map.dim();
    let mut visited = Array2::from_elem((h, w), false);
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start_r in 0..h {
        for start_c in 0..w {
            if !map[[start_r, start_c]] || visited[[start_r, start_c]] {
                continue;
            }
            stack.push((start_r, start_c));
            visited[[start_r, start_c]] = true;
            let mut pixels = Vec::new();
            let (mut sum_r, mut sum_c) = (0usize, 0usize);
            let mut bbox = Rect::new(start_r, start_c, start_r + 1, start_c + 1);
            while let Some((r, c)) = stack.pop() {
                pixels.push((r, c));
                sum_r += r;
                sum_c += c;
                bbox.row0 = bbox.row0.min(r);
                bbox.col0 = bbox.col0.min(c);
                bbox.row1 = bbox.row1.max(r + 1);
                bbox.col1 = bbox.col1.max(c + 1);
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let nr = r as isize + dr;
                        let nc = c as isize + dc;
                        if nr < 0 || nc < 0 || nr as usize >= h || nc as usize >= w {
                            continue;
                        }
                        let (nr, nc) = (nr as usize, nc as usize);
                        if map[[nr, nc]] && !visited[[nr, nc]] {
                            visited[[nr, nc]] = true;
                            stack.push((nr, nc));
                        }
                    }
                }
            }
            let area = pixels.len();
            components.push(Component {
                area,
                centroid: (sum_r as f64 / area as f64, sum_c as f64 / area as f64),
                bbox,
                pixels,
            });
        }
    }
    components
}

/// The two SIJ regions: dilate(sacrum) intersected with pelvis, then the
/// two largest 8-connected components (ties broken by leftmost
/// centroid), ordered left/right.
pub fn sij_regions(seg: &SegMask, radius: usize) -> Result<(Component, Component)> {
    let sacrum = seg.labels.binary(LABEL_SACRUM);
    let pelvis = seg.labels.binary(LABEL_PELVIS);
    if !sacrum.iter().any(|&v| v) || !pelvis.iter().any(|&v| v) {
        return Err(Error::Localization(
            "segmentation is missing the sacrum or pelvis label".into(),
        ));
    }
    let dilated = dilate(&sacrum, radius);
    let intersection = ndarray::Zip::from(&dilated)
        .and(&pelvis)
        .map_collect(|&a, &b| a && b);

    let mut components = connected_components(&intersection);
    if components.len() < 2 {
        return Err(Error::Localization(format!(
            "expected two SIJ components after intersection, found {}",
            components.len()
        )));
    }
    components.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then(a.centroid.1.partial_cmp(&b.centroid.1).unwrap())
    });
    let mut top2: Vec<Component> = components.drain(..2).collect();
    top2.sort_by(|a, b| a.centroid.1.partial_cmp(&b.centroid.1).unwrap());
    let right = top2.pop().unwrap();
    let left = top2.pop().unwrap();
    Ok((left, right))
}

/// Expand a tight box by `margin` of its own dimensions per side,
/// clamped to the image bounds.
fn expand(bbox: &Rect, margin: f64, h: usize, w: usize) -> Rect {
    let mr = (bbox.height() as f64 * margin).round() as usize;
    let mc = (bbox.width() as f64 * margin).round() as usize;
    Rect {
        row0: bbox.row0.saturating_sub(mr),
        col0: bbox.col0.saturating_sub(mc),
        row1: (bbox.row1 + mr).min(h),
        col1: (bbox.col1 + mc).min(w),
    }
}

pub fn sij_bounding_boxes(
    left: &Component,
    right: &Component,
    margin_fraction: f64,
    image_h: usize,
    image_w: usize,
) -> Result<SijBoxes> {
    if margin_fraction < 0.0 {
        return Err(Error::InvalidParam("margin must be non-negative".into()));
    }
    Ok(SijBoxes {
        left: expand(&left.bbox, margin_fraction, image_h, image_w),
        right: expand(&right.bbox, margin_fraction, image_h, image_w),
        margin_applied: margin_fraction,
    })
}

/// Full localization: regions, then margined boxes.
pub fn locate_sij(seg: &SegMask, radius: usize, margin_fraction: f64) -> Result<SijBoxes> {
    let (left, right) = sij_regions(seg, radius)?;
    sij_bounding_boxes(
        &left,
        &right,
        margin_fraction,
        seg.labels.height(),
        seg.labels.width(),
    )
}

/// Crop to the bounding rectangle of both boxes: the joints plus the
/// inter-joint region.
pub fn crop_to_sij(image: &GrayImage, boxes: &SijBoxes) -> Result<GrayImage> {
    let union = boxes.union();
    if union.is_empty() {
        return Err(Error::Crop("degenerate SIJ union box".into()));
    }
    if union.row1 > image.height() || union.col1 > image.width() {
        return Err(Error::Crop(format!(
            "boxes {union:?} exceed image {}x{}",
            image.height(),
            image.width()
        )));
    }
    let view = image
        .data()
        .slice(ndarray::s![union.row0..union.row1, union.col0..union.col1]);
    GrayImage::new(view.to_owned(), image.bit_depth())
}
