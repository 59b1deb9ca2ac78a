//! Resizing with the half-pixel coordinate convention: bilinear for
//! images, nearest-neighbor for label masks.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::gray::{GrayImage, LabelMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

fn src_coord(dst: usize, scale: f64) -> f64 {
    (dst as f64 + 0.5) * scale - 0.5
}

pub fn resize_f32(
    image: &Array2<f32>,
    target_h: usize,
    target_w: usize,
    mode: ResizeMode,
) -> Result<Array2<f32>> {
    let (h, w) = image.dim();
    if target_h == 0 || target_w == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidParam("resize target must be at least 1x1".into()));
    }
    if (target_h, target_w) == (h, w) {
        return Ok(image.clone());
    }
    let scale_r = h as f64 / target_h as f64;
    let scale_c = w as f64 / target_w as f64;
    let out = match mode {
        ResizeMode::Nearest => Array2::from_shape_fn((target_h, target_w), |(r, c)| {
            let sr = src_coord(r, scale_r).round().clamp(0.0, (h - 1) as f64) as usize;
            let sc = src_coord(c, scale_c).round().clamp(0.0, (w - 1) as f64) as usize;
            image[[sr, sc]]
        }),
        ResizeMode::Bilinear => Array2::from_shape_fn((target_h, target_w), |(r, c)| {
            let sr = src_coord(r, scale_r).clamp(0.0, (h - 1) as f64);
            let sc = src_coord(c, scale_c).clamp(0.0, (w - 1) as f64);
            let r0 = sr.floor() as usize;
            let c0 = sc.floor() as usize;
            let r1 = (r0 + 1).min(h - 1);
            let c1 = (c0 + 1).min(w - 1);
            let fr = (sr - r0 as f64) as f32;
            let fc = (sc - c0 as f64) as f32;
            image[[r0, c0]] * (1.0 - fr) * (1.0 - fc)
                + image[[r0, c1]] * (1.0 - fr) * fc
                + image[[r1, c0]] * fr * (1.0 - fc)
                + image[[r1, c1]] * fr * fc
        }),
    };
    Ok(out)
}

/// Bilinear resize of a grayscale image, quantized back to its depth.
pub fn resize_image(image: &GrayImage, target_h: usize, target_w: usize) -> Result<GrayImage> {
    if (target_h, target_w) == (image.height(), image.width()) {
        return Ok(image.clone());
    }
    let f = resize_f32(&image.to_f32(), target_h, target_w, ResizeMode::Bilinear)?;
    GrayImage::from_f32(&f, image.bit_depth())
}

/// Nearest-neighbor resize of a label mask; never invents labels.
pub fn resize_mask(mask: &LabelMask, target_h: usize, target_w: usize) -> Result<LabelMask> {
    if (target_h, target_w) == (mask.height(), mask.width()) {
        return Ok(mask.clone());
    }
    let f = mask.data().mapv(|v| v as f32);
    let out = resize_f32(&f, target_h, target_w, ResizeMode::Nearest)?;
    LabelMask::new(out.mapv(|v| v as u8))
}
