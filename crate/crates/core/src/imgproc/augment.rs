//! Stochastic augmentation. Geometric transforms (flip, rotate, zoom,
//! shear) are applied identically to image and mask; photometric
//! transforms (intensity, contrast, noise) touch the image only.
//!
//! RNG draws are consumed in a fixed order so two implementations with
//! the same stream agree: flip, rotation, zoom, shear, intensity,
//! contrast, then per-pixel noise.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Horizontal flip probability.
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    /// Zoom factor drawn from [1 - zoom_range, 1 + zoom_range].
    pub zoom_range: f64,
    pub max_shear_deg: f64,
    /// Additive shift drawn from [-intensity_shift, +intensity_shift],
    /// in the image's value units.
    pub intensity_shift: f64,
    /// Multiplicative contrast drawn from
    /// [1 - contrast_range, 1 + contrast_range] about the image mean.
    pub contrast_range: f64,
    pub gauss_noise_sigma: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            max_rotation_deg: 10.0,
            zoom_range: 0.10,
            max_shear_deg: 5.0,
            intensity_shift: 0.0,
            contrast_range: 0.0,
            gauss_noise_sigma: 0.0,
        }
    }
}

impl AugmentParams {
    /// Identity transform; useful as a config baseline.
    pub fn none() -> Self {
        Self {
            flip_prob: 0.0,
            max_rotation_deg: 0.0,
            zoom_range: 0.0,
            max_shear_deg: 0.0,
            intensity_shift: 0.0,
            contrast_range: 0.0,
            gauss_noise_sigma: 0.0,
        }
    }

    /// Segmentation-set augmentation adds photometric perturbations.
    pub fn segmentation_default() -> Self {
        Self {
            intensity_shift: 0.05,
            contrast_range: 0.10,
            gauss_noise_sigma: 0.02,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.flip_prob)
            && self.max_rotation_deg >= 0.0
            && self.max_rotation_deg <= 10.0
            && self.zoom_range >= 0.0
            && self.max_shear_deg >= 0.0
            && self.intensity_shift >= 0.0
            && self.contrast_range >= 0.0
            && self.gauss_noise_sigma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!(
                "augmentation magnitudes out of range: {self:?}"
            )))
        }
    }
}

/// Drawn transform parameters, exposed for tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Draw {
    pub flip: bool,
    pub rotation_deg: f64,
    pub zoom: f64,
    pub shear_deg: f64,
    pub intensity: f64,
    pub contrast: f64,
}

fn sample_draw(params: &AugmentParams, rng: &mut impl Rng) -> Draw {
    let flip = params.flip_prob > 0.0 && rng.gen_bool(params.flip_prob);
    let sym = |rng: &mut dyn rand::RngCore, mag: f64| {
        if mag == 0.0 {
            0.0
        } else {
            rng.gen_range(-mag..=mag)
        }
    };
    let rotation_deg = sym(rng, params.max_rotation_deg);
    let zoom = if params.zoom_range == 0.0 {
        1.0
    } else {
        rng.gen_range(1.0 - params.zoom_range..=1.0 + params.zoom_range)
    };
    let shear_deg = sym(rng, params.max_shear_deg);
    let intensity = sym(rng, params.intensity_shift);
    let contrast = if params.contrast_range == 0.0 {
        1.0
    } else {
        rng.gen_range(1.0 - params.contrast_range..=1.0 + params.contrast_range)
    };
    Draw {
        flip,
        rotation_deg,
        zoom,
        shear_deg,
        intensity,
        contrast,
    }
}

/// Inverse affine map (output -> source), composed about the image
/// center as flip, then shear, then zoom, then rotation.
fn inverse_affine(draw: &Draw) -> [[f64; 2]; 2] {
    let theta = draw.rotation_deg.to_radians();
    let shear = draw.shear_deg.to_radians().tan();
    let (sin, cos) = theta.sin_cos();
    // forward = R * Z * Sh * F; invert each factor in reverse order
    let inv_rot = [[cos, sin], [-sin, cos]];
    let iz = 1.0 / draw.zoom;
    let inv_zoom = [[iz, 0.0], [0.0, iz]];
    let inv_shear = [[1.0, -shear], [0.0, 1.0]];
    let f = if draw.flip { -1.0 } else { 1.0 };
    let inv_flip = [[1.0, 0.0], [0.0, f]];
    let mul = |a: [[f64; 2]; 2], b: [[f64; 2]; 2]| {
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        m
    };
    mul(inv_flip, mul(inv_shear, mul(inv_zoom, inv_rot)))
}

fn is_identity(m: &[[f64; 2]; 2]) -> bool {
    m[0][0] == 1.0 && m[0][1] == 0.0 && m[1][0] == 0.0 && m[1][1] == 1.0
}

fn warp_bilinear(image: &Array2<f32>, m: &[[f64; 2]; 2]) -> Array2<f32> {
    if is_identity(m) {
        return image.clone();
    }
    let (h, w) = image.dim();
    let (cr, cc) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    Array2::from_shape_fn((h, w), |(r, c)| {
        let dr = r as f64 - cr;
        let dc = c as f64 - cc;
        let sr = m[0][0] * dr + m[0][1] * dc + cr;
        let sc = m[1][0] * dr + m[1][1] * dc + cc;
        if sr < 0.0 || sc < 0.0 || sr > (h - 1) as f64 || sc > (w - 1) as f64 {
            return 0.0;
        }
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
    })
}

fn warp_nearest(mask: &Array2<u8>, m: &[[f64; 2]; 2]) -> Array2<u8> {
    if is_identity(m) {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let (cr, cc) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    Array2::from_shape_fn((h, w), |(r, c)| {
        let dr = r as f64 - cr;
        let dc = c as f64 - cc;
        let sr = (m[0][0] * dr + m[0][1] * dc + cr).round();
        let sc = (m[1][0] * dr + m[1][1] * dc + cc).round();
        if sr < 0.0 || sc < 0.0 || sr > (h - 1) as f64 || sc > (w - 1) as f64 {
            0
        } else {
            mask[[sr as usize, sc as usize]]
        }
    })
}

/// Apply one augmentation draw to an image and (optionally) its mask.
pub fn augment(
    image: &Array2<f32>,
    mask: Option<&Array2<u8>>,
    params: &AugmentParams,
    rng: &mut impl Rng,
) -> Result<(Array2<f32>, Option<Array2<u8>>)> {
    params.validate()?;
    if let Some(m) = mask {
        if m.dim() != image.dim() {
            return Err(Error::Shape {
                expected: format!("{:?}", image.dim()),
                got: format!("{:?}", m.dim()),
            });
        }
    }
    let draw = sample_draw(params, rng);
    let affine = inverse_affine(&draw);

    let mut out = warp_bilinear(image, &affine);
    let out_mask = mask.map(|m| warp_nearest(m, &affine));

    // photometric: contrast about the mean, then additive shift
    if draw.contrast != 1.0 {
        let mean = out.sum() / out.len() as f32;
        out.mapv_inplace(|v| (v - mean) * draw.contrast as f32 + mean);
    }
    if draw.intensity != 0.0 {
        out.mapv_inplace(|v| v + draw.intensity as f32);
    }
    if params.gauss_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.gauss_noise_sigma)
            .map_err(|e| Error::InvalidParam(format!("noise sigma: {e}")))?;
        out.mapv_inplace(|v| v + normal.sample(rng) as f32);
    }
    Ok((out, out_mask))
}
