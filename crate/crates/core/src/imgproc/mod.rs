//! Deterministic preprocessing and stochastic augmentation shared by the
//! standard and anatomy-aware paths.

mod augment;
mod clahe;
mod resize;

pub use augment::{augment, AugmentParams};
pub use clahe::{clahe, ClaheParams};
pub use resize::{resize_f32, resize_image, resize_mask, ResizeMode};

use ndarray::{Array, Array2, Dimension};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-image z-score normalization; a constant image maps to all zeros.
pub fn znormalize(image: &Array2<f32>) -> Array2<f32> {
    let n = image.len() as f32;
    let mean = image.sum() / n;
    let var = image.mapv(|v| (v - mean).powi(2)).sum() / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        Array2::zeros(image.raw_dim())
    } else {
        image.mapv(|v| (v - mean) / sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixupParams {
    /// Beta-distribution concentration for the mixing weight.
    pub alpha: f64,
}

impl Default for MixupParams {
    fn default() -> Self {
        Self { alpha: 0.2 }
    }
}

/// Draw the mixup weight lambda ~ Beta(alpha, alpha).
pub fn mixup_lambda(params: &MixupParams, rng: &mut impl Rng) -> Result<f64> {
    if params.alpha <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "mixup alpha must be positive, got {}",
            params.alpha
        )));
    }
    let beta = Beta::new(params.alpha, params.alpha)
        .map_err(|e| Error::InvalidParam(format!("beta distribution: {e}")))?;
    Ok(beta.sample(rng))
}

/// Convex combination of two inputs with the given weight; the training
/// loss contract is `lambda * loss(y_a) + (1 - lambda) * loss(y_b)`.
pub fn mixup_blend<D: Dimension>(
    x_a: &Array<f32, D>,
    x_b: &Array<f32, D>,
    lambda: f64,
) -> Result<Array<f32, D>> {
    if x_a.raw_dim() != x_b.raw_dim() {
        return Err(Error::Shape {
            expected: format!("{:?}", x_a.shape()),
            got: format!("{:?}", x_b.shape()),
        });
    }
    let l = lambda as f32;
    Ok(x_a * l + x_b * (1.0 - l))
}

/// Full mixup draw: sample lambda and blend.
pub fn mixup<D: Dimension>(
    x_a: &Array<f32, D>,
    x_b: &Array<f32, D>,
    params: &MixupParams,
    rng: &mut impl Rng,
) -> Result<(Array<f32, D>, f64)> {
    let lambda = mixup_lambda(params, rng)?;
    Ok((mixup_blend(x_a, x_b, lambda)?, lambda))
}
