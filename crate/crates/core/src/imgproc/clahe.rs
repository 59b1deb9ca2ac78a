//! Contrast-limited adaptive histogram equalization.
//!
//! The image is partitioned into a tile grid; each tile's histogram is
//! clipped at `clip_limit * tile_pixels / bins` with the excess
//! redistributed uniformly in a single pass, and the resulting CDF
//! mappings are bilinearly interpolated between tile centers.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gray::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    pub tiles: (usize, usize),
    /// Normalized clip limit: a bin is clipped at
    /// `clip_limit * tile_pixels / bins`. `f64::INFINITY` disables clipping.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tiles: (8, 8),
            clip_limit: 2.0,
            bins: 256,
        }
    }
}

struct TileGrid {
    row_bounds: Vec<usize>,
    col_bounds: Vec<usize>,
}

impl TileGrid {
    fn new(height: usize, width: usize, rows: usize, cols: usize) -> Self {
        let row_bounds = (0..=rows).map(|r| r * height / rows).collect();
        let col_bounds = (0..=cols).map(|c| c * width / cols).collect();
        Self {
            row_bounds,
            col_bounds,
        }
    }

    fn center_row(&self, r: usize) -> f64 {
        (self.row_bounds[r] + self.row_bounds[r + 1]) as f64 / 2.0
    }

    fn center_col(&self, c: usize) -> f64 {
        (self.col_bounds[c] + self.col_bounds[c + 1]) as f64 / 2.0
    }
}

fn bin_of(value: u16, bins: usize, max_value: u16) -> usize {
    (value as usize * bins) / (max_value as usize + 1)
}

/// Clipped, renormalized CDF mapping for one tile: bin -> output value.
fn tile_mapping(
    image: &Array2<u16>,
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
    params: &ClaheParams,
    max_value: u16,
) -> Vec<f64> {
    let bins = params.bins;
    let mut hist = vec![0.0f64; bins];
    for r in r0..r1 {
        for c in c0..c1 {
            hist[bin_of(image[[r, c]], bins, max_value)] += 1.0;
        }
    }
    let tile_pixels = ((r1 - r0) * (c1 - c0)) as f64;

    if params.clip_limit.is_finite() {
        let clip = params.clip_limit * tile_pixels / bins as f64;
        let mut excess = 0.0;
        for h in hist.iter_mut() {
            if *h > clip {
                excess += *h - clip;
                *h = clip;
            }
        }
        let share = excess / bins as f64;
        for h in hist.iter_mut() {
            *h += share;
        }
    }

    let mut cdf = 0.0;
    hist.iter()
        .map(|&h| {
            cdf += h;
            cdf / tile_pixels * max_value as f64
        })
        .collect()
}

pub fn clahe(image: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    let (rows, cols) = params.tiles;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParam("tile grid must be at least 1x1".into()));
    }
    if params.clip_limit <= 0.0 {
        return Err(Error::InvalidParam("clip limit must be positive".into()));
    }
    if params.bins < 2 {
        return Err(Error::InvalidParam("need at least 2 histogram bins".into()));
    }
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return Err(Error::InvalidParam("empty image".into()));
    }
    if h / rows < 2 || w / cols < 2 {
        return Err(Error::InvalidParam(format!(
            "tiles smaller than 2x2 pixels for {h}x{w} image with {rows}x{cols} grid"
        )));
    }

    let max_value = image.max_value();
    let grid = TileGrid::new(h, w, rows, cols);
    let mut mappings = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            mappings.push(tile_mapping(
                image.data(),
                grid.row_bounds[r],
                grid.row_bounds[r + 1],
                grid.col_bounds[c],
                grid.col_bounds[c + 1],
                params,
                max_value,
            ));
        }
    }
    let map_at = |tr: usize, tc: usize, bin: usize| mappings[tr * cols + tc][bin];

    // index of the last tile center at or before `pos`, with clamping
    let locate = |pos: f64, centers: &dyn Fn(usize) -> f64, n: usize| -> (usize, usize, f64) {
        if pos <= centers(0) {
            return (0, 0, 0.0);
        }
        if pos >= centers(n - 1) {
            return (n - 1, n - 1, 0.0);
        }
        let mut i = 0;
        while centers(i + 1) < pos {
            i += 1;
        }
        let span = centers(i + 1) - centers(i);
        (i, i + 1, (pos - centers(i)) / span)
    };

    let mut out = Array2::<u16>::zeros((h, w));
    let center_row = |r: usize| grid.center_row(r);
    let center_col = |c: usize| grid.center_col(c);
    for r in 0..h {
        let (tr0, tr1, fr) = locate(r as f64 + 0.5, &center_row, rows);
        for c in 0..w {
            let (tc0, tc1, fc) = locate(c as f64 + 0.5, &center_col, cols);
            let bin = bin_of(image.data()[[r, c]], params.bins, max_value);
            let top = map_at(tr0, tc0, bin) * (1.0 - fc) + map_at(tr0, tc1, bin) * fc;
            let bottom = map_at(tr1, tc0, bin) * (1.0 - fc) + map_at(tr1, tc1, bin) * fc;
            let value = top * (1.0 - fr) + bottom * fr;
            out[[r, c]] = value.round().clamp(0.0, max_value as f64) as u16;
        }
    }
    GrayImage::new(out, image.bit_depth())
}
