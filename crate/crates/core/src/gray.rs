//! Grayscale image and label-mask containers with PNG I/O.
//!
//! Radiograph-like images are stored as 16-bit grayscale (8-bit also
//! supported so CLAHE handles both depths); segmentation masks are 8-bit
//! with the label set {0=background, 1=pelvis, 2=sacrum}.

use std::path::Path;

use image::{ImageBuffer, Luma};
use ndarray::Array2;

use crate::error::{Error, Result};

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_PELVIS: u8 = 1;
pub const LABEL_SACRUM: u8 = 2;

/// Single-channel image with explicit bit depth (8 or 16).
///
/// Pixel values are held in `u16` regardless of depth; `max_value()` gives
/// the representable ceiling for the declared depth.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    data: Array2<u16>,
    bit_depth: u8,
}

impl GrayImage {
    pub fn new(data: Array2<u16>, bit_depth: u8) -> Result<Self> {
        if bit_depth != 8 && bit_depth != 16 {
            return Err(Error::InvalidParam(format!(
                "bit depth must be 8 or 16, got {bit_depth}"
            )));
        }
        if bit_depth == 8 && data.iter().any(|&v| v > 255) {
            return Err(Error::InvalidParam(
                "8-bit image contains values above 255".into(),
            ));
        }
        Ok(Self { data, bit_depth })
    }

    pub fn zeros(height: usize, width: usize, bit_depth: u8) -> Self {
        Self {
            data: Array2::zeros((height, width)),
            bit_depth,
        }
    }

    pub fn data(&self) -> &Array2<u16> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<u16> {
        &mut self.data
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn max_value(&self) -> u16 {
        if self.bit_depth == 8 {
            255
        } else {
            65535
        }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    /// View as `f32` values (no normalization).
    pub fn to_f32(&self) -> Array2<f32> {
        self.data.mapv(|v| v as f32)
    }

    /// Quantize an `f32` array back to this depth, clamping to range.
    pub fn from_f32(values: &Array2<f32>, bit_depth: u8) -> Result<Self> {
        let max = if bit_depth == 8 { 255.0 } else { 65535.0 };
        let data = values.mapv(|v| v.clamp(0.0, max).round() as u16);
        Self::new(data, bit_depth)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height() as u32, self.width() as u32);
        if self.bit_depth == 16 {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_fn(w, h, |x, y| Luma([self.data[[y as usize, x as usize]]]));
            buf.save(path)?;
        } else {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_fn(w, h, |x, y| Luma([self.data[[y as usize, x as usize]] as u8]));
            buf.save(path)?;
        }
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        match img {
            image::DynamicImage::ImageLuma16(buf) => {
                let (w, h) = buf.dimensions();
                let data = Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                    buf.get_pixel(c as u32, r as u32).0[0]
                });
                GrayImage::new(data, 16)
            }
            other => {
                let buf = other.into_luma8();
                let (w, h) = buf.dimensions();
                let data = Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                    buf.get_pixel(c as u32, r as u32).0[0] as u16
                });
                GrayImage::new(data, 8)
            }
        }
    }
}

/// Label mask over the same grid as its image; values in {0,1,2}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    data: Array2<u8>,
}

impl LabelMask {
    pub fn new(data: Array2<u8>) -> Result<Self> {
        if data.iter().any(|&v| v > LABEL_SACRUM) {
            return Err(Error::InvalidParam(
                "mask contains labels outside {0,1,2}".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<u8> {
        &mut self.data
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    /// Binary map of one label.
    pub fn binary(&self, label: u8) -> Array2<bool> {
        self.data.mapv(|v| v == label)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height() as u32, self.width() as u32);
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_fn(w, h, |x, y| Luma([self.data[[y as usize, x as usize]]]));
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let buf = image::open(path)?.into_luma8();
        let (w, h) = buf.dimensions();
        let data = Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
            buf.get_pixel(c as u32, r as u32).0[0]
        });
        LabelMask::new(data)
    }
}

/// Axis-aligned rectangle in image coordinates, half-open: rows
/// `row0..row1`, cols `col0..col1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Rect {
    pub fn new(row0: usize, col0: usize, row1: usize, col1: usize) -> Self {
        Self {
            row0,
            col0,
            row1,
            col1,
        }
    }

    pub fn height(&self) -> usize {
        self.row1.saturating_sub(self.row0)
    }

    pub fn width(&self) -> usize {
        self.col1.saturating_sub(self.col0)
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.row1 <= self.row0 || self.col1 <= self.col0
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row1 && col >= self.col0 && col < self.col1
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.row0 >= self.row0
            && other.col0 >= self.col0
            && other.row1 <= self.row1
            && other.col1 <= self.col1
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.row0 + self.row1) as f64 / 2.0,
            (self.col0 + self.col1) as f64 / 2.0,
        )
    }

    /// Smallest rectangle covering both.
    pub fn union(&self, other: &Rect) -> Rect {
        Rect {
            row0: self.row0.min(other.row0),
            col0: self.col0.min(other.col0),
            row1: self.row1.max(other.row1),
            col1: self.col1.max(other.col1),
        }
    }

    pub fn intersection_area(&self, other: &Rect) -> usize {
        let r0 = self.row0.max(other.row0);
        let c0 = self.col0.max(other.col0);
        let r1 = self.row1.min(other.row1);
        let c1 = self.col1.min(other.col1);
        if r1 > r0 && c1 > c0 {
            (r1 - r0) * (c1 - c0)
        } else {
            0
        }
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other) as f64;
        let union = self.area() as f64 + other.area() as f64 - inter;
        if union == 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn png_roundtrip_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = GrayImage::new(array![[0u16, 1000], [40000, 65535]], 16).unwrap();
        img.save_png(&path).unwrap();
        let back = GrayImage::load_png(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn mask_rejects_bad_labels() {
        assert!(LabelMask::new(array![[0u8, 3]]).is_err());
    }

    #[test]
    fn rect_iou_identity() {
        let r = Rect::new(2, 3, 10, 20);
        assert_eq!(r.iou(&r), 1.0);
        let disjoint = Rect::new(50, 50, 60, 60);
        assert_eq!(r.iou(&disjoint), 0.0);
    }
}
