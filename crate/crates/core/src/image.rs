//! Dense per-view rasters: linear RGB images and masked depth maps.

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

/// Linear RGB image with components in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, value: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::SizeMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: Rgb) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn same_size<T: Sized2d>(&self, other: &T) -> bool {
        self.width == other.width() && self.height == other.height()
    }

    /// Round-trips every component through 8-bit storage.
    pub fn quantized(&self) -> Self {
        let pixels = self
            .pixels
            .iter()
            .map(|p| p.map(|c| f64::from((c.clamp(0.0, 1.0) * 255.0).round() as u8) / 255.0))
            .collect();
        Self {
            width: self.width,
            height: self.height,
            pixels,
        }
    }
}

/// Depth in meters with a validity mask. Valid entries are finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// An all-invalid map.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Builds a map whose mask marks every finite positive value valid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::SizeMismatch(format!(
                "{} depth values for a {width}x{height} map",
                values.len()
            )));
        }
        let valid = values.iter().map(|&d| d.is_finite() && d > 0.0).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// Builds a map from values and a mask; masked-in entries must be finite and positive.
    pub fn with_mask(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::SizeMismatch(format!(
                "depth map buffers of length {}/{} for {width}x{height}",
                values.len(),
                valid.len()
            )));
        }
        if let Some(i) = values
            .iter()
            .zip(&valid)
            .position(|(&d, &v)| v && !(d.is_finite() && d > 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "valid depth entry {i} is {} (must be finite and > 0)",
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = self.index(x, y);
        self.valid[i].then(|| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn is_dense(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn same_size<T: Sized2d>(&self, other: &T) -> bool {
        self.width == other.width() && self.height == other.height()
    }

    /// Multiplies every value by `factor`; the mask is unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|d| d * factor).collect(),
            valid: self.valid.clone(),
        }
    }

    /// Valid values in raster order.
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|(&d, _)| d)
    }

    /// Round-trips every value through `f32`, matching what a PFM file stores.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&d| d as f32 as f64).collect(),
            valid: self.valid.clone(),
        }
    }
}

pub trait Sized2d {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
}

impl Sized2d for Image {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl Sized2d for DepthMap {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

pub(crate) fn ensure_same_size(a: &impl Sized2d, b: &impl Sized2d, what: &str) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::SizeMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}
