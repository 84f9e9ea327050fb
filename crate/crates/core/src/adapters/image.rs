use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FusorError, Result};

pub const MIN_IMAGE_SIDE: usize = 8;

/// An RGB image with values in `[0, 1]`, stored channel-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticImage {
    height: usize,
    width: usize,
    values: Vec<f64>,
    pub meta: BTreeMap<String, f64>,
}

impl SyntheticImage {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(FusorError::InvalidArgument(format!(
                "image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {height}x{width}"
            )));
        }
        if values.len() != 3 * height * width {
            return Err(FusorError::InvalidArgument(format!(
                "expected {} values for a 3x{height}x{width} image, got {}",
                3 * height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FusorError::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            meta: BTreeMap::new(),
        })
    }

    /// Builds an image from `f(channel, y, x)`, clamping into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    values.push(f(c, y, x).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(height, width, values)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; 3 * height * width])
    }

    pub fn with_meta(mut self, key: &str, value: f64) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    /// Per-pixel channel mean, row-major.
    pub fn luminance(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        (0..hw)
            .map(|i| (self.values[i] + self.values[hw + i] + self.values[2 * hw + i]) / 3.0)
            .collect()
    }

    /// Rotates 90° counter-clockwise.
    pub fn rotate90(&self) -> SyntheticImage {
        let (h, w) = (self.height, self.width);
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..3 {
            for y in 0..w {
                for x in 0..h {
                    values.push(self.get(c, x, w - 1 - y));
                }
            }
        }
        SyntheticImage {
            height: w,
            width: h,
            values,
            meta: self.meta.clone(),
        }
    }
}
