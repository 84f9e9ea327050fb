//! Encoder feature maps and bilinear resampling.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, FusorError, Result};
use crate::tensor::Matrix;

/// One encoder's `C × H × W` output, stored channel-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(FusorError::InvalidArgument(format!(
                "feature map dims must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(shape_err(
                format!("{} values", channels * height * width),
                format!("{} values", values.len()),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(FusorError::InvalidArgument(format!(
                "feature map contains non-finite value {bad}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    values.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, values)
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    /// Flattens to `(H·W) × C` tokens in row-major spatial order.
    pub fn to_tokens(&self) -> Matrix {
        let hw = self.height * self.width;
        Matrix::from_fn(hw, self.channels, |t, c| self.values[c * hw + t])
    }

    /// Inverse of [`FeatureMap::to_tokens`].
    pub fn from_tokens(tokens: &Matrix, height: usize, width: usize) -> Result<Self> {
        if tokens.rows() != height * width {
            return Err(shape_err(
                format!("{} tokens", height * width),
                format!("{} tokens", tokens.rows()),
            ));
        }
        let channels = tokens.cols();
        Self::from_fn(channels, height, width, |c, y, x| {
            tokens.get(y * width + x, c)
        })
    }

    /// Spatial mean of each channel.
    pub fn pooled(&self) -> Vec<f64> {
        let hw = (self.height * self.width) as f64;
        self.values
            .chunks(self.height * self.width)
            .map(|ch| ch.iter().sum::<f64>() / hw)
            .collect()
    }
}

/// Bilinear resampling to `target = (C, H, W)` with half-pixel centers and
/// edge clamping. Channels are not resampled: `target.0` must equal the
/// source channel count.
pub fn interpolate(x: &FeatureMap, target: (usize, usize, usize)) -> Result<FeatureMap> {
    let (tc, th, tw) = target;
    if tc == 0 || th == 0 || tw == 0 {
        return Err(FusorError::InvalidArgument(format!(
            "interpolation target dims must be >= 1, got {tc}x{th}x{tw}"
        )));
    }
    if tc != x.channels {
        return Err(shape_err(
            format!("{} channels (spatial-only resampling)", x.channels),
            format!("{tc} channels"),
        ));
    }
    if (th, tw) == (x.height, x.width) {
        return Ok(x.clone());
    }
    let ys = sample_axis(x.height, th);
    let xs = sample_axis(x.width, tw);
    FeatureMap::from_fn(tc, th, tw, |c, oy, ox| {
        let (y0, y1, wy) = ys[oy];
        let (x0, x1, wx) = xs[ox];
        let top = x.get(c, y0, x0) * (1.0 - wx) + x.get(c, y0, x1) * wx;
        let bottom = x.get(c, y1, x0) * (1.0 - wx) + x.get(c, y1, x1) * wx;
        top * (1.0 - wy) + bottom * wy
    })
}

fn sample_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Resamples every map to `(height, width)`, keeping each map's channels.
pub fn align_spatial(maps: &[FeatureMap], height: usize, width: usize) -> Result<Vec<FeatureMap>> {
    maps.iter()
        .map(|m| interpolate(m, (m.channels, height, width)))
        .collect()
}

/// `N` feature maps sharing one canonical `(C, H, W)` shape; index is encoder identity.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    maps: Vec<FeatureMap>,
    shape: (usize, usize, usize),
}

impl FeatureSet {
    pub fn new(maps: Vec<FeatureMap>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| FusorError::InvalidArgument("feature set needs >= 1 map".into()))?;
        let shape = first.shape();
        if let Some(bad) = maps.iter().find(|m| m.shape() != shape) {
            return Err(shape_err(format!("{shape:?}"), format!("{:?}", bad.shape())));
        }
        Ok(Self { maps, shape })
    }

    /// Interpolates raw maps onto `shape`.
    pub fn from_raw(raw: &[FeatureMap], shape: (usize, usize, usize)) -> Result<Self> {
        let maps = raw
            .iter()
            .map(|m| interpolate(m, shape))
            .collect::<Result<Vec<_>>>()?;
        Self::new(maps)
    }

    pub fn maps(&self) -> &[FeatureMap] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn canonical_shape(&self) -> (usize, usize, usize) {
        self.shape
    }
}
