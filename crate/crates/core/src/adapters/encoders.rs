//! Mock encoder views with known inductive biases.
//!
//! | view         | output                                   | responds to                 |
//! |--------------|------------------------------------------|-----------------------------|
//! | `downsample` | average-pooled RGB                        | global color balance        |
//! | `edge`       | pooled `|∂x|`, `|∂y|` of luminance         | fine structure              |
//! | `stat`       | per-cell luminance mean, chroma deviation | brightness, chroma grain    |
//! | `blur`       | `|G_σ * lum − mean|`, pooled               | coarse light layout         |
//!
//! Luminance-preserving chroma perturbations are invisible to `edge` and
//! `blur`; luminance patterns are invisible to the chroma channel of `stat`.

use crate::error::{FusorError, Result};
use crate::feature::FeatureMap;

use super::image::SyntheticImage;

pub const EDGE_GAIN: f64 = 5.0;
pub const CHROMA_GAIN: f64 = 10.0;
pub const BLUR_GAIN: f64 = 10.0;
pub const BLUR_SIGMA: f64 = 2.0;

pub const MOCK_ENCODER_NAMES: [&str; 4] = ["downsample", "edge", "stat", "blur"];

pub trait EncoderAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn native_shape(&self) -> (usize, usize, usize);
    fn encode(&self, image: &SyntheticImage) -> Result<FeatureMap>;
}

/// Averages a row-major `h × w` plane into a `grid × grid` plane.
fn pool_plane(plane: &[f64], h: usize, w: usize, grid: usize) -> Vec<f64> {
    let (ch, cw) = (h / grid, w / grid);
    let inv = 1.0 / (ch * cw) as f64;
    let mut out = vec![0.0; grid * grid];
    for gy in 0..grid {
        for gx in 0..grid {
            let mut s = 0.0;
            for y in gy * ch..(gy + 1) * ch {
                for x in gx * cw..(gx + 1) * cw {
                    s += plane[y * w + x];
                }
            }
            out[gy * grid + gx] = s * inv;
        }
    }
    out
}

fn check_divisible(name: &str, image: &SyntheticImage, grid: usize) -> Result<()> {
    if !image.height().is_multiple_of(grid) || !image.width().is_multiple_of(grid) || image.height() < grid {
        return Err(FusorError::InvalidArgument(format!(
            "{name} view needs image sides divisible by {grid}, got {}x{}",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct DownsampleView {
    pub grid: usize,
}

impl EncoderAdapter for DownsampleView {
    fn name(&self) -> &str {
        "downsample"
    }

    fn native_shape(&self) -> (usize, usize, usize) {
        (3, self.grid, self.grid)
    }

    fn encode(&self, image: &SyntheticImage) -> Result<FeatureMap> {
        check_divisible(self.name(), image, self.grid)?;
        let (h, w) = (image.height(), image.width());
        let mut values = Vec::with_capacity(3 * self.grid * self.grid);
        for plane in image.values().chunks(h * w) {
            values.extend(pool_plane(plane, h, w, self.grid));
        }
        FeatureMap::new(3, self.grid, self.grid, values)
    }
}

#[derive(Clone, Debug)]
pub struct EdgeView {
    pub grid: usize,
}

impl EncoderAdapter for EdgeView {
    fn name(&self) -> &str {
        "edge"
    }

    fn native_shape(&self) -> (usize, usize, usize) {
        (2, self.grid, self.grid)
    }

    fn encode(&self, image: &SyntheticImage) -> Result<FeatureMap> {
        check_divisible(self.name(), image, self.grid)?;
        let (h, w) = (image.height(), image.width());
        let lum = image.luminance();
        let mut dx = vec![0.0; h * w];
        let mut dy = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let v = lum[y * w + x];
                if x + 1 < w {
                    dx[y * w + x] = (lum[y * w + x + 1] - v).abs() * EDGE_GAIN;
                }
                if y + 1 < h {
                    dy[y * w + x] = (lum[(y + 1) * w + x] - v).abs() * EDGE_GAIN;
                }
            }
        }
        let mut values = pool_plane(&dx, h, w, self.grid);
        values.extend(pool_plane(&dy, h, w, self.grid));
        FeatureMap::new(2, self.grid, self.grid, values)
    }
}

/// Cell statistics: channel 0 is mean luminance, channel 1 the RMS of each
/// pixel's chroma after removing per-channel cell means and the pixel's
/// luminance deviation.
#[derive(Clone, Debug)]
pub struct StatView {
    pub grid: usize,
}

impl EncoderAdapter for StatView {
    fn name(&self) -> &str {
        "stat"
    }

    fn native_shape(&self) -> (usize, usize, usize) {
        (2, self.grid, self.grid)
    }

    fn encode(&self, image: &SyntheticImage) -> Result<FeatureMap> {
        check_divisible(self.name(), image, self.grid)?;
        let (h, w) = (image.height(), image.width());
        let (ch, cw) = (h / self.grid, w / self.grid);
        let lum = image.luminance();
        let cells = self.grid * self.grid;
        let mut mean_lum = vec![0.0; cells];
        let mut chroma = vec![0.0; cells];
        let n = (ch * cw) as f64;
        for gy in 0..self.grid {
            for gx in 0..self.grid {
                let pixels = || {
                    (gy * ch..(gy + 1) * ch)
                        .flat_map(move |y| (gx * cw..(gx + 1) * cw).map(move |x| (y, x)))
                };
                let lm = pixels().map(|(y, x)| lum[y * w + x]).sum::<f64>() / n;
                let cm: Vec<f64> = (0..3)
                    .map(|c| pixels().map(|(y, x)| image.get(c, y, x)).sum::<f64>() / n)
                    .collect();
                let mut ss = 0.0;
                for (y, x) in pixels() {
                    let dl = lum[y * w + x] - lm;
                    for (c, m) in cm.iter().enumerate() {
                        let r = image.get(c, y, x) - m - dl;
                        ss += r * r;
                    }
                }
                mean_lum[gy * self.grid + gx] = lm;
                chroma[gy * self.grid + gx] = (ss / (3.0 * n)).sqrt() * CHROMA_GAIN;
            }
        }
        mean_lum.extend(chroma);
        FeatureMap::new(2, self.grid, self.grid, mean_lum)
    }
}

#[derive(Clone, Debug)]
pub struct BlurView {
    pub grid: usize,
    pub sigma: f64,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with edge clamping.
fn blur_plane(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * plane[y * w + clamp(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[clamp(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

impl EncoderAdapter for BlurView {
    fn name(&self) -> &str {
        "blur"
    }

    fn native_shape(&self) -> (usize, usize, usize) {
        (1, self.grid, self.grid)
    }

    fn encode(&self, image: &SyntheticImage) -> Result<FeatureMap> {
        check_divisible(self.name(), image, self.grid)?;
        let (h, w) = (image.height(), image.width());
        let blurred = blur_plane(&image.luminance(), h, w, self.sigma);
        let pooled = pool_plane(&blurred, h, w, self.grid);
        let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
        let values = pooled.iter().map(|v| (v - mean).abs() * BLUR_GAIN).collect();
        FeatureMap::new(1, self.grid, self.grid, values)
    }
}

/// Builds the named mock views. Native grids are 8, 16, 4 and 8 cells for
/// `downsample`, `edge`, `stat` and `blur`.
pub fn mock_encoders(names: &[&str]) -> Result<Vec<Box<dyn EncoderAdapter>>> {
    names
        .iter()
        .map(|&name| -> Result<Box<dyn EncoderAdapter>> {
            Ok(match name {
                "downsample" => Box::new(DownsampleView { grid: 8 }),
                "edge" => Box::new(EdgeView { grid: 16 }),
                "stat" => Box::new(StatView { grid: 4 }),
                "blur" => Box::new(BlurView {
                    grid: 8,
                    sigma: BLUR_SIGMA,
                }),
                other => return Err(FusorError::UnknownEncoder(other.to_string())),
            })
        })
        .collect()
}

/// All four views in canonical order.
pub fn default_mock_encoders() -> Vec<Box<dyn EncoderAdapter>> {
    mock_encoders(&MOCK_ENCODER_NAMES).expect("built-in names")
}

pub fn encode_all(encoders: &[Box<dyn EncoderAdapter>], image: &SyntheticImage) -> Result<Vec<FeatureMap>> {
    encoders.iter().map(|e| e.encode(image)).collect()
}
