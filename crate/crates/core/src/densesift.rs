//! Multi-scale dense SIFT (PHOW-style) descriptors on a regular grid.
//!
//! For every grid point and every scale `s` the descriptor covers a square
//! support of `4s x 4s` pixels split into 4x4 spatial bins of `s` pixels.
//! Each bin holds an 8-bin histogram of gradient orientations, giving 128
//! values. Gradients come from central differences of the image blurred with
//! a Gaussian of standard deviation `s / 3`. Orientation votes are split
//! linearly between the two nearest orientation bins and bilinearly between
//! neighbouring spatial bins. Supports whose mean gradient magnitude falls
//! below the contrast threshold are discarded; the rest are L2-normalised,
//! clipped and renormalised.

use std::f32::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::ingest::GrayImage;
use crate::par;

pub const SPATIAL_BINS: usize = 4;
pub const ORIENTATION_BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = SPATIAL_BINS * SPATIAL_BINS * ORIENTATION_BINS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct DenseSiftParams {
    spacing: usize,
    scales: Vec<usize>,
    contrast_threshold: f32,
    clip: f32,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    spacing: usize,
    scales: Vec<usize>,
    contrast_threshold: f32,
    clip: f32,
}

impl TryFrom<RawParams> for DenseSiftParams {
    type Error = PadError;

    fn try_from(r: RawParams) -> Result<Self> {
        DenseSiftParams::new(r.spacing, r.scales, r.contrast_threshold, r.clip)
    }
}

impl From<DenseSiftParams> for RawParams {
    fn from(p: DenseSiftParams) -> Self {
        RawParams {
            spacing: p.spacing,
            scales: p.scales,
            contrast_threshold: p.contrast_threshold,
            clip: p.clip,
        }
    }
}

impl Default for DenseSiftParams {
    fn default() -> Self {
        Self { spacing: 5, scales: vec![5, 7, 10, 12], contrast_threshold: 0.005, clip: 0.2 }
    }
}

impl DenseSiftParams {
    pub fn new(spacing: usize, scales: Vec<usize>, contrast_threshold: f32, clip: f32) -> Result<Self> {
        if spacing == 0 {
            return Err(PadError::InvalidInput("grid spacing must be at least 1".into()));
        }
        if scales.is_empty() || scales.contains(&0) {
            return Err(PadError::InvalidInput("scales must be non-empty and at least 1".into()));
        }
        if !(contrast_threshold >= 0.0 && contrast_threshold.is_finite()) {
            return Err(PadError::InvalidInput(format!(
                "contrast threshold {contrast_threshold} must be finite and non-negative"
            )));
        }
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(PadError::InvalidInput(format!("clip value {clip} must be positive")));
        }
        Ok(Self { spacing, scales, contrast_threshold, clip })
    }

    pub fn spacing(&self) -> usize {
        self.spacing
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn contrast_threshold(&self) -> f32 {
        self.contrast_threshold
    }

    pub fn clip(&self) -> f32 {
        self.clip
    }

    pub fn with_contrast_threshold(mut self, threshold: f32) -> Result<Self> {
        self.contrast_threshold = threshold;
        Self::new(self.spacing, self.scales, self.contrast_threshold, self.clip)
    }

    /// Grid points per axis for a given side length and scale.
    pub fn grid_len(&self, side: usize, scale: usize) -> usize {
        let support = SPATIAL_BINS * scale;
        if side < support {
            0
        } else {
            (side - support) / self.spacing + 1
        }
    }

    fn max_support(&self) -> usize {
        SPATIAL_BINS * self.scales.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    /// Support centre, in pixel-edge coordinates (`0..=width`).
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    pub values: [f32; DESCRIPTOR_LEN],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub width: usize,
    pub height: usize,
    pub descriptors: Vec<Descriptor>,
}

impl DescriptorSet {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, descriptors: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// A grid descriptor before contrast filtering, with its mean gradient
/// magnitude over the support.
#[derive(Debug, Clone)]
pub struct GridSample {
    pub descriptor: Descriptor,
    pub mean_gradient: f32,
}

pub fn extract(img: &GrayImage, params: &DenseSiftParams) -> DescriptorSet {
    let descriptors = sample_grid(img, params)
        .into_iter()
        .filter(|s| s.mean_gradient >= params.contrast_threshold)
        .map(|s| s.descriptor)
        .collect();
    DescriptorSet { width: img.width(), height: img.height(), descriptors }
}

/// Every grid descriptor, scale-major then row-major, without contrast
/// filtering. Empty when the image is smaller than the largest support.
pub fn sample_grid(img: &GrayImage, params: &DenseSiftParams) -> Vec<GridSample> {
    let (w, h) = (img.width(), img.height());
    let support = params.max_support();
    if w < support || h < support {
        return Vec::new();
    }
    let mut out = Vec::new();
    for &scale in &params.scales {
        let field = OrientationField::new(img, scale);
        let weights = spatial_weights(scale);
        let (nx, ny) = (params.grid_len(w, scale), params.grid_len(h, scale));
        let rows = par::map_range(ny, |gy| {
            (0..nx)
                .map(|gx| {
                    let x0 = gx * params.spacing;
                    let y0 = gy * params.spacing;
                    describe(&field, &weights, x0, y0, scale, params.clip)
                })
                .collect::<Vec<_>>()
        });
        out.extend(rows.into_iter().flatten());
    }
    out
}

/// Per-pixel gradient magnitude split between two orientation bins.
struct OrientationField {
    width: usize,
    bin: Vec<u8>,
    lower: Vec<f32>,
    upper: Vec<f32>,
    magnitude: Vec<f32>,
}

impl OrientationField {
    fn new(img: &GrayImage, scale: usize) -> Self {
        let (w, h) = (img.width(), img.height());
        let smooth = gaussian_blur(img.data(), w, h, scale as f32 / 3.0);
        let n = w * h;
        let mut field = Self {
            width: w,
            bin: vec![0; n],
            lower: vec![0.0; n],
            upper: vec![0.0; n],
            magnitude: vec![0.0; n],
        };
        let at = |x: usize, y: usize| smooth[y * w + x];
        for y in 0..h {
            for x in 0..w {
                let gx = diff(x, w, |i| at(i, y));
                let gy = diff(y, h, |j| at(x, j));
                let m = (gx * gx + gy * gy).sqrt();
                let i = y * w + x;
                field.magnitude[i] = m;
                if m == 0.0 {
                    continue;
                }
                let mut theta = gy.atan2(gx);
                if theta < 0.0 {
                    theta += TAU;
                }
                let o = theta * ORIENTATION_BINS as f32 / TAU;
                let fl = o.floor();
                let frac = o - fl;
                field.bin[i] = (fl as usize % ORIENTATION_BINS) as u8;
                field.lower[i] = m * (1.0 - frac);
                field.upper[i] = m * frac;
            }
        }
        field
    }
}

/// Central difference, one-sided at the borders.
#[inline]
fn diff(i: usize, len: usize, f: impl Fn(usize) -> f32) -> f32 {
    if len < 2 {
        0.0
    } else if i == 0 {
        f(1) - f(0)
    } else if i == len - 1 {
        f(len - 1) - f(len - 2)
    } else {
        0.5 * (f(i + 1) - f(i - 1))
    }
}

/// Separable Gaussian blur with clamped borders.
pub(crate) fn gaussian_blur(src: &[f32], w: usize, h: usize, sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * row[clamp(x as isize + k as isize - radius, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[clamp(y as isize + k as isize - radius, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// For each pixel offset inside the support, the spatial bins it votes for
/// and the bilinear weights. Bin centres sit at `(b + 0.5) * scale`.
fn spatial_weights(scale: usize) -> Vec<[(usize, f32); 2]> {
    (0..SPATIAL_BINS * scale)
        .map(|t| {
            let u = (t as f32 + 0.5) / scale as f32 - 0.5;
            let b = u.floor();
            let f = u - b;
            let b = b as isize;
            let mut pair = [(0, 0.0); 2];
            if (0..SPATIAL_BINS as isize).contains(&b) {
                pair[0] = (b as usize, 1.0 - f);
            }
            if (0..SPATIAL_BINS as isize).contains(&(b + 1)) {
                pair[1] = ((b + 1) as usize, f);
            }
            pair
        })
        .collect()
}

fn describe(
    field: &OrientationField,
    weights: &[[(usize, f32); 2]],
    x0: usize,
    y0: usize,
    scale: usize,
    clip: f32,
) -> GridSample {
    let side = SPATIAL_BINS * scale;
    let mut hist = [0.0f32; DESCRIPTOR_LEN];
    let mut grad_sum = 0.0f64;
    for (ty, wy) in weights.iter().enumerate() {
        let row = (y0 + ty) * field.width + x0;
        for (tx, wx) in weights.iter().enumerate() {
            let i = row + tx;
            grad_sum += f64::from(field.magnitude[i]);
            let lower = field.lower[i];
            let upper = field.upper[i];
            if lower == 0.0 && upper == 0.0 {
                continue;
            }
            let o0 = field.bin[i] as usize;
            let o1 = (o0 + 1) % ORIENTATION_BINS;
            for &(by, vy) in wy {
                if vy == 0.0 {
                    continue;
                }
                for &(bx, vx) in wx {
                    let v = vy * vx;
                    if v == 0.0 {
                        continue;
                    }
                    let base = (by * SPATIAL_BINS + bx) * ORIENTATION_BINS;
                    hist[base + o0] += v * lower;
                    hist[base + o1] += v * upper;
                }
            }
        }
    }
    normalize(&mut hist, clip);
    let half = (side / 2) as f32;
    GridSample {
        descriptor: Descriptor {
            x: x0 as f32 + half,
            y: y0 as f32 + half,
            scale: scale as f32,
            values: hist,
        },
        mean_gradient: (grad_sum / (side * side) as f64) as f32,
    }
}

/// L2-normalises `v` and caps every component at `clip` while keeping unit
/// norm: the fixed point of repeating clip-then-renormalise, which scales the
/// unclipped components by the factor that restores unit length. When fewer
/// than `1 / clip^2` components are non-zero the cap cannot coexist with unit
/// norm and the non-zero components end up equal. Zero stays zero.
pub fn normalize(v: &mut [f32], clip: f32) {
    let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let unit: Vec<f64> = v.iter().map(|&x| f64::from(x) / norm).collect();
    let clip = f64::from(clip);
    let mut sorted: Vec<f64> = unit.iter().copied().filter(|&x| x > 0.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut scale = 1.0;
    let mut cap = clip;
    if sorted[0] > clip {
        // Energy left in the components below the t largest.
        let mut rest: f64 = sorted.iter().map(|x| x * x).sum();
        let mut found = false;
        for t in 1..sorted.len() {
            rest -= sorted[t - 1] * sorted[t - 1];
            let budget = 1.0 - t as f64 * clip * clip;
            if budget <= 0.0 || rest <= 0.0 {
                break;
            }
            let s = (budget / rest).sqrt();
            if s * sorted[t] <= clip {
                scale = s;
                found = true;
                break;
            }
        }
        if !found {
            scale = 0.0;
            cap = 1.0 / (sorted.len() as f64).sqrt();
        }
    }
    for (o, &u) in v.iter_mut().zip(&unit) {
        *o = if u > 0.0 && (scale == 0.0 || u * scale > cap) { cap } else { u * scale } as f32;
    }
}
