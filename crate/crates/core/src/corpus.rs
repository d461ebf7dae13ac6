//! Synthetic fingerprint-like corpus.
//!
//! Bona fide images are oriented sinusoidal ridge patterns whose orientation
//! swirls around a random core, with mild sensor noise. Attack images start
//! from the same kind of pattern with a slightly wider ridge period, then are
//! low-pass blurred, lose contrast and receive a correlated material grain,
//! stronger noise and blotches. Each attack material has its own spread,
//! blur, grain, noise and blotch settings.

use std::f32::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::densesift::gaussian_blur;
use crate::error::{PadError, Result};
use crate::ingest::{save_pgm, write_manifest, GrayImage, Label, SampleRecord, NO_MATERIAL};
use crate::{par, seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub bona_fide: usize,
    pub attacks: usize,
    /// Square image side in pixels.
    pub size: usize,
    pub seed: u64,
    pub materials: Vec<String>,
    pub sensors: Vec<String>,
    pub datasets: Vec<String>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            bona_fide: 100,
            attacks: 100,
            size: 128,
            seed: 0,
            materials: ["gelatine", "latex", "playdoh", "silicone", "woodglue"].map(String::from).to_vec(),
            sensors: ["sensor_a", "sensor_b"].map(String::from).to_vec(),
            datasets: vec!["synthetic".into()],
        }
    }
}

/// Appearance of one attack material.
#[derive(Debug, Clone, Copy)]
struct Material {
    /// Ridge period multiplier.
    spread: f32,
    blur: f32,
    /// Standard deviation of the smoothed grain texture.
    grain: f32,
    contrast: f32,
    noise: f32,
    blotches: usize,
}

fn material_params(index: usize) -> Material {
    const TABLE: [Material; 5] = [
        Material { spread: 1.2, blur: 1.6, grain: 0.12, contrast: 0.55, noise: 0.07, blotches: 4 },
        Material { spread: 1.25, blur: 2.0, grain: 0.13, contrast: 0.65, noise: 0.06, blotches: 6 },
        Material { spread: 1.3, blur: 2.4, grain: 0.14, contrast: 0.5, noise: 0.09, blotches: 8 },
        Material { spread: 1.15, blur: 1.4, grain: 0.15, contrast: 0.6, noise: 0.1, blotches: 3 },
        Material { spread: 1.2, blur: 1.8, grain: 0.13, contrast: 0.45, noise: 0.08, blotches: 5 },
    ];
    TABLE[index % TABLE.len()]
}

/// Sensor-dependent ridge period range and noise level.
fn sensor_params(index: usize) -> (f32, f32, f32) {
    match index % 3 {
        0 => (7.0, 10.0, 0.025),
        1 => (8.0, 11.0, 0.03),
        _ => (6.5, 9.5, 0.02),
    }
}

fn ridges(size: usize, rng: &mut ChaCha8Rng, period: (f32, f32)) -> Vec<f32> {
    let s = size as f32;
    let cx = rng.gen_range(0.3..0.7) * s;
    let cy = rng.gen_range(0.3..0.7) * s;
    let base = rng.gen_range(0.0..PI);
    let swirl = rng.gen_range(0.3..0.6);
    let freq = 2.0 * PI / rng.gen_range(period.0..period.1);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            let r = (dx * dx + dy * dy).sqrt();
            let theta = base + swirl * dy.atan2(dx);
            // Ridges run along theta, so the wave travels across it.
            let u = -dx * theta.sin() + dy * theta.cos();
            let curl = 0.02 * r * r / s;
            out[y * size + x] = 0.5 + 0.4 * (freq * (u + curl) + phase).sin();
        }
    }
    out
}

/// Adds white noise smoothed at a two-pixel scale, rescaled to `std`.
fn add_grain(img: &mut [f32], size: usize, rng: &mut ChaCha8Rng, std: f32) {
    let mut white = vec![0.0; size * size];
    add_noise(&mut white, rng, 1.0);
    let smooth = gaussian_blur(&white, size, size, 1.0);
    let rms = (smooth.iter().map(|v| v * v).sum::<f32>() / smooth.len() as f32).sqrt();
    img.iter_mut().zip(&smooth).for_each(|(v, g)| *v += std * g / rms);
}

fn add_noise(img: &mut [f32], rng: &mut ChaCha8Rng, std: f32) {
    let normal = Normal::new(0.0, std).expect("positive standard deviation");
    img.iter_mut().for_each(|v| *v += normal.sample(rng));
}

fn finish(size: usize, img: Vec<f32>) -> GrayImage {
    GrayImage::from_fn(size, size, |x, y| img[y * size + x]).expect("non-empty image")
}

pub fn bona_fide_image(size: usize, sensor: usize, seed_value: u64) -> GrayImage {
    let mut rng = seed::rng(seed_value);
    let (lo, hi, noise) = sensor_params(sensor);
    let mut img = ridges(size, &mut rng, (lo, hi));
    add_noise(&mut img, &mut rng, noise);
    finish(size, img)
}

pub fn attack_image(size: usize, sensor: usize, material: usize, seed_value: u64) -> GrayImage {
    let mut rng = seed::rng(seed_value);
    let (lo, hi, noise) = sensor_params(sensor);
    let m = material_params(material);
    let ridged = ridges(size, &mut rng, (lo * m.spread, hi * m.spread));
    let mut img = gaussian_blur(&ridged, size, size, m.blur);
    img.iter_mut().for_each(|v| *v = 0.5 + m.contrast * (*v - 0.5));
    let s = size as f32;
    for _ in 0..m.blotches {
        let (bx, by) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        let radius = rng.gen_range(0.04..0.1) * s;
        let shift = rng.gen_range(-0.3f32..0.3);
        for y in 0..size {
            for x in 0..size {
                let d2 = ((x as f32 - bx).powi(2) + (y as f32 - by).powi(2)) / (radius * radius);
                img[y * size + x] += shift * (-d2).exp();
            }
        }
    }
    add_grain(&mut img, size, &mut rng, m.grain);
    add_noise(&mut img, &mut rng, noise + m.noise);
    finish(size, img)
}

/// Writes `images/*.pgm` and `manifest.csv` under `dir` and returns the
/// manifest records (paths relative to `dir`).
pub fn generate(dir: impl AsRef<Path>, spec: &CorpusSpec) -> Result<Vec<SampleRecord>> {
    let dir = dir.as_ref();
    if spec.size < 16 {
        return Err(PadError::InvalidInput(format!("image size {} is too small", spec.size)));
    }
    if spec.sensors.is_empty() || spec.datasets.is_empty() || (spec.attacks > 0 && spec.materials.is_empty()) {
        return Err(PadError::InvalidInput("corpus needs sensors, datasets and attack materials".into()));
    }
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| PadError::io(&images, e))?;

    let total = spec.bona_fide + spec.attacks;
    let records = par::map_range(total, |i| -> Result<SampleRecord> {
        let attack = i >= spec.bona_fide;
        let j = if attack { i - spec.bona_fide } else { i };
        let sensor = j % spec.sensors.len();
        let dataset = &spec.datasets[(j / spec.sensors.len()) % spec.datasets.len()];
        let img_seed = seed::derive(spec.seed, &format!("corpus-{i}"));
        let (name, img, label, material) = if attack {
            let m = j % spec.materials.len();
            let img = attack_image(spec.size, sensor, m, img_seed);
            (format!("pa_{j:05}.pgm"), img, Label::Attack, spec.materials[m].clone())
        } else {
            let img = bona_fide_image(spec.size, sensor, img_seed);
            (format!("bf_{j:05}.pgm"), img, Label::BonaFide, NO_MATERIAL.to_string())
        };
        save_pgm(&img, images.join(&name))?;
        SampleRecord::new(format!("images/{name}"), label, material, spec.sensors[sensor].clone(), dataset.clone())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    write_manifest(dir.join("manifest.csv"), &records)?;
    Ok(records)
}
