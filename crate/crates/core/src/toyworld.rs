//! Synthetic real/fake image world and the frozen feature extractor.
//!
//! Real images are low-pass filtered Gaussian noise. Fake images are drawn
//! from the same distribution and then carry a generator-specific
//! near-Nyquist sinusoidal grating of small amplitude: a stand-in for the
//! high-frequency generation fingerprints that compression and blur erase.
//!
//! The extractor is parameter-free: grayscale → 8×8 block DCT → per-bin
//! `ln(1 + mean squared coefficient)` over all blocks (64 features).

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dct;
use crate::degrade::{convolve_separable, gaussian_kernel};
use crate::error::{Error, Result};
use crate::image::Image;

pub const TOY_SIDE: usize = 64;
pub const DEFAULT_GENERATORS: usize = 9;
pub const FEATURE_DIM: usize = 64;

/// Sigma of the blur that shapes the real-image noise field.
pub const BASE_BLUR_SIGMA: f64 = 2.0;
pub const BASE_MEAN: f64 = 128.0;
pub const BASE_SD: f64 = 40.0;
/// Peak amplitude of the fingerprint grating in gray levels.
pub const FINGERPRINT_AMPLITUDE: f64 = 6.0;
/// Radial frequency of every fingerprint grating, cycles per pixel.
pub const FINGERPRINT_FREQUENCY: f64 = 0.40;

pub const LABEL_REAL: u8 = 0;
pub const LABEL_FAKE: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ToySample {
    pub image: Image,
    pub label: u8,
    pub generator_id: u8,
}

/// Horizontal and vertical frequency (cycles/pixel) of generator `g`'s grating.
/// Orientations are spread evenly over a half turn.
pub fn fingerprint_frequency(g: usize, generators: usize) -> (f64, f64) {
    let theta = PI * g as f64 / generators as f64;
    (
        FINGERPRINT_FREQUENCY * theta.cos(),
        FINGERPRINT_FREQUENCY * theta.sin(),
    )
}

/// Per-sample generator derived from the dataset seed and a stream index,
/// so samples can be synthesized in any order.
fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Three channel planes of the real-image distribution, before rounding.
fn base_planes<R: Rng + ?Sized>(rng: &mut R) -> [Vec<f64>; 3] {
    let kernel = gaussian_kernel(BASE_BLUR_SIGMA);
    let pad = kernel.len() / 2;
    let side = TOY_SIDE + 2 * pad;
    let mut field = || {
        let noise: Vec<f64> = (0..side * side).map(|_| rng.sample(StandardNormal)).collect();
        let blurred = convolve_separable(&noise, side, side, &kernel);
        // drop the padding so no edge replication leaks into the image
        let mut out = Vec::with_capacity(TOY_SIDE * TOY_SIDE);
        for y in pad..pad + TOY_SIDE {
            out.extend_from_slice(&blurred[y * side + pad..y * side + pad + TOY_SIDE]);
        }
        out
    };
    let shared = field();
    let mut planes: [Vec<f64>; 3] = [field(), field(), field()];
    for plane in planes.iter_mut() {
        // channels are correlated like natural images: a common luminance
        // field plus a weaker per-channel component
        for (v, s) in plane.iter_mut().zip(&shared) {
            *v = 0.8 * s + 0.6 * *v;
        }
        let n = plane.len() as f64;
        let mean = plane.iter().sum::<f64>() / n;
        let sd = (plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        for v in plane.iter_mut() {
            *v = (*v - mean) / sd * BASE_SD + BASE_MEAN;
        }
    }
    planes
}

fn render(planes: &[Vec<f64>; 3]) -> Image {
    Image::from_planes(TOY_SIDE, TOY_SIDE, [&planes[0], &planes[1], &planes[2]])
        .expect("toy planes are well-formed")
}

pub fn synth_real<R: Rng + ?Sized>(rng: &mut R) -> Image {
    render(&base_planes(rng))
}

/// A fake image together with the real-style base it was built on.
pub fn synth_fake_pair<R: Rng + ?Sized>(
    rng: &mut R,
    generator_id: usize,
    generators: usize,
) -> (Image, Image) {
    let mut planes = base_planes(rng);
    let base = render(&planes);
    let (fx, fy) = fingerprint_frequency(generator_id, generators);
    let phase = rng.random_range(0.0..2.0 * PI);
    for plane in planes.iter_mut() {
        for y in 0..TOY_SIDE {
            for x in 0..TOY_SIDE {
                let arg = 2.0 * PI * (fx * x as f64 + fy * y as f64) + phase;
                plane[y * TOY_SIDE + x] += FINGERPRINT_AMPLITUDE * arg.cos();
            }
        }
    }
    (base, render(&planes))
}

/// `n_per_class` real and `n_per_class` fake images. Generator ids are
/// assigned round-robin to both classes so every generator slice is balanced.
pub fn gen_dataset(seed: u64, n_per_class: usize, generators: usize) -> Result<Vec<ToySample>> {
    if n_per_class == 0 {
        return Err(Error::Param("n_per_class must be ≥ 1".into()));
    }
    if generators == 0 || generators > 256 {
        return Err(Error::Param(format!(
            "generator count must be in 1..=256, got {generators}"
        )));
    }
    let samples = (0..2 * n_per_class)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let k = i % n_per_class;
            let g = k % generators;
            if i < n_per_class {
                ToySample {
                    image: synth_real(&mut rng),
                    label: LABEL_REAL,
                    generator_id: g as u8,
                }
            } else {
                ToySample {
                    image: synth_fake_pair(&mut rng, g, generators).1,
                    label: LABEL_FAKE,
                    generator_id: g as u8,
                }
            }
        })
        .collect();
    Ok(samples)
}

/// A frozen, parameter-free image → feature map.
pub trait FeatureExtractor: Sync {
    fn dim(&self) -> usize;
    fn extract(&self, img: &Image) -> Result<Vec<f64>>;
}

/// Log block-DCT energy per frequency bin.
#[derive(Clone, Copy, Debug, Default)]
pub struct DctEnergyExtractor;

/// Minimum side accepted by [`DctEnergyExtractor`].
pub const MIN_EXTRACT_SIDE: usize = 16;

impl FeatureExtractor for DctEnergyExtractor {
    fn dim(&self) -> usize {
        FEATURE_DIM
    }

    fn extract(&self, img: &Image) -> Result<Vec<f64>> {
        extract_features(img)
    }
}

/// Bin index `v * 8 + u` (`v` vertical, `u` horizontal frequency).
pub fn extract_features(img: &Image) -> Result<Vec<f64>> {
    let (w, h) = (img.width(), img.height());
    if w < MIN_EXTRACT_SIDE || h < MIN_EXTRACT_SIDE {
        return Err(Error::Param(format!(
            "feature extraction needs at least {MIN_EXTRACT_SIDE}x{MIN_EXTRACT_SIDE}, got {w}x{h}"
        )));
    }
    let gray = img.to_gray();
    let (bw, bh) = (w / 8, h / 8);
    let mut energy = [0.0f64; 64];
    let mut block = [0.0f64; 64];
    for by in 0..bh {
        for bx in 0..bw {
            for y in 0..8 {
                let row = (by * 8 + y) * w + bx * 8;
                block[y * 8..y * 8 + 8].copy_from_slice(&gray[row..row + 8]);
            }
            let coef = dct::forward(&block);
            for (e, c) in energy.iter_mut().zip(coef) {
                *e += c * c;
            }
        }
    }
    let blocks = (bw * bh) as f64;
    Ok(energy.iter().map(|e| (e / blocks).ln_1p()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: u8,
    pub generator_id: u8,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes every sample as a PPM file plus `manifest.json` into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[ToySample]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = format!("img_{i:05}.ppm");
        s.image.write_ppm(dir.join(&name))?;
        entries.push(ManifestEntry {
            path: name,
            label: s.label,
            generator_id: s.generator_id,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&entries).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Loads a dataset directory written by [`write_dataset`]. Image paths in the
/// manifest are resolved relative to the directory.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<ToySample>> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    entries
        .par_iter()
        .map(|e| {
            if e.label > 1 {
                return Err(Error::format(&path, format!("label {} for {}", e.label, e.path)));
            }
            let img_path: PathBuf = dir.join(&e.path);
            Ok(ToySample {
                image: Image::read_ppm(&img_path)?,
                label: e.label,
                generator_id: e.generator_id,
            })
        })
        .collect()
}

pub const FEATURE_CACHE_MAGIC: &[u8; 8] = b"DCPTFEAT";
pub const FEATURE_CACHE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub label: u8,
    pub generator_id: u8,
    pub features: Vec<f64>,
}

pub fn encode_feature_cache(records: &[FeatureRecord]) -> Result<Vec<u8>> {
    let dim = records.first().map_or(0, |r| r.features.len());
    if records.iter().any(|r| r.features.len() != dim) {
        return Err(Error::Shape("feature records differ in dimension".into()));
    }
    let mut out = Vec::with_capacity(20 + records.len() * (2 + dim * 8));
    out.extend_from_slice(FEATURE_CACHE_MAGIC);
    out.extend_from_slice(&FEATURE_CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in records {
        out.push(r.label);
        out.push(r.generator_id);
        for v in &r.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_feature_cache(bytes: &[u8]) -> std::result::Result<Vec<FeatureRecord>, String> {
    if bytes.len() < 20 || &bytes[..8] != FEATURE_CACHE_MAGIC {
        return Err("missing DCPTFEAT header".into());
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    if u32_at(8) != FEATURE_CACHE_VERSION as usize {
        return Err(format!("unsupported feature cache version {}", u32_at(8)));
    }
    let (count, dim) = (u32_at(12), u32_at(16));
    let stride = 2 + dim * 8;
    let body = &bytes[20..];
    if body.len() != count * stride {
        return Err(format!(
            "feature cache body is {} bytes, expected {}",
            body.len(),
            count * stride
        ));
    }
    Ok(body
        .chunks_exact(stride)
        .map(|rec| FeatureRecord {
            label: rec[0],
            generator_id: rec[1],
            features: rec[2..]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
        .collect())
}

pub fn write_feature_cache(path: impl AsRef<Path>, records: &[FeatureRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_feature_cache(records)?).map_err(|e| Error::io(path, e))
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<Vec<FeatureRecord>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_cache(&bytes).map_err(|m| Error::format(path, m))
}
