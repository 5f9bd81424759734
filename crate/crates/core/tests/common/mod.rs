#![allow(dead_code)]

use dcpt::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fraction of (fake, real) pairs where the fake scores higher, ties half.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            num += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    num as f64 / (2 * pairs) as f64
}

pub fn recount_accuracy(scores: &[f64], labels: &[u8]) -> f64 {
    let mut hits = 0;
    for i in 0..scores.len() {
        let predicted_fake = scores[i] >= 0.5;
        if predicted_fake == (labels[i] == 1) {
            hits += 1;
        }
    }
    hits as f64 / scores.len() as f64
}

pub fn random_image(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
    Image::new(w, h, data).unwrap()
}

/// Smooth shading, hard edges, a disc and mild texture: a stand-in for a
/// photograph when comparing codecs.
pub fn codec_test_image() -> Image {
    Image::from_fn(96, 80, |x, y, c| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = 40.0 + 1.6 * xf + 0.9 * yf;
        if (xf - 60.0).powi(2) + (yf - 36.0).powi(2) < 400.0 {
            v = 220.0 - 30.0 * c as f64;
        }
        if x > 10 && x < 30 && y > 45 && y < 70 {
            v = 30.0 + 60.0 * c as f64;
        }
        v += 12.0 * ((xf * 0.7 + c as f64).sin() * (yf * 0.45).cos());
        v.clamp(0.0, 255.0).round() as u8
    })
    .unwrap()
}

/// Round trip through an independent encoder (4:2:0, standard tables) and
/// decoder.
pub fn reference_jpeg(img: &Image, quality: u8) -> Image {
    let mut buf = Vec::new();
    let mut enc = jpeg_encoder::Encoder::new(&mut buf, quality);
    enc.set_sampling_factor(jpeg_encoder::SamplingFactor::R_4_2_0);
    enc.encode(
        img.data(),
        img.width() as u16,
        img.height() as u16,
        jpeg_encoder::ColorType::Rgb,
    )
    .unwrap();
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)
        .unwrap()
        .to_rgb8();
    Image::new(img.width(), img.height(), decoded.into_raw()).unwrap()
}
