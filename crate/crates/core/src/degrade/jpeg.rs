//! Baseline sequential JPEG encode→decode, reduced to its lossy stages.
//!
//! Huffman coding is lossless and therefore skipped: the pixels produced here
//! are the ones a baseline decoder would reconstruct from the bitstream.
//! Pipeline: RGB→YCbCr (BT.601 full range), 4:2:0 box downsampling of
//! chroma, 8×8 float DCT, quantization with the Annex K tables scaled by the
//! IJG quality rule, dequantization, inverse DCT, triangle (bilinear) chroma
//! upsampling, YCbCr→RGB.

use crate::dct;
use crate::error::{Error, Result};
use crate::image::{to_u8, Image};

/// Annex K luminance table, natural (row-major) order.
pub const STD_LUMA_QTABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance table, natural order.
pub const STD_CHROMA_QTABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Scales a base table with the IJG quality convention.
pub fn scaled_table(base: &[u16; 64], quality: u32) -> [u16; 64] {
    let scale = if quality < 50 {
        5000 / quality
    } else {
        200 - 2 * quality
    };
    base.map(|b| ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16)
}

/// Compresses and decompresses `img` at the given quality (1..=100).
pub fn jpeg_roundtrip(img: &Image, quality: u32) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Param(format!(
            "JPEG quality must be in 1..=100, got {quality}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    // 4:2:0 MCU is 16×16
    let pw = w.div_ceil(16) * 16;
    let ph = h.div_ceil(16) * 16;

    let mut y_plane = vec![0.0; pw * ph];
    let mut cb_plane = vec![0.0; pw * ph];
    let mut cr_plane = vec![0.0; pw * ph];
    for y in 0..ph {
        let sy = y.min(h - 1);
        for x in 0..pw {
            let sx = x.min(w - 1);
            let r = f64::from(img.get(sx, sy, 0));
            let g = f64::from(img.get(sx, sy, 1));
            let b = f64::from(img.get(sx, sy, 2));
            let i = y * pw + x;
            y_plane[i] = f64::from(to_u8(0.299 * r + 0.587 * g + 0.114 * b));
            cb_plane[i] = f64::from(to_u8(-0.168736 * r - 0.331264 * g + 0.5 * b + 128.0));
            cr_plane[i] = f64::from(to_u8(0.5 * r - 0.418688 * g - 0.081312 * b + 128.0));
        }
    }

    let (cw, ch) = (pw / 2, ph / 2);
    let cb_small = downsample_2x2(&cb_plane, pw, ph);
    let cr_small = downsample_2x2(&cr_plane, pw, ph);

    let luma_q = scaled_table(&STD_LUMA_QTABLE, quality);
    let chroma_q = scaled_table(&STD_CHROMA_QTABLE, quality);

    let y_rec = quantize_plane(&y_plane, pw, ph, &luma_q);
    let cb_rec = upsample_2x(&quantize_plane(&cb_small, cw, ch, &chroma_q), cw, ch);
    let cr_rec = upsample_2x(&quantize_plane(&cr_small, cw, ch, &chroma_q), cw, ch);

    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let i = y * pw + x;
            let (yy, cb, cr) = (y_rec[i], cb_rec[i] - 128.0, cr_rec[i] - 128.0);
            data.push(to_u8(yy + 1.402 * cr));
            data.push(to_u8(yy - 0.344136 * cb - 0.714136 * cr));
            data.push(to_u8(yy + 1.772 * cb));
        }
    }
    Image::new(w, h, data)
}

fn downsample_2x2(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (cw, ch) = (w / 2, h / 2);
    let mut out = vec![0.0; cw * ch];
    for y in 0..ch {
        for x in 0..cw {
            let s = plane[2 * y * w + 2 * x]
                + plane[2 * y * w + 2 * x + 1]
                + plane[(2 * y + 1) * w + 2 * x]
                + plane[(2 * y + 1) * w + 2 * x + 1];
            out[y * cw + x] = (s / 4.0).round();
        }
    }
    out
}

/// Bilinear 2× upsampling with pixel-center alignment (the 3/4–1/4
/// triangle filter of libjpeg's "fancy" upsampler), rounded to 8 bits.
fn upsample_2x(plane: &[f64], cw: usize, ch: usize) -> Vec<f64> {
    let (w, h) = (cw * 2, ch * 2);
    let tap = |dst: usize, len: usize| {
        let src = ((dst as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (y0, y1, fy) = tap(y, ch);
        for x in 0..w {
            let (x0, x1, fx) = tap(x, cw);
            let top = plane[y0 * cw + x0] * (1.0 - fx) + plane[y0 * cw + x1] * fx;
            let bot = plane[y1 * cw + x0] * (1.0 - fx) + plane[y1 * cw + x1] * fx;
            out[y * w + x] = f64::from(to_u8(top * (1.0 - fy) + bot * fy));
        }
    }
    out
}

/// DCT → quantize → dequantize → IDCT over every 8×8 block of `plane`.
/// `w` and `h` must be multiples of 8.
fn quantize_plane(plane: &[f64], w: usize, h: usize, table: &[u16; 64]) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let mut block = [0.0; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * w + bx + x] - 128.0;
                }
            }
            let mut coef = dct::forward(&block);
            for (c, &q) in coef.iter_mut().zip(table) {
                let q = f64::from(q);
                *c = (*c / q).round() * q;
            }
            let rec = dct::inverse(&coef);
            for y in 0..8 {
                for x in 0..8 {
                    out[(by + y) * w + bx + x] = f64::from(to_u8(rec[y * 8 + x] + 128.0));
                }
            }
        }
    }
    out
}
