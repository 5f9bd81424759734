use crate::error::{Error, Result};
use crate::image::{to_u8, Image};

/// Smallest side allowed for the intermediate downsampled image.
pub const MIN_DOWNSAMPLED_SIDE: usize = 4;

/// Keys cubic convolution kernel with `a = -0.5` (Catmull-Rom).
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Source coordinate of destination sample `dst` under pixel-center alignment.
#[inline]
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5
}

/// 1-D resampling taps: for every output position, `(index, weight)` pairs.
type Taps = Vec<Vec<(usize, f64)>>;

fn bicubic_taps(src_len: usize, dst_len: usize) -> Taps {
    (0..dst_len)
        .map(|d| {
            let s = source_coord(d, src_len, dst_len);
            let base = s.floor() as isize;
            (base - 1..=base + 2)
                .map(|i| {
                    let idx = i.clamp(0, src_len as isize - 1) as usize;
                    (idx, cubic(s - i as f64))
                })
                .collect()
        })
        .collect()
}

fn bilinear_taps(src_len: usize, dst_len: usize) -> Taps {
    (0..dst_len)
        .map(|d| {
            let s = source_coord(d, src_len, dst_len).clamp(0.0, (src_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            let f = s - i0 as f64;
            vec![(i0, 1.0 - f), (i1, f)]
        })
        .collect()
}

/// Separable resampling of one plane, rounded to 8 bits at the end.
fn resample(plane: &[f64], w: usize, h: usize, xt: &Taps, yt: &Taps) -> Vec<f64> {
    let (nw, nh) = (xt.len(), yt.len());
    let mut tmp = vec![0.0; nw * h];
    for y in 0..h {
        for (x, taps) in xt.iter().enumerate() {
            tmp[y * nw + x] = taps.iter().map(|&(i, k)| k * plane[y * w + i]).sum();
        }
    }
    let mut out = vec![0.0; nw * nh];
    for (y, taps) in yt.iter().enumerate() {
        for x in 0..nw {
            let v: f64 = taps.iter().map(|&(i, k)| k * tmp[i * nw + x]).sum();
            out[y * nw + x] = f64::from(to_u8(v));
        }
    }
    out
}

/// Bicubic downsample by `scale`, then bilinear upsample back to the input size.
pub fn resize_down_up(img: &Image, scale: f64) -> Result<Image> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Param(format!(
            "resize scale must be in (0, 1], got {scale}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let sw = (w as f64 * scale).floor() as usize;
    let sh = (h as f64 * scale).floor() as usize;
    if sw < MIN_DOWNSAMPLED_SIDE || sh < MIN_DOWNSAMPLED_SIDE {
        return Err(Error::Param(format!(
            "scale {scale} shrinks {w}x{h} to {sw}x{sh}, below {MIN_DOWNSAMPLED_SIDE}x{MIN_DOWNSAMPLED_SIDE}"
        )));
    }
    let (down_x, down_y) = (bicubic_taps(w, sw), bicubic_taps(h, sh));
    let (up_x, up_y) = (bilinear_taps(sw, w), bilinear_taps(sh, h));
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let small = resample(&img.channel_plane(c), w, h, &down_x, &down_y);
            resample(&small, sw, sh, &up_x, &up_y)
        })
        .collect();
    Image::from_planes(w, h, [&planes[0], &planes[1], &planes[2]])
}
