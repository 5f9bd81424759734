use crate::error::{Error, Result};
use crate::image::Image;

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable convolution of one `f64` plane with edge replication.
pub(crate) fn convolve_separable(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let clampi = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                s += k * row[clampi(x as isize + t as isize - r, w)];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                s += k * tmp[clampi(y as isize + t as isize - r, h) * w + x];
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Per-channel separable Gaussian blur.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Param(format!(
            "blur sigma must be positive and finite, got {sigma}"
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (img.width(), img.height());
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| convolve_separable(&img.channel_plane(c), w, h, &kernel))
        .collect();
    Image::from_planes(w, h, [&planes[0], &planes[1], &planes[2]])
}
