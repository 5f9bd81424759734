//! The three degradation families (JPEG, Gaussian blur, down/up resize) and
//! the random degraded-view sampler used during paired training.
//!
//! Every operation is a pure function of its inputs; randomness only enters
//! through a caller-owned generator in [`sample_degradation`].

mod blur;
mod jpeg;
mod resize;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use blur::{gaussian_blur, gaussian_kernel};
pub use jpeg::{jpeg_roundtrip, scaled_table, STD_CHROMA_QTABLE, STD_LUMA_QTABLE};
pub use resize::{resize_down_up, MIN_DOWNSAMPLED_SIDE};

use crate::error::{Error, Result};
use crate::image::Image;

pub(crate) use blur::convolve_separable;

/// Training-time JPEG quality grid.
pub const JPEG_QUALITIES: [u32; 4] = [30, 50, 70, 90];
pub const BLUR_SIGMAS: [f64; 3] = [1.0, 2.0, 3.0];
pub const RESIZE_SCALES: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegradationKind {
    Jpeg,
    Blur,
    Resize,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 3] = [Self::Jpeg, Self::Blur, Self::Resize];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jpeg" => Some(Self::Jpeg),
            "blur" => Some(Self::Blur),
            "resize" => Some(Self::Resize),
            _ => None,
        }
    }

    /// Human-readable list of the legal grid values.
    pub fn grid_description(self) -> String {
        match self {
            Self::Jpeg => format!("{{{}}}", join(JPEG_QUALITIES.iter())),
            Self::Blur => format!("{{{}}}", join(BLUR_SIGMAS.iter().map(|s| format!("{s:.1}")))),
            Self::Resize => format!("{{{}}}", join(RESIZE_SCALES.iter())),
        }
    }
}

fn join<T: ToString>(it: impl Iterator<Item = T>) -> String {
    it.map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// One fully specified degraded view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DegradationSpec {
    None,
    Jpeg { quality: u32 },
    Blur { sigma: f64 },
    Resize { scale: f64 },
}

impl DegradationSpec {
    pub fn kind(&self) -> Option<DegradationKind> {
        match self {
            Self::None => None,
            Self::Jpeg { .. } => Some(DegradationKind::Jpeg),
            Self::Blur { .. } => Some(DegradationKind::Blur),
            Self::Resize { .. } => Some(DegradationKind::Resize),
        }
    }

    /// Builds a spec from a kind and a numeric parameter. With `enforce_grid`
    /// the parameter must be one of the training grid values.
    pub fn from_parts(kind: DegradationKind, param: f64, enforce_grid: bool) -> Result<Self> {
        let spec = match kind {
            DegradationKind::Jpeg => {
                if param.fract() != 0.0 || !(1.0..=100.0).contains(&param) {
                    return Err(Error::Param(format!(
                        "JPEG quality must be an integer in 1..=100, got {param}"
                    )));
                }
                Self::Jpeg {
                    quality: param as u32,
                }
            }
            DegradationKind::Blur => Self::Blur { sigma: param },
            DegradationKind::Resize => Self::Resize { scale: param },
        };
        if enforce_grid && !spec.on_grid() {
            return Err(Error::Param(format!(
                "{param} is not on the {} grid; legal values: {}",
                format!("{kind:?}").to_lowercase(),
                kind.grid_description()
            )));
        }
        Ok(spec)
    }

    /// Whether the parameter belongs to its kind's training grid.
    pub fn on_grid(&self) -> bool {
        match *self {
            Self::None => true,
            Self::Jpeg { quality } => JPEG_QUALITIES.contains(&quality),
            Self::Blur { sigma } => BLUR_SIGMAS.contains(&sigma),
            Self::Resize { scale } => RESIZE_SCALES.contains(&scale),
        }
    }
}

impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => write!(f, "none"),
            Self::Jpeg { quality } => write!(f, "jpeg(q={quality})"),
            Self::Blur { sigma } => write!(f, "blur(sigma={sigma})"),
            Self::Resize { scale } => write!(f, "resize(scale={scale})"),
        }
    }
}

/// With probability `p_deg`, picks a kind uniformly and then a grid value
/// uniformly; otherwise returns [`DegradationSpec::None`].
pub fn sample_degradation<R: Rng + ?Sized>(rng: &mut R, p_deg: f64) -> DegradationSpec {
    if rng.random::<f64>() >= p_deg {
        return DegradationSpec::None;
    }
    match rng.random_range(0..3) {
        0 => DegradationSpec::Jpeg {
            quality: JPEG_QUALITIES[rng.random_range(0..JPEG_QUALITIES.len())],
        },
        1 => DegradationSpec::Blur {
            sigma: BLUR_SIGMAS[rng.random_range(0..BLUR_SIGMAS.len())],
        },
        _ => DegradationSpec::Resize {
            scale: RESIZE_SCALES[rng.random_range(0..RESIZE_SCALES.len())],
        },
    }
}

/// Applies `spec` to `img`; `None` returns a copy of the input.
pub fn apply(spec: &DegradationSpec, img: &Image) -> Result<Image> {
    match *spec {
        DegradationSpec::None => Ok(img.clone()),
        DegradationSpec::Jpeg { quality } => jpeg_roundtrip(img, quality),
        DegradationSpec::Blur { sigma } => gaussian_blur(img, sigma),
        DegradationSpec::Resize { scale } => resize_down_up(img, scale),
    }
}
