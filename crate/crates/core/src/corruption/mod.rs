//! Image corruption synthesis: darkness, weather, blur, contrast and
//! sensor noise at five graded severities, plus the probabilistic
//! scheduler that builds the perturbed training branch.
//!
//! Every operation is a pure function of `(image, severity, rng state)`,
//! so equal seeds always give bitwise-equal outputs. Outputs are clamped
//! to `[0, 1]`.

pub mod kernel;
pub mod params;
pub mod plasma;
mod schedule;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::rng::Rng;

pub use kernel::{convolve_image, convolve_plane, motion_blur_kernel, Kernel};
pub use schedule::{schedule_perturb, AppliedCorruption, SchedulerConfig};

/// Corruption intensity, 1 (mild) through 5 (severe).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Severity(u8);

impl Severity {
    pub const ALL: [Severity; 5] = [Severity(1), Severity(2), Severity(3), Severity(4), Severity(5)];

    pub fn new(level: u8) -> Result<Self> {
        if (1..=5).contains(&level) {
            Ok(Severity(level))
        } else {
            Err(Error::InvalidParameter(format!("severity must be in 1..=5, got {level}")))
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }

    fn idx(self) -> usize {
        usize::from(self.0 - 1)
    }

    /// Uniform draw over the five levels.
    pub fn random(rng: &mut Rng) -> Self {
        Severity(1 + rng.below(5) as u8)
    }
}

impl TryFrom<u8> for Severity {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Severity::new(v)
    }
}

impl From<Severity> for u8 {
    fn from(s: Severity) -> u8 {
        s.0
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Dark,
    Fog,
    Snow,
    MotionBlur,
    ZoomBlur,
    Contrast,
    GaussianNoise,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 7] = [
        CorruptionKind::Dark,
        CorruptionKind::Fog,
        CorruptionKind::Snow,
        CorruptionKind::MotionBlur,
        CorruptionKind::ZoomBlur,
        CorruptionKind::Contrast,
        CorruptionKind::GaussianNoise,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            CorruptionKind::Dark => "dark",
            CorruptionKind::Fog => "fog",
            CorruptionKind::Snow => "snow",
            CorruptionKind::MotionBlur => "motion_blur",
            CorruptionKind::ZoomBlur => "zoom_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::GaussianNoise => "gaussian_noise",
        }
    }

    pub fn is_blur(self) -> bool {
        matches!(self, CorruptionKind::MotionBlur | CorruptionKind::ZoomBlur)
    }

    pub fn is_weather(self) -> bool {
        matches!(self, CorruptionKind::Fog | CorruptionKind::Snow | CorruptionKind::Contrast)
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown corruption kind {s:?}")))
    }
}

/// Applies `kind` at `sev`.
pub fn apply(kind: CorruptionKind, img: &ImageBuffer, sev: Severity, rng: &mut Rng) -> ImageBuffer {
    match kind {
        CorruptionKind::Dark => apply_dark(img, sev, rng),
        CorruptionKind::Fog => apply_fog(img, sev, rng),
        CorruptionKind::Snow => apply_snow(img, sev, rng),
        CorruptionKind::MotionBlur => apply_motion_blur(img, sev, rng),
        CorruptionKind::ZoomBlur => apply_zoom_blur(img, sev, rng),
        CorruptionKind::Contrast => apply_contrast(img, sev, rng),
        CorruptionKind::GaussianNoise => apply_gaussian_noise(img, sev, rng),
    }
}

fn rebuild(img: &ImageBuffer, data: Vec<f64>) -> ImageBuffer {
    img.with_data(data).expect("corruption preserves shape and finiteness")
}

// ---- dark ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkParams {
    pub gamma: f64,
    pub photons: f64,
    pub read_sigma: f64,
}

impl DarkParams {
    pub fn for_severity(sev: Severity) -> Self {
        DarkParams {
            gamma: params::DARK_GAMMA[sev.idx()],
            photons: params::DARK_PHOTONS[sev.idx()],
            read_sigma: params::DARK_READ_SIGMA[sev.idx()],
        }
    }
}

/// Expected brightness after the power curve, before sensor noise.
pub fn dark_curve(v: f64, gamma: f64) -> f64 {
    v.powf(gamma)
}

/// Low-light simulation: `v^γ`, photon shot noise with a budget of
/// `photons` per white pixel, then additive Gaussian read noise.
pub fn apply_dark(img: &ImageBuffer, sev: Severity, rng: &mut Rng) -> ImageBuffer {
    apply_dark_with(img, DarkParams::for_severity(sev), rng)
}

pub fn apply_dark_with(img: &ImageBuffer, p: DarkParams, rng: &mut Rng) -> ImageBuffer {
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let expected = p.photons * dark_curve(v, p.gamma);
            let photons = rng.poisson(expected).expect("finite non-negative rate") as f64;
            let read = p.read_sigma * rng.standard_normal();
            (photons / p.photons + read).clamp(0.0, 1.0)
        })
        .collect();
    rebuild(img, data)
}

// ---- fog ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FogParams {
    pub roughness: f64,
    pub alpha: f64,
}

impl FogParams {
    pub fn for_severity(sev: Severity) -> Self {
        FogParams { roughness: params::FOG_ROUGHNESS[sev.idx()], alpha: params::FOG_ALPHA[sev.idx()] }
    }
}

/// Blends toward white through a normalized diamond-square field `P`:
/// `img·(1 − αP) + αP`.
pub fn apply_fog(img: &ImageBuffer, sev: Severity, rng: &mut Rng) -> ImageBuffer {
    apply_fog_with(img, FogParams::for_severity(sev), rng)
}

pub fn apply_fog_with(img: &ImageBuffer, p: FogParams, rng: &mut Rng) -> ImageBuffer {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let field = plasma::plasma_field(h, w, p.roughness, rng);
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let a = p.alpha * field[i / c];
            (v * (1.0 - a) + a * params::FOG_COLOR).clamp(0.0, 1.0)
        })
        .collect();
    rebuild(img, data)
}

// ---- snow ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnowParams {
    pub mu: f64,
    pub sigma: f64,
    pub exponent: f64,
    pub radius: usize,
}

impl SnowParams {
    pub fn for_severity(sev: Severity) -> Self {
        SnowParams {
            mu: params::SNOW_MU[sev.idx()],
            sigma: params::SNOW_SIGMA,
            exponent: params::SNOW_EXPONENT,
            radius: params::SNOW_RADIUS[sev.idx()],
        }
    }
}

/// Gaussian flake field, sparsified by a power curve, streaked along a
/// random downward direction and composited with `max`.
pub fn apply_snow(img: &ImageBuffer, sev: Severity, rng: &mut Rng) -> ImageBuffer {
    apply_snow_with(img, SnowParams::for_severity(sev), rng)
}

pub fn apply_snow_with(img: &ImageBuffer, p: SnowParams, rng: &mut Rng) -> ImageBuffer {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let flakes: Vec<f64> =
        (0..h * w).map(|_| (p.mu + p.sigma * rng.standard_normal()).clamp(0.0, 1.0).powf(p.exponent)).collect();
    let (lo, hi) = params::SNOW_ANGLE;
    let angle = lo + (hi - lo) * rng.unit();
    let radius = p.radius.max(1);
    let kernel = motion_blur_kernel(angle, radius, radius as f64 / 2.0).expect("valid snow kernel");
    let streaks = convolve_plane(&flakes, h, w, &kernel);
    let data = img.data().iter().enumerate().map(|(i, &v)| v.max(streaks[i / c]).clamp(0.0, 1.0)).collect();
    rebuild(img, data)
}

// ---- motion blur ----

/// Directional Gaussian blur at a random angle in `[-45°, 45°]`.
pub fn apply_motion_blur(img: &ImageBuffer, sev: Severity, rng: &mut Rng) -> ImageBuffer {
    let (lo, hi) = params::MOTION_ANGLE;
    let angle = lo + (hi - lo) * rng.unit();
    let radius = params::MOTION_RADIUS[sev.idx()];
    motion_blur_with(img, angle, radius, radius as f64 / 2.0).expect("valid motion kernel")
}

pub fn motion_blur_with(img: &ImageBuffer, angle_deg: f64, radius: usize, sigma: f64) -> Result<ImageBuffer> {
    let kernel = motion_blur_kernel(angle_deg, radius, sigma)?;
    convolve_image(img, &kernel)
}

// ---- zoom blur ----

fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Equal-weight average of `layers` center zooms at scales
/// `1, 1 + step, …, 1 + (layers − 1)·step`.
pub fn apply_zoom_blur(img: &ImageBuffer, sev: Severity, _rng: &mut Rng) -> ImageBuffer {
    zoom_blur_with(img, params::ZOOM_LAYERS[sev.idx()], params::ZOOM_STEP).expect("valid zoom parameters")
}

pub fn zoom_blur_with(img: &ImageBuffer, layers: usize, step: f64) -> Result<ImageBuffer> {
    if layers == 0 || !(step >= 0.0) {
        return Err(Error::InvalidParameter(format!("zoom blur layers={layers} step={step}")));
    }
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let planes: Vec<Vec<f64>> = (0..img.channels())
        .map(|c| {
            let plane = img.plane(c);
            let mut acc = vec![0.0; h * w];
            for k in 0..layers {
                let z = 1.0 + k as f64 * step;
                for y in 0..h {
                    let sy = cy + (y as f64 - cy) / z;
                    for x in 0..w {
                        let sx = cx + (x as f64 - cx) / z;
                        acc[y * w + x] += bilinear(&plane, h, w, sy, sx);
                    }
                }
            }
            acc.iter().map(|v| v / layers as f64).collect()
        })
        .collect();
    ImageBuffer::from_planes(h, w, &planes)
}

// ---- contrast ----

/// Shrinks each channel toward its mean by the severity coefficient.
pub fn apply_contrast(img: &ImageBuffer, sev: Severity, _rng: &mut Rng) -> ImageBuffer {
    contrast_with(img, params::CONTRAST_COEF[sev.idx()])
}

pub fn contrast_with(img: &ImageBuffer, coef: f64) -> ImageBuffer {
    let means = img.channel_means();
    let c = img.channels();
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mu = means[i % c];
            (coef * v + (1.0 - coef) * mu).clamp(0.0, 1.0)
        })
        .collect();
    rebuild(img, data)
}

// ---- gaussian noise ----

pub fn apply_gaussian_noise(img: &ImageBuffer, sev: Severity, rng: &mut Rng) -> ImageBuffer {
    gaussian_noise_with(img, params::NOISE_SIGMA[sev.idx()], rng)
}

pub fn gaussian_noise_with(img: &ImageBuffer, sigma: f64, rng: &mut Rng) -> ImageBuffer {
    let data = img.data().iter().map(|&v| (v + sigma * rng.standard_normal()).clamp(0.0, 1.0)).collect();
    rebuild(img, data)
}
