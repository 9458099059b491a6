//! Per-severity calibration tables, indexed by `severity - 1`.
//!
//! Only ranges and qualitative behavior are fixed upstream; the exact
//! values here are this toolkit's calibration and can be re-tuned in one
//! place.

/// Dark: gamma of the brightness power curve.
pub const DARK_GAMMA: [f64; 5] = [1.4, 1.8, 2.2, 2.6, 3.0];
/// Dark: photon budget of a fully white pixel.
pub const DARK_PHOTONS: [f64; 5] = [200.0, 120.0, 80.0, 50.0, 30.0];
/// Dark: sensor read-noise standard deviation.
pub const DARK_READ_SIGMA: [f64; 5] = [0.01, 0.02, 0.03, 0.04, 0.05];

/// Fog: per-octave amplitude decay of the diamond-square displacement.
pub const FOG_ROUGHNESS: [f64; 5] = [0.75, 0.7, 0.65, 0.6, 0.55];
/// Fog: blend strength toward the fog color.
pub const FOG_ALPHA: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
pub const FOG_COLOR: f64 = 1.0;

/// Snow: mean of the Gaussian flake field.
pub const SNOW_MU: [f64; 5] = [0.1, 0.15, 0.2, 0.25, 0.3];
pub const SNOW_SIGMA: f64 = 0.3;
/// Snow: sparsifying exponent applied to the clamped field.
pub const SNOW_EXPONENT: f64 = 1.5;
/// Snow: streak radius in pixels.
pub const SNOW_RADIUS: [usize; 5] = [4, 6, 8, 10, 12];
/// Snow: fall direction range in degrees.
pub const SNOW_ANGLE: (f64, f64) = (-135.0, -45.0);

/// Motion blur: kernel radius in pixels; the Gaussian sigma is half of it.
pub const MOTION_RADIUS: [usize; 5] = [3, 5, 7, 9, 12];
/// Motion blur: direction range in degrees.
pub const MOTION_ANGLE: (f64, f64) = (-45.0, 45.0);

/// Zoom blur: number of averaged layers.
pub const ZOOM_LAYERS: [usize; 5] = [5, 8, 11, 14, 17];
/// Zoom blur: scale increment between consecutive layers.
pub const ZOOM_STEP: f64 = 0.01;

/// Contrast: scaling coefficient around the channel mean.
pub const CONTRAST_COEF: [f64; 5] = [0.4, 0.3, 0.2, 0.1, 0.05];

/// Gaussian noise: standard deviation.
pub const NOISE_SIGMA: [f64; 5] = [0.04, 0.06, 0.08, 0.09, 0.10];

/// Scheduler defaults.
pub const DEFAULT_P_BLUR: f64 = 0.1;
pub const DEFAULT_P_WEATHER: f64 = 0.2;
