use serde::{Deserialize, Serialize};

use super::{apply, apply_dark, params, CorruptionKind, Severity};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::rng::Rng;

/// Probabilities of the mutually exclusive blur and weather draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    p_blur: f64,
    p_weather: f64,
    apply_dark: bool,
}

impl SchedulerConfig {
    pub fn new(p_blur: f64, p_weather: f64, apply_dark: bool) -> Result<Self> {
        let valid = |p: f64| (0.0..=1.0).contains(&p);
        if !valid(p_blur) || !valid(p_weather) || p_blur + p_weather > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "scheduler probabilities p_blur={p_blur}, p_weather={p_weather} must lie in [0,1] with sum <= 1"
            )));
        }
        Ok(SchedulerConfig { p_blur, p_weather, apply_dark })
    }

    /// No perturbation at all.
    pub fn disabled() -> Self {
        SchedulerConfig { p_blur: 0.0, p_weather: 0.0, apply_dark: false }
    }

    pub fn p_blur(&self) -> f64 {
        self.p_blur
    }

    pub fn p_weather(&self) -> f64 {
        self.p_weather
    }

    pub fn apply_dark(&self) -> bool {
        self.apply_dark
    }
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { p_blur: params::DEFAULT_P_BLUR, p_weather: params::DEFAULT_P_WEATHER, apply_dark: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedCorruption {
    pub kind: CorruptionKind,
    pub severity: Severity,
}

const BLURS: [CorruptionKind; 2] = [CorruptionKind::MotionBlur, CorruptionKind::ZoomBlur];
const WEATHER: [CorruptionKind; 3] = [CorruptionKind::Fog, CorruptionKind::Snow, CorruptionKind::Contrast];

/// Darkens (when enabled), then applies at most one blur or one weather
/// corruption, each at a uniformly drawn severity. Returns the applied
/// corruptions in order.
pub fn schedule_perturb(
    img: &ImageBuffer,
    cfg: &SchedulerConfig,
    rng: &mut Rng,
) -> (ImageBuffer, Vec<AppliedCorruption>) {
    let mut out = img.clone();
    let mut applied = Vec::new();
    if cfg.apply_dark {
        let severity = Severity::random(rng);
        out = apply_dark(&out, severity, rng);
        applied.push(AppliedCorruption { kind: CorruptionKind::Dark, severity });
    }
    let u = rng.unit();
    let kind = if u < cfg.p_blur {
        Some(BLURS[rng.below(BLURS.len())])
    } else if u < cfg.p_blur + cfg.p_weather {
        Some(WEATHER[rng.below(WEATHER.len())])
    } else {
        None
    };
    if let Some(kind) = kind {
        let severity = Severity::random(rng);
        out = apply(kind, &out, severity, rng);
        applied.push(AppliedCorruption { kind, severity });
    }
    (out, applied)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(SchedulerConfig::new(0.6, 0.5, true).is_err());
        assert!(SchedulerConfig::new(-0.1, 0.5, true).is_err());
        assert!(SchedulerConfig::new(0.5, 0.5, false).is_ok());
        let d = SchedulerConfig::default();
        assert_eq!((d.p_blur(), d.p_weather(), d.apply_dark()), (0.1, 0.2, true));
    }

    #[test]
    fn disabled_config_is_identity() {
        let img = ImageBuffer::from_fn(8, 8, 3, |y, x, c| (y + x + c) as f64 / 20.0).unwrap();
        let (out, applied) = schedule_perturb(&img, &SchedulerConfig::disabled(), &mut Rng::new(1));
        assert_eq!(out, img);
        assert!(applied.is_empty());
    }

    #[test]
    fn blur_and_weather_never_co_occur() {
        let img = ImageBuffer::filled(8, 8, 1, 0.5).unwrap();
        let cfg = SchedulerConfig::new(0.5, 0.5, true).unwrap();
        let mut rng = Rng::new(4);
        for _ in 0..200 {
            let (_, applied) = schedule_perturb(&img, &cfg, &mut rng);
            assert_eq!(applied[0].kind, CorruptionKind::Dark);
            assert_eq!(applied.len(), 2);
        }
    }
}
