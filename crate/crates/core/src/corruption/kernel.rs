//! Directional blur kernels and edge-replicating convolution.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Square convolution kernel of odd side `2 * radius + 1`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    radius: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.side() + col]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn transpose(&self) -> Kernel {
        let s = self.side();
        let mut weights = vec![0.0; s * s];
        for r in 0..s {
            for c in 0..s {
                weights[c * s + r] = self.weights[r * s + c];
            }
        }
        Kernel { radius: self.radius, weights }
    }
}

/// Snaps offsets that are integers up to trigonometric rounding.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Gaussian-weighted line kernel along `(cos θ, sin θ)`, with `x` along
/// columns and `y` along rows. Each tap `t ∈ [-r, r]` carries weight
/// `exp(-t² / 2σ²)` and is splatted bilinearly at sub-pixel offset
/// `t · (cos θ, sin θ)`; the kernel is normalized to unit sum.
pub fn motion_blur_kernel(angle_deg: f64, radius: usize, sigma: f64) -> Result<Kernel> {
    if radius < 1 {
        return Err(Error::InvalidParameter("kernel radius must be >= 1".into()));
    }
    if !(sigma > 0.0) || !angle_deg.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "kernel sigma must be positive (got {sigma}), angle finite (got {angle_deg})"
        )));
    }
    let side = 2 * radius + 1;
    let mut weights = vec![0.0; side * side];
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let r = radius as isize;
    for t in -r..=r {
        let tf = t as f64;
        let w = (-tf * tf / (2.0 * sigma * sigma)).exp();
        let px = radius as f64 + snap(tf * cos);
        let py = radius as f64 + snap(tf * sin);
        let (x0, y0) = (px.floor(), py.floor());
        let (fx, fy) = (px - x0, py - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let share = w * wy * wx;
                if share == 0.0 {
                    continue;
                }
                let (yy, xx) = (y0 + dy, x0 + dx);
                if yy < side && xx < side {
                    weights[yy * side + xx] += share;
                }
            }
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(Kernel { radius, weights })
}

/// Convolves one row-major plane with edge-replicate padding.
pub fn convolve_plane(plane: &[f64], height: usize, width: usize, kernel: &Kernel) -> Vec<f64> {
    let r = kernel.radius() as isize;
    let side = kernel.side();
    let taps: Vec<(isize, isize, f64)> = (0..side * side)
        .filter(|i| kernel.weights()[*i] != 0.0)
        .map(|i| ((i / side) as isize - r, (i % side) as isize - r, kernel.weights()[i]))
        .collect();
    let (h, w) = (height as isize, width as isize);
    let mut out = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(dy, dx, k) in &taps {
                let yy = (y + dy).clamp(0, h - 1) as usize;
                let xx = (x + dx).clamp(0, w - 1) as usize;
                acc += k * plane[yy * width + xx];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Convolves every channel of `img` with `kernel`.
pub fn convolve_image(img: &ImageBuffer, kernel: &Kernel) -> Result<ImageBuffer> {
    let (h, w) = (img.height(), img.width());
    let planes: Vec<Vec<f64>> = (0..img.channels()).map(|c| convolve_plane(&img.plane(c), h, w, kernel)).collect();
    ImageBuffer::from_planes(h, w, &planes)
}
