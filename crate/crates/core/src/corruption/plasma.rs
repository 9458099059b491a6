//! Diamond-square plasma fields.

use crate::rng::Rng;

/// Smallest `2^k + 1` that is at least `n`.
pub fn plasma_side(n: usize) -> usize {
    let mut side = 2;
    while side + 1 < n {
        side *= 2;
    }
    side + 1
}

/// Raw diamond-square field of side `2^k + 1 >= min_side`, row-major.
///
/// Corners start uniform in `[0, 1)`; each subdivision displaces the new
/// points by `amp * U(-1, 1)` and multiplies `amp` by `roughness`.
pub fn diamond_square(min_side: usize, roughness: f64, rng: &mut Rng) -> (usize, Vec<f64>) {
    let n = plasma_side(min_side.max(2));
    let mut g = vec![0.0; n * n];
    let last = n - 1;
    for (y, x) in [(0, 0), (0, last), (last, 0), (last, last)] {
        g[y * n + x] = rng.unit();
    }
    let mut step = last;
    let mut amp = 1.0;
    while step > 1 {
        let half = step / 2;
        // Diamond: square centers.
        for y in (half..n).step_by(step) {
            for x in (half..n).step_by(step) {
                let avg = (g[(y - half) * n + x - half]
                    + g[(y - half) * n + x + half]
                    + g[(y + half) * n + x - half]
                    + g[(y + half) * n + x + half])
                    / 4.0;
                g[y * n + x] = avg + amp * (2.0 * rng.unit() - 1.0);
            }
        }
        // Square: edge midpoints, averaging the neighbors that exist.
        for y in (0..n).step_by(half) {
            let x_start = if (y / half).is_multiple_of(2) { half } else { 0 };
            for x in (x_start..n).step_by(step) {
                let mut sum = 0.0;
                let mut count = 0.0;
                if y >= half {
                    sum += g[(y - half) * n + x];
                    count += 1.0;
                }
                if y + half < n {
                    sum += g[(y + half) * n + x];
                    count += 1.0;
                }
                if x >= half {
                    sum += g[y * n + x - half];
                    count += 1.0;
                }
                if x + half < n {
                    sum += g[y * n + x + half];
                    count += 1.0;
                }
                g[y * n + x] = sum / count + amp * (2.0 * rng.unit() - 1.0);
            }
        }
        step = half;
        amp *= roughness;
    }
    (n, g)
}

/// Plasma cropped to `height x width` and min-max normalized to `[0, 1]`.
/// A constant crop normalizes to all zeros.
pub fn plasma_field(height: usize, width: usize, roughness: f64, rng: &mut Rng) -> Vec<f64> {
    let (n, g) = diamond_square(height.max(width), roughness, rng);
    let mut field = Vec::with_capacity(height * width);
    for y in 0..height {
        field.extend_from_slice(&g[y * n..y * n + width]);
    }
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in &mut field {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    field
}
