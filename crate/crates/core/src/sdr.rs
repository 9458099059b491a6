//! Spatial distance relations between patches.
//!
//! A disparity map is normalized, pooled into a grid of patches, and every
//! pair of patches gets a distance combining their normalized planar
//! separation with their disparity difference. The SDR loss compares two
//! such pairwise matrices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DisparityMap, ImageBuffer};
use crate::losses::{norm_stats_of, normalize, normalize_backward, NormStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Euclidean,
    Manhattan,
}

/// Source of the reference relation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdrParadigm {
    /// Frozen teacher on the weak image.
    Kd,
    /// The student's own detached weak-branch prediction.
    Consistency,
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Manhattan => "manhattan",
        })
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceMetric::Euclidean),
            "manhattan" => Ok(DistanceMetric::Manhattan),
            _ => Err(Error::InvalidParameter(format!("unknown metric {s:?}"))),
        }
    }
}

impl fmt::Display for SdrParadigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SdrParadigm::Kd => "kd",
            SdrParadigm::Consistency => "consistency",
        })
    }
}

impl FromStr for SdrParadigm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kd" => Ok(SdrParadigm::Kd),
            "consistency" => Ok(SdrParadigm::Consistency),
            _ => Err(Error::InvalidParameter(format!("unknown SDR paradigm {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdrConfig {
    pub metric: DistanceMetric,
    pub paradigm: SdrParadigm,
    pub patch_size: usize,
}

impl Default for SdrConfig {
    fn default() -> Self {
        SdrConfig { metric: DistanceMetric::Euclidean, paradigm: SdrParadigm::Kd, patch_size: 14 }
    }
}

/// Pooled normalized disparities on an `hp x wp` patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    hp: usize,
    wp: usize,
    patch_size: usize,
    values: Vec<f64>,
    stats: Option<NormStats>,
}

impl PatchGrid {
    /// Grid from already-pooled values, row-major.
    pub fn from_values(hp: usize, wp: usize, values: Vec<f64>) -> Result<Self> {
        if hp == 0 || wp == 0 || values.len() != hp * wp {
            return Err(Error::ShapeMismatch(format!("{hp}x{wp} grid with {} values", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(PatchGrid { hp, wp, patch_size: 1, values, stats: None })
    }

    pub fn hp(&self) -> usize {
        self.hp
    }

    pub fn wp(&self) -> usize {
        self.wp
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(row, col)` index of patch `i`.
    pub fn coord(&self, i: usize) -> (usize, usize) {
        (i / self.wp, i % self.wp)
    }

    /// Normalization statistics of the source map, when built by [`patchify`].
    pub fn stats(&self) -> Option<NormStats> {
        self.stats
    }
}

/// Normalizes `d` and average-pools it into `patch_size` squares.
pub fn patchify(d: &DisparityMap, patch_size: usize) -> Result<PatchGrid> {
    if patch_size == 0 || !d.height().is_multiple_of(patch_size) || !d.width().is_multiple_of(patch_size) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} map is not divisible into {patch_size}-pixel patches",
            d.height(),
            d.width()
        )));
    }
    let stats = norm_stats_of(d.data())?;
    let norm = normalize(d.data(), stats);
    let (hp, wp) = (d.height() / patch_size, d.width() / patch_size);
    let w = d.width();
    let area = (patch_size * patch_size) as f64;
    let mut values = vec![0.0; hp * wp];
    for (i, v) in norm.iter().enumerate() {
        let (y, x) = (i / w, i % w);
        values[(y / patch_size) * wp + x / patch_size] += v;
    }
    for v in &mut values {
        *v /= area;
    }
    Ok(PatchGrid { hp, wp, patch_size, values, stats: Some(stats) })
}

/// Pulls a gradient on the patch values back to the pixels of `d`.
pub fn patchify_backward(d: &DisparityMap, grid: &PatchGrid, grad_values: &[f64]) -> Result<Vec<f64>> {
    let stats = grid.stats.ok_or_else(|| Error::InvalidParameter("grid was not built from a disparity map".into()))?;
    let p = grid.patch_size;
    if d.height() != grid.hp * p || d.width() != grid.wp * p || grad_values.len() != grid.len() {
        return Err(Error::ShapeMismatch("gradient does not match the patch grid".into()));
    }
    let area = (p * p) as f64;
    let w = d.width();
    let grad_norm: Vec<f64> = (0..d.len()).map(|i| grad_values[((i / w) / p) * grid.wp + (i % w) / p] / area).collect();
    Ok(normalize_backward(d.data(), stats, &grad_norm))
}

/// Symmetric `n x n` pairwise matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SdrMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SdrMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.n..(a + 1) * self.n]
    }
}

fn planar_distance(metric: DistanceMetric, dy: f64, dx: f64) -> f64 {
    match metric {
        DistanceMetric::Euclidean => (dy * dy + dx * dx).sqrt(),
        DistanceMetric::Manhattan => dy.abs() + dx.abs(),
    }
}

/// Pairwise planar distances between patch indices, divided by the
/// largest one (min-max normalization with the zero diagonal as minimum).
pub fn position_relation(hp: usize, wp: usize, metric: DistanceMetric) -> Result<SdrMatrix> {
    let n = hp * wp;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("position relation needs at least two patches, got {hp}x{wp}")));
    }
    let mut data = vec![0.0; n * n];
    for a in 0..n {
        let (ya, xa) = ((a / wp) as f64, (a % wp) as f64);
        for b in 0..n {
            let (yb, xb) = ((b / wp) as f64, (b % wp) as f64);
            data[a * n + b] = planar_distance(metric, ya - yb, xa - xb);
        }
    }
    let max = data.iter().copied().fold(0.0, f64::max);
    for v in &mut data {
        *v /= max;
    }
    Ok(SdrMatrix { n, data })
}

/// Absolute pairwise differences of patch values.
pub fn depth_relation(g: &PatchGrid) -> SdrMatrix {
    let n = g.len();
    let v = &g.values;
    let data = (0..n * n).map(|i| (v[i / n] - v[i % n]).abs()).collect();
    SdrMatrix { n, data }
}

/// Combines planar and disparity relations: quadrature sum for Euclidean,
/// plain sum for Manhattan.
pub fn spatial_distance(sp: &SdrMatrix, sd: &SdrMatrix, metric: DistanceMetric) -> Result<SdrMatrix> {
    if sp.n != sd.n {
        return Err(Error::ShapeMismatch(format!("relation sizes {} and {}", sp.n, sd.n)));
    }
    let data = sp
        .data
        .iter()
        .zip(&sd.data)
        .map(|(p, d)| match metric {
            DistanceMetric::Euclidean => (p * p + d * d).sqrt(),
            DistanceMetric::Manhattan => p + d,
        })
        .collect();
    Ok(SdrMatrix { n: sp.n, data })
}

/// Full relation matrix of a grid.
pub fn sdr_matrix(g: &PatchGrid, metric: DistanceMetric) -> Result<SdrMatrix> {
    let sp = position_relation(g.hp, g.wp, metric)?;
    spatial_distance(&sp, &depth_relation(g), metric)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrLoss {
    pub value: f64,
    /// Gradient with respect to the student's patch values.
    pub grad_values: Vec<f64>,
}

/// Mean squared difference between the student's relation matrix and the
/// reference's. The reference carries no gradient.
pub fn sdr_loss(student: &PatchGrid, reference: &PatchGrid, metric: DistanceMetric) -> Result<SdrLoss> {
    if student.hp != reference.hp || student.wp != reference.wp {
        return Err(Error::ShapeMismatch(format!(
            "grids {}x{} and {}x{}",
            student.hp, student.wp, reference.hp, reference.wp
        )));
    }
    let ds = sdr_matrix(student, metric)?;
    let dr = sdr_matrix(reference, metric)?;
    let n = ds.n;
    let nn = (n * n) as f64;
    let mut value = 0.0;
    for (a, b) in ds.data.iter().zip(&dr.data) {
        value += (a - b) * (a - b);
    }
    value /= nn;
    let v = &student.values;
    let grad_values = (0..n)
        .map(|k| {
            let mut acc = 0.0;
            for b in 0..n {
                if b == k {
                    continue;
                }
                let e = ds.get(k, b) - dr.get(k, b);
                let diff = v[k] - v[b];
                let q = match metric {
                    DistanceMetric::Euclidean => diff / ds.get(k, b),
                    DistanceMetric::Manhattan => {
                        if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                };
                acc += e * q;
            }
            4.0 * acc / nn
        })
        .collect();
    Ok(SdrLoss { value, grad_values })
}

/// SDR loss between two dense maps: both are center-cropped to a whole
/// number of patches, and the gradient is returned for every pixel of
/// `student` (zero outside the crop).
pub fn sdr_loss_dense(
    student: &DisparityMap,
    reference: &DisparityMap,
    patch_size: usize,
    metric: DistanceMetric,
) -> Result<(f64, Vec<f64>)> {
    if !student.same_shape(reference) {
        return Err(Error::ShapeMismatch("student and reference maps differ in shape".into()));
    }
    if patch_size == 0 || patch_size > student.height() || patch_size > student.width() {
        return Err(Error::InvalidParameter(format!(
            "patch size {patch_size} does not fit a {}x{} map",
            student.height(),
            student.width()
        )));
    }
    let ch = student.height() / patch_size * patch_size;
    let cw = student.width() / patch_size * patch_size;
    let s_crop = student.center_crop(ch, cw)?;
    let r_crop = reference.center_crop(ch, cw)?;
    let gs = patchify(&s_crop, patch_size)?;
    let gr = patchify(&r_crop, patch_size)?;
    let loss = sdr_loss(&gs, &gr, metric)?;
    let g_crop = patchify_backward(&s_crop, &gs, &loss.grad_values)?;
    let (h, w) = (student.height(), student.width());
    let (y0, x0) = ((h - ch) / 2, (w - cw) / 2);
    let mut grad = vec![0.0; h * w];
    for y in 0..ch {
        for x in 0..cw {
            grad[(y0 + y) * w + x0 + x] = g_crop[y * cw + x];
        }
    }
    Ok((loss.value, grad))
}

/// Relation row of the query patch as an `hp x wp` field, min-max
/// normalized (all zeros if the row is constant).
pub fn sdr_row_map(g: &PatchGrid, query: (usize, usize), metric: DistanceMetric) -> Result<Vec<f64>> {
    let (r, c) = query;
    if r >= g.hp || c >= g.wp {
        return Err(Error::OutOfRange(format!("query ({r},{c}) outside {}x{} grid", g.hp, g.wp)));
    }
    let m = sdr_matrix(g, metric)?;
    let row = m.row(r * g.wp + c);
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(row.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect())
}

/// Renders a row map as a grayscale heat image, each patch `scale` pixels wide.
pub fn row_map_image(values: &[f64], hp: usize, wp: usize, scale: usize) -> Result<ImageBuffer> {
    let scale = scale.max(1);
    ImageBuffer::from_fn(hp * scale, wp * scale, 1, |y, x, _| values[(y / scale) * wp + x / scale])
}
