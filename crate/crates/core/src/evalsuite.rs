//! Relative-depth metrics after scale-shift alignment, pairwise ordinal
//! accuracy, and corruption-robustness sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{apply, CorruptionKind, Severity};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::image::{DisparityMap, ImageBuffer};
use crate::model::ModelState;
use crate::rng::Rng;

/// Disparity floor before inversion to depth.
pub const EPS: f64 = 1e-6;
pub const DELTA1_THRESHOLD: f64 = 1.25;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub pred_aligned: DisparityMap,
    pub gt: DisparityMap,
    pub s_fit: f64,
    pub t_fit: f64,
    pub valid: Vec<bool>,
}

impl AlignedPair {
    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Least-squares `(s, t)` minimizing `Σ (s·pred + t − gt)²` over valid
/// entries.
pub fn fit_scale_shift(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() || valid.len() != gt.len() {
        return Err(Error::ShapeMismatch("prediction, ground truth and mask lengths differ".into()));
    }
    let idx: Vec<usize> = (0..gt.len()).filter(|&i| valid[i]).collect();
    if idx.len() < 2 {
        return Err(Error::InvalidParameter(format!("alignment needs >= 2 valid pixels, got {}", idx.len())));
    }
    let n = idx.len() as f64;
    let mp = idx.iter().map(|&i| pred[i]).sum::<f64>() / n;
    let mg = idx.iter().map(|&i| gt[i]).sum::<f64>() / n;
    let (mut spp, mut spg, mut sgg) = (0.0, 0.0, 0.0);
    for &i in &idx {
        let (dp, dg) = (pred[i] - mp, gt[i] - mg);
        spp += dp * dp;
        spg += dp * dg;
        sgg += dg * dg;
    }
    if sgg == 0.0 {
        return Err(Error::InvalidParameter("ground truth is constant over the valid pixels".into()));
    }
    if !(spp > 1e-300) {
        return Err(Error::SingularAlignment);
    }
    let s = spg / spp;
    Ok((s, mg - s * mp))
}

/// Default validity: ground-truth disparity above the floor.
pub fn default_mask(gt: &DisparityMap) -> Vec<bool> {
    gt.data().iter().map(|g| *g > EPS).collect()
}

/// Aligns `pred` to `gt` in disparity space. `valid` defaults to
/// [`default_mask`]. Aligned values are clamped to at least [`EPS`].
pub fn align(pred: &DisparityMap, gt: &DisparityMap, valid: Option<&[bool]>) -> Result<AlignedPair> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch("prediction and ground truth differ in shape".into()));
    }
    let valid = valid.map(<[bool]>::to_vec).unwrap_or_else(|| default_mask(gt));
    let (s, t) = fit_scale_shift(pred.data(), gt.data(), &valid)?;
    let aligned = pred.data().iter().map(|p| (s * p + t).max(EPS)).collect();
    Ok(AlignedPair {
        pred_aligned: DisparityMap::new(pred.height(), pred.width(), aligned)?,
        gt: gt.clone(),
        s_fit: s,
        t_fit: t,
        valid,
    })
}

fn depths(pair: &AlignedPair) -> impl Iterator<Item = (f64, f64)> + '_ {
    pair.pred_aligned
        .data()
        .iter()
        .zip(pair.gt.data())
        .zip(&pair.valid)
        .filter(|(_, v)| **v)
        .map(|((p, g), _)| (1.0 / p.max(EPS), 1.0 / g.max(EPS)))
}

/// Mean of `|d_pred − d_gt| / d_gt` over valid pixels, in depth space.
pub fn absrel(pair: &AlignedPair) -> f64 {
    let n = pair.n_valid();
    if n == 0 {
        return 0.0;
    }
    depths(pair).map(|(dp, dg)| (dp - dg).abs() / dg).sum::<f64>() / n as f64
}

/// Fraction of valid pixels with `max(d_pred/d_gt, d_gt/d_pred) < 1.25`.
pub fn delta1(pair: &AlignedPair) -> f64 {
    let n = pair.n_valid();
    if n == 0 {
        return 0.0;
    }
    depths(pair).filter(|(dp, dg)| (dp / dg).max(dg / dp) < DELTA1_THRESHOLD).count() as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Closer {
    A,
    B,
}

/// Two pixel positions `(x, y)` and which one is nearer the camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalPair {
    pub ax: usize,
    pub ay: usize,
    pub bx: usize,
    pub by: usize,
    pub closer: Closer,
}

/// Fraction of pairs whose labeled-closer point has the strictly larger
/// predicted disparity. Ties count as wrong.
pub fn ordinal_accuracy(pred: &DisparityMap, pairs: &[OrdinalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no ordinal pairs".into()));
    }
    let (h, w) = (pred.height(), pred.width());
    let mut correct = 0usize;
    for p in pairs {
        for (x, y) in [(p.ax, p.ay), (p.bx, p.by)] {
            if x >= w || y >= h {
                return Err(Error::OutOfRange(format!("point ({x}, {y}) outside {w}x{h} map")));
            }
        }
        if (p.ax, p.ay) == (p.bx, p.by) {
            return Err(Error::InvalidParameter("ordinal pair points coincide".into()));
        }
        let (a, b) = (pred.get(p.ay, p.ax), pred.get(p.by, p.bx));
        let ok = match p.closer {
            Closer::A => a > b,
            Closer::B => b > a,
        };
        correct += usize::from(ok);
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// One line of a pairs file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub image: String,
    #[serde(flatten)]
    pub pair: OrdinalPair,
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<LabeledPair>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedLog { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

/// Mean AbsRel and δ1 over a set of images, with a breakdown per
/// condition (`"clean"` or `"<kind>:<severity>"`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub absrel: f64,
    pub delta1: f64,
    pub n_pixels: usize,
    pub per_corruption: BTreeMap<String, ConditionMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub absrel: f64,
    pub delta1: f64,
}

/// Per-image metrics averaged over the batch, and the valid-pixel count.
pub fn evaluate(
    model: &ModelState,
    images: &[ImageBuffer],
    gts: &[&DisparityMap],
) -> Result<(ConditionMetrics, usize)> {
    if images.len() != gts.len() || images.is_empty() {
        return Err(Error::InvalidParameter("need matching, non-empty image and ground-truth lists".into()));
    }
    let per: Vec<(f64, f64, usize)> = images
        .par_iter()
        .zip(gts.par_iter())
        .map(|(img, gt)| {
            let pair = align(&model.predict(img)?, gt, None)?;
            Ok((absrel(&pair), delta1(&pair), pair.n_valid()))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let m = ConditionMetrics {
        absrel: per.iter().map(|p| p.0).sum::<f64>() / n,
        delta1: per.iter().map(|p| p.1).sum::<f64>() / n,
    };
    Ok((m, per.iter().map(|p| p.2).sum()))
}

/// One row of a sweep report. The clean row has kind `clean` and
/// severity 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: String,
    pub severity: u8,
    pub absrel: f64,
    pub delta1: f64,
}

/// Corrupts every image of `images` with `kind` at `severity`, seeding
/// each image's stream from `(seed, kind, severity, index)`.
pub fn corrupt_all(images: &[ImageBuffer], kind: CorruptionKind, severity: Severity, seed: u64) -> Vec<ImageBuffer> {
    let root = Rng::new(seed).fork("sweep");
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut r = root.fork(&format!("{kind}-{}-{i}", severity.level()));
            apply(kind, img, severity, &mut r)
        })
        .collect()
}

/// Evaluates clean data and every `(kind, severity)` corruption of it, in
/// that order. Rows are also written to `report` as JSON lines.
pub fn robustness_sweep(
    model: &ModelState,
    data: &Dataset,
    kinds: &[CorruptionKind],
    severities: &[Severity],
    seed: u64,
    report: Option<&mut dyn Write>,
) -> Result<(MetricReport, Vec<SweepRow>)> {
    if !data.has_ground_truth() {
        return Err(Error::InvalidParameter("evaluation needs ground truth (manifest.jsonl)".into()));
    }
    let images: Vec<ImageBuffer> = data.samples.iter().map(|s| s.image.clone()).collect();
    let gts: Vec<&DisparityMap> = data.samples.iter().map(|s| s.gt.as_ref().expect("checked")).collect();

    let (clean, n_pixels) = evaluate(model, &images, &gts)?;
    let mut rows = vec![SweepRow { kind: "clean".into(), severity: 0, absrel: clean.absrel, delta1: clean.delta1 }];
    let mut out =
        MetricReport { absrel: clean.absrel, delta1: clean.delta1, n_pixels, per_corruption: BTreeMap::new() };
    out.per_corruption.insert("clean".into(), clean);
    for &kind in kinds {
        for &sev in severities {
            let corrupted = corrupt_all(&images, kind, sev, seed);
            let (m, _) = evaluate(model, &corrupted, &gts)?;
            out.per_corruption.insert(format!("{kind}:{}", sev.level()), m);
            rows.push(SweepRow { kind: kind.tag().into(), severity: sev.level(), absrel: m.absrel, delta1: m.delta1 });
        }
    }
    if let Some(w) = report {
        for r in &rows {
            writeln!(w, "{}", serde_json::to_string(r).expect("serializable")).map_err(|e| Error::io("<report>", e))?;
        }
    }
    Ok((out, rows))
}

/// [`robustness_sweep`] from files: a checkpoint, a dataset directory and
/// a JSON-lines report path.
pub fn robustness_sweep_files(
    ckpt: impl AsRef<Path>,
    clean_dir: impl AsRef<Path>,
    kinds: &[CorruptionKind],
    severities: &[Severity],
    seed: u64,
    report_path: impl AsRef<Path>,
) -> Result<MetricReport> {
    let model = crate::model::load_checkpoint(ckpt)?;
    let data = Dataset::open(clean_dir)?;
    let path = report_path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let (report, _) = robustness_sweep(&model, &data, kinds, severities, seed, Some(&mut f))?;
    Ok(report)
}

/// Reads sweep rows back, reporting the first malformed line.
pub fn load_sweep(text: &str) -> Result<Vec<SweepRow>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::MalformedLog { line: i + 1, msg: e.to_string() }))
        .collect()
}
