//! Scale-and-shift normalized L1 losses and their gradients.
//!
//! A map `y` is normalized as `(y − t) / s` with `t = mean(y)` and
//! `s = mean |y − t|`. The affine-invariant loss is the mean absolute
//! difference of two normalized maps. Gradients differentiate through
//! `t` and `s`; the subgradient of `|x|` at zero is taken as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::DisparityMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    /// Shift `t`, the mean.
    pub shift: f64,
    /// Scale `s`, the mean absolute deviation from the shift.
    pub scale: f64,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn norm_stats_of(y: &[f64]) -> Result<NormStats> {
    if y.is_empty() {
        return Err(Error::InvalidParameter("cannot normalize an empty map".into()));
    }
    let n = y.len() as f64;
    let shift = y.iter().sum::<f64>() / n;
    let scale = y.iter().map(|v| (v - shift).abs()).sum::<f64>() / n;
    if !(scale > 0.0) {
        return Err(Error::DegenerateScale);
    }
    Ok(NormStats { shift, scale })
}

pub fn norm_stats(y: &DisparityMap) -> Result<NormStats> {
    norm_stats_of(y.data())
}

pub fn normalize(y: &[f64], stats: NormStats) -> Vec<f64> {
    y.iter().map(|v| (v - stats.shift) / stats.scale).collect()
}

/// Pulls a gradient with respect to the normalized map back to `y`.
pub fn normalize_backward(y: &[f64], stats: NormStats, grad_norm: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let s = stats.scale;
    let g_mean = grad_norm.iter().sum::<f64>() / n;
    let g_dot_norm: f64 = y.iter().zip(grad_norm).map(|(v, g)| g * (v - stats.shift) / s).sum();
    let signs: Vec<f64> = y.iter().map(|v| sign(v - stats.shift)).collect();
    let sign_mean = signs.iter().sum::<f64>() / n;
    grad_norm.iter().zip(&signs).map(|(g, sg)| (g - g_mean) / s - g_dot_norm / s * (sg - sign_mean) / n).collect()
}

/// Loss value together with gradients for the prediction and, when
/// requested, for the target.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLoss {
    pub value: f64,
    pub grad_pred: Vec<f64>,
    pub grad_target: Option<Vec<f64>>,
}

pub fn affine_invariant_slices(pred: &[f64], target: &[f64], target_grad: bool) -> Result<AffineLoss> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("prediction has {} pixels, target has {}", pred.len(), target.len())));
    }
    let sp = norm_stats_of(pred)?;
    let st = norm_stats_of(target)?;
    let np = normalize(pred, sp);
    let nt = normalize(target, st);
    let n = pred.len() as f64;
    let value = np.iter().zip(&nt).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let g: Vec<f64> = np.iter().zip(&nt).map(|(a, b)| sign(a - b) / n).collect();
    let grad_pred = normalize_backward(pred, sp, &g);
    let grad_target = target_grad.then(|| {
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        normalize_backward(target, st, &neg)
    });
    Ok(AffineLoss { value, grad_pred, grad_target })
}

/// Affine-invariant loss of `pred` against `target`, differentiated with
/// respect to both.
pub fn affine_invariant_loss(pred: &DisparityMap, target: &DisparityMap) -> Result<AffineLoss> {
    if !pred.same_shape(target) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            target.height(),
            target.width()
        )));
    }
    affine_invariant_slices(pred.data(), target.data(), true)
}

/// Which branch of the weak/strong pair a gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    /// The weak prediction is a detached pseudo-label.
    StopGradWeak,
    /// Gradients flow into both branches.
    BothBranches,
}

/// Scalar loss with gradients routed to the student's weak and strong
/// predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad_weak: Option<Vec<f64>>,
    pub grad_strong: Option<Vec<f64>>,
}

impl LossValue {
    pub fn zero() -> Self {
        LossValue { value: 0.0, grad_weak: None, grad_strong: None }
    }
}

fn check_shape(a: &DisparityMap, b: &DisparityMap) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width())))
    }
}

/// Consistency between the strong-branch prediction and the weak-branch
/// prediction.
pub fn consistency_loss(
    pred_weak: &DisparityMap,
    pred_strong: &DisparityMap,
    mode: ConsistencyMode,
) -> Result<LossValue> {
    check_shape(pred_weak, pred_strong)?;
    let both = mode == ConsistencyMode::BothBranches;
    let l = affine_invariant_slices(pred_strong.data(), pred_weak.data(), both)?;
    Ok(LossValue { value: l.value, grad_strong: Some(l.grad_pred), grad_weak: l.grad_target })
}

/// Distillation of the frozen teacher's weak-image prediction into the
/// student's weak branch. The teacher term carries no gradient.
pub fn kd_loss(pred_student_weak: &DisparityMap, pred_teacher_weak: &DisparityMap) -> Result<LossValue> {
    check_shape(pred_student_weak, pred_teacher_weak)?;
    let l = affine_invariant_slices(pred_student_weak.data(), pred_teacher_weak.data(), false)?;
    Ok(LossValue { value: l.value, grad_weak: Some(l.grad_pred), grad_strong: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub consistency: f64,
    pub distill: f64,
    pub spatial: f64,
}

impl LossWeights {
    pub fn new(consistency: f64, distill: f64, spatial: f64) -> Result<Self> {
        for (name, w) in [("consistency", consistency), ("distill", distill), ("spatial", spatial)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} weight must be >= 0, got {w}")));
            }
        }
        Ok(LossWeights { consistency, distill, spatial })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { consistency: 1.0 / 3.0, distill: 1.0 / 3.0, spatial: 1.0 / 3.0 }
    }
}

fn add_scaled(acc: &mut Option<Vec<f64>>, g: &Option<Vec<f64>>, w: f64) -> Result<()> {
    let Some(g) = g else { return Ok(()) };
    match acc {
        None => *acc = Some(g.iter().map(|v| w * v).collect()),
        Some(a) => {
            if a.len() != g.len() {
                return Err(Error::ShapeMismatch("gradient lengths differ".into()));
            }
            for (x, y) in a.iter_mut().zip(g) {
                *x += w * y;
            }
        }
    }
    Ok(())
}

/// Weighted sum of the three losses and of their gradients.
pub fn total_loss(lc: &LossValue, lkd: &LossValue, ls: &LossValue, weights: LossWeights) -> Result<LossValue> {
    let weights = LossWeights::new(weights.consistency, weights.distill, weights.spatial)?;
    let mut out = LossValue::zero();
    for (l, w) in [(lc, weights.consistency), (lkd, weights.distill), (ls, weights.spatial)] {
        out.value += w * l.value;
        add_scaled(&mut out.grad_weak, &l.grad_weak, w)?;
        add_scaled(&mut out.grad_strong, &l.grad_strong, w)?;
    }
    Ok(out)
}
