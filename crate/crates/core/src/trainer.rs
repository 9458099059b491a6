//! Weak/strong branch construction, the three-term fine-tuning objective,
//! supervised pretraining and the epoch loop.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{schedule_perturb, AppliedCorruption, SchedulerConfig};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::image::{DisparityMap, ImageBuffer};
use crate::losses::{
    affine_invariant_loss, consistency_loss, kd_loss, total_loss, ConsistencyMode, LossValue, LossWeights,
};
use crate::model::{load_checkpoint, save_checkpoint, AdamW, Gradients, ModelState};
use crate::rng::Rng;
use crate::sdr::{sdr_loss_dense, SdrConfig, SdrParadigm};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// 1e-3 suits the small CNN trained from scratch; a pretrained
    /// transformer backbone would use 5e-6.
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub scheduler: SchedulerConfig,
    pub sdr: SdrConfig,
    pub freeze_encoder: bool,
    pub seed: u64,
    pub consistency_mode: ConsistencyMode,
    /// Half-width of the multiplicative brightness jitter of the weak branch.
    pub brightness_jitter: f64,
    /// Random horizontal flip of the weak branch.
    pub flip: bool,
    /// Supervised steps on ground truth before the teacher is cloned.
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    /// Start from this checkpoint instead of a fresh initialization.
    pub init_ckpt: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1.0 / 3.0,
            lambda2: 1.0 / 3.0,
            lambda3: 1.0 / 3.0,
            lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 16,
            epochs: 20,
            scheduler: SchedulerConfig::default(),
            sdr: SdrConfig::default(),
            freeze_encoder: true,
            seed: 0,
            consistency_mode: ConsistencyMode::StopGradWeak,
            brightness_jitter: 0.05,
            flip: true,
            pretrain_steps: 0,
            pretrain_lr: 1e-3,
            init_ckpt: None,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config { line, msg: format!("invalid value {v:?} for {key}") })
}

impl TrainConfig {
    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda1, self.lambda2, self.lambda3)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights()?;
        if !(self.lr > 0.0) || !self.lr.is_finite() || !(self.pretrain_lr > 0.0) {
            return Err(Error::InvalidParameter("learning rates must be > 0".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.sdr.patch_size == 0 {
            return Err(Error::InvalidParameter("sdr.patch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.brightness_jitter) {
            return Err(Error::InvalidParameter("brightness_jitter must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are
    /// skipped; unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        let (mut p_blur, mut p_weather, mut apply_dark) =
            (cfg.scheduler.p_blur(), cfg.scheduler.p_weather(), cfg.scheduler.apply_dark());
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config { line, msg: format!("expected `key = value`, got {content:?}") });
            };
            let (key, v) = (key.trim(), value.trim());
            match key {
                "lambda1" => cfg.lambda1 = parse_value(line, key, v)?,
                "lambda2" => cfg.lambda2 = parse_value(line, key, v)?,
                "lambda3" => cfg.lambda3 = parse_value(line, key, v)?,
                "lr" => cfg.lr = parse_value(line, key, v)?,
                "weight_decay" => cfg.weight_decay = parse_value(line, key, v)?,
                "batch_size" => cfg.batch_size = parse_value(line, key, v)?,
                "epochs" => cfg.epochs = parse_value(line, key, v)?,
                "scheduler.p_blur" => p_blur = parse_value(line, key, v)?,
                "scheduler.p_weather" => p_weather = parse_value(line, key, v)?,
                "scheduler.apply_dark" => apply_dark = parse_value(line, key, v)?,
                "sdr.metric" => cfg.sdr.metric = parse_value(line, key, v)?,
                "sdr.paradigm" => cfg.sdr.paradigm = parse_value(line, key, v)?,
                "sdr.patch_size" => cfg.sdr.patch_size = parse_value(line, key, v)?,
                "freeze_encoder" => cfg.freeze_encoder = parse_value(line, key, v)?,
                "seed" => cfg.seed = parse_value(line, key, v)?,
                "consistency_mode" => {
                    cfg.consistency_mode = match v {
                        "stop_grad_weak" => ConsistencyMode::StopGradWeak,
                        "both_branches" => ConsistencyMode::BothBranches,
                        _ => return Err(Error::Config { line, msg: format!("unknown consistency_mode {v:?}") }),
                    }
                }
                "brightness_jitter" => cfg.brightness_jitter = parse_value(line, key, v)?,
                "flip" => cfg.flip = parse_value(line, key, v)?,
                "pretrain_steps" => cfg.pretrain_steps = parse_value(line, key, v)?,
                "pretrain_lr" => cfg.pretrain_lr = parse_value(line, key, v)?,
                "init_ckpt" => cfg.init_ckpt = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
                _ => return Err(Error::Config { line, msg: format!("unknown key {key:?}") }),
            }
        }
        cfg.scheduler = SchedulerConfig::new(p_blur, p_weather, apply_dark)
            .map_err(|e| Error::Config { line: 0, msg: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.consistency_mode {
            ConsistencyMode::StopGradWeak => "stop_grad_weak",
            ConsistencyMode::BothBranches => "both_branches",
        };
        writeln!(f, "lambda1 = {}", self.lambda1)?;
        writeln!(f, "lambda2 = {}", self.lambda2)?;
        writeln!(f, "lambda3 = {}", self.lambda3)?;
        writeln!(f, "lr = {}", self.lr)?;
        writeln!(f, "weight_decay = {}", self.weight_decay)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "scheduler.p_blur = {}", self.scheduler.p_blur())?;
        writeln!(f, "scheduler.p_weather = {}", self.scheduler.p_weather())?;
        writeln!(f, "scheduler.apply_dark = {}", self.scheduler.apply_dark())?;
        writeln!(f, "sdr.metric = {}", self.sdr.metric)?;
        writeln!(f, "sdr.paradigm = {}", self.sdr.paradigm)?;
        writeln!(f, "sdr.patch_size = {}", self.sdr.patch_size)?;
        writeln!(f, "freeze_encoder = {}", self.freeze_encoder)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "consistency_mode = {mode}")?;
        writeln!(f, "brightness_jitter = {}", self.brightness_jitter)?;
        writeln!(f, "flip = {}", self.flip)?;
        writeln!(f, "pretrain_steps = {}", self.pretrain_steps)?;
        writeln!(f, "pretrain_lr = {}", self.pretrain_lr)?;
        if let Some(p) = &self.init_ckpt {
            writeln!(f, "init_ckpt = {}", p.display())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branches {
    pub weak: Vec<ImageBuffer>,
    pub strong: Vec<ImageBuffer>,
    /// Whether each image was flipped (applies to both branches).
    pub flipped: Vec<bool>,
    pub applied: Vec<Vec<AppliedCorruption>>,
}

fn jitter(img: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    img.with_data(img.data().iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect())
}

/// Weak branch: optional flip and brightness jitter. Strong branch: the
/// scheduled perturbation of the weak image, so both share geometry.
pub fn build_branches(batch: &[ImageBuffer], cfg: &TrainConfig, rng: &Rng) -> Result<Branches> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let per_image: Vec<_> = batch
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut r = rng.fork(&format!("branch-{i}"));
            let flip = cfg.flip && r.unit() < 0.5;
            let factor = 1.0 + cfg.brightness_jitter * (2.0 * r.unit() - 1.0);
            let mut weak = if flip { img.flip_horizontal() } else { img.clone() };
            if cfg.brightness_jitter > 0.0 {
                weak = jitter(&weak, factor)?;
            }
            let (strong, applied) = schedule_perturb(&weak, &cfg.scheduler, &mut r);
            Ok((weak, strong, flip, applied))
        })
        .collect::<Result<_>>()?;
    let mut out = Branches { weak: vec![], strong: vec![], flipped: vec![], applied: vec![] };
    for (w, s, f, a) in per_image {
        out.weak.push(w);
        out.strong.push(s);
        out.flipped.push(f);
        out.applied.push(a);
    }
    Ok(out)
}

/// The three loss terms on one sample and their weighted sum, with
/// gradients with respect to the student's weak and strong predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLoss {
    pub lc: f64,
    pub lkd: f64,
    pub ls: f64,
    pub total: LossValue,
}

pub fn sample_objective(
    student_weak: &DisparityMap,
    student_strong: &DisparityMap,
    teacher_weak: &DisparityMap,
    weights: LossWeights,
    mode: ConsistencyMode,
    sdr: &SdrConfig,
) -> Result<SampleLoss> {
    let lc = consistency_loss(student_weak, student_strong, mode)?;
    let lkd = kd_loss(student_weak, teacher_weak)?;
    let reference = match sdr.paradigm {
        SdrParadigm::Kd => teacher_weak,
        SdrParadigm::Consistency => student_weak,
    };
    let (ls_value, ls_grad) = sdr_loss_dense(student_strong, reference, sdr.patch_size, sdr.metric)?;
    let ls = LossValue { value: ls_value, grad_weak: None, grad_strong: Some(ls_grad) };
    let total = total_loss(&lc, &lkd, &ls, weights)?;
    Ok(SampleLoss { lc: lc.value, lkd: lkd.value, ls: ls.value, total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub epoch: usize,
    pub l_c: f64,
    pub l_kd: f64,
    pub l_s: f64,
    pub l_total: f64,
    pub grad_norm: f64,
    pub applied: Vec<Vec<AppliedCorruption>>,
}

fn nonzero(g: &Option<Vec<f64>>) -> Option<&[f64]> {
    g.as_deref().filter(|g| g.iter().any(|v| *v != 0.0))
}

/// One fine-tuning update on `batch`. Per-image work runs in parallel;
/// gradients are summed in batch order and averaged before the update.
pub fn train_step(
    student: &mut ModelState,
    teacher: &ModelState,
    batch: &[ImageBuffer],
    cfg: &TrainConfig,
    rng: &Rng,
    step: usize,
) -> Result<StepReport> {
    if !teacher.all_frozen() {
        return Err(Error::InvalidParameter("teacher must be frozen".into()));
    }
    let weights = cfg.weights()?;
    let branches = build_branches(batch, cfg, rng)?;
    let model: &ModelState = student;
    let per_image: Vec<(SampleLoss, Gradients)> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let (pw, cache_w) = model.forward(&branches.weak[i])?;
            let (ps, cache_s) = model.forward(&branches.strong[i])?;
            let pt = teacher.predict(&branches.weak[i])?;
            let loss = sample_objective(&pw, &ps, &pt, weights, cfg.consistency_mode, &cfg.sdr)?;
            let mut grads = Gradients::zeros_like(model);
            if let Some(g) = nonzero(&loss.total.grad_weak) {
                grads.add_assign(&model.gradients(&cache_w, g)?);
            }
            if let Some(g) = nonzero(&loss.total.grad_strong) {
                grads.add_assign(&model.gradients(&cache_s, g)?);
            }
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;

    let n = batch.len() as f64;
    let (mut lc, mut lkd, mut ls, mut lt) = (0.0, 0.0, 0.0, 0.0);
    let mut sum = Gradients::zeros_like(student);
    for (loss, g) in &per_image {
        lc += loss.lc / n;
        lkd += loss.lkd / n;
        ls += loss.ls / n;
        lt += loss.total.value / n;
        sum.add_assign(g);
    }
    sum.scale(1.0 / n);
    let grad_norm = sum.norm();
    if ![lc, lkd, ls, lt, grad_norm].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("l_c={lc} l_kd={lkd} l_s={ls} l_total={lt} grad_norm={grad_norm}"),
        });
    }
    student.zero_grads();
    student.accumulate(&sum);
    student.adamw_step(&AdamW::new(cfg.lr, cfg.weight_decay));
    Ok(StepReport { step, epoch: 0, l_c: lc, l_kd: lkd, l_s: ls, l_total: lt, grad_norm, applied: branches.applied })
}

/// One supervised update against ground-truth disparity. Returns the
/// batch-mean loss.
pub fn pretrain_step(
    model: &mut ModelState,
    batch: &[(&ImageBuffer, &DisparityMap)],
    cfg: &TrainConfig,
    rng: &Rng,
    step: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let m: &ModelState = model;
    let per_image: Vec<(f64, Gradients)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, (img, gt))| {
            let mut r = rng.fork(&format!("pretrain-{i}"));
            let flip = cfg.flip && r.unit() < 0.5;
            let (img, gt) =
                if flip { (img.flip_horizontal(), gt.flip_horizontal()) } else { ((*img).clone(), (*gt).clone()) };
            let (pred, cache) = m.forward(&img)?;
            let l = affine_invariant_loss(&pred, &gt)?;
            Ok((l.value, m.gradients(&cache, &l.grad_pred)?))
        })
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut sum = Gradients::zeros_like(model);
    for (l, g) in &per_image {
        loss += l / n;
        sum.add_assign(g);
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step, detail: format!("pretrain loss={loss}") });
    }
    sum.scale(1.0 / n);
    model.zero_grads();
    model.accumulate(&sum);
    model.adamw_step(&AdamW::new(cfg.pretrain_lr, cfg.weight_decay));
    Ok(loss)
}

/// Supervised pretraining for `cfg.pretrain_steps` steps, cycling through
/// shuffled passes over the dataset.
pub fn pretrain(model: &mut ModelState, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if cfg.pretrain_steps == 0 {
        return Ok(Vec::new());
    }
    if !data.has_ground_truth() {
        return Err(Error::InvalidParameter("pretraining needs ground truth (manifest.jsonl)".into()));
    }
    let root = Rng::new(cfg.seed).fork("pretrain");
    let mut order: Vec<usize> = Vec::new();
    let mut pass = 0usize;
    let mut losses = Vec::with_capacity(cfg.pretrain_steps);
    for step in 0..cfg.pretrain_steps {
        if order.len() < cfg.batch_size {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            root.fork(&format!("pass-{pass}")).shuffle(&mut idx);
            pass += 1;
            order.extend(idx);
        }
        let take = cfg.batch_size.min(data.len());
        let chosen: Vec<usize> = order.drain(..take).collect();
        let batch: Vec<(&ImageBuffer, &DisparityMap)> =
            chosen.iter().map(|&i| (&data.samples[i].image, data.samples[i].gt.as_ref().expect("checked"))).collect();
        losses.push(pretrain_step(model, &batch, cfg, &root.fork(&format!("step-{step}")), step)?);
    }
    model.reset_optimizer();
    Ok(losses)
}

/// Student initialization: a loaded checkpoint, or a fresh model
/// pretrained on `data`.
pub fn initial_student(cfg: &TrainConfig, data: &Dataset) -> Result<ModelState> {
    match &cfg.init_ckpt {
        Some(p) => load_checkpoint(p),
        None => {
            let channels = data.samples[0].image.channels();
            let mut m = ModelState::init(cfg.seed, channels)?;
            pretrain(&mut m, data, cfg)?;
            Ok(m)
        }
    }
}

/// Fine-tunes `student` against the frozen `teacher` for `cfg.epochs`
/// epochs. Each report is written to `log` as one JSON line, and a
/// checkpoint is written after every epoch when `out_ckpt` is set.
pub fn fine_tune(
    student: &mut ModelState,
    teacher: &ModelState,
    data: &Dataset,
    cfg: &TrainConfig,
    out_ckpt: Option<&Path>,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<StepReport>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset(data.root.clone()));
    }
    student.set_encoder_frozen(cfg.freeze_encoder);
    let root = Rng::new(cfg.seed).fork("fine-tune");
    let mut reports = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        root.fork(&format!("epoch-{epoch}")).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ImageBuffer> = chunk.iter().map(|&i| data.samples[i].image.clone()).collect();
            let mut report = train_step(student, teacher, &batch, cfg, &root.fork(&format!("step-{step}")), step)?;
            report.epoch = epoch;
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&report).expect("serializable");
                writeln!(w, "{line}").map_err(|e| Error::io("<step log>", e))?;
            }
            reports.push(report);
            step += 1;
        }
        if let Some(p) = out_ckpt {
            save_checkpoint(student, p)?;
        }
    }
    Ok(reports)
}

/// Full run: load data, initialize (and pretrain) the student, clone the
/// frozen teacher, fine-tune, and save the final checkpoint.
pub fn train(
    cfg: &TrainConfig,
    data_dir: impl AsRef<Path>,
    out_ckpt: impl AsRef<Path>,
    log: Option<&mut dyn Write>,
) -> Result<Vec<StepReport>> {
    cfg.validate()?;
    let data = Dataset::open(data_dir)?;
    let mut student = initial_student(cfg, &data)?;
    let teacher = student.clone_frozen();
    let out = out_ckpt.as_ref();
    let reports = fine_tune(&mut student, &teacher, &data, cfg, Some(out), log)?;
    save_checkpoint(&student, out)?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::random_sample;
    use crate::sdr::DistanceMetric;

    fn images(n: usize, size: usize, seed: u64) -> Vec<ImageBuffer> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| random_sample(size, &mut rng).unwrap().0).collect()
    }

    fn quiet(cfg: TrainConfig) -> TrainConfig {
        TrainConfig { scheduler: SchedulerConfig::disabled(), brightness_jitter: 0.0, flip: false, ..cfg }
    }

    #[test]
    fn config_round_trips_through_text() {
        let mut cfg = TrainConfig { lambda2: 0.5, batch_size: 3, seed: 99, ..TrainConfig::default() };
        cfg.sdr.metric = DistanceMetric::Manhattan;
        cfg.consistency_mode = ConsistencyMode::BothBranches;
        assert_eq!(TrainConfig::parse(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        match TrainConfig::parse("lr = 0.1\n\nbogus = 1\n") {
            Err(Error::Config { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(TrainConfig::parse("lambda1 = -1").is_err());
        assert!(TrainConfig::parse("batch_size = 0").is_err());
        assert!(TrainConfig::parse("lr = 0 # comment").is_err());
    }

    #[test]
    fn quiet_branches_are_identical_and_flips_are_shared() {
        let batch = images(3, 16, 1);
        let b = build_branches(&batch, &quiet(TrainConfig::default()), &Rng::new(4)).unwrap();
        assert_eq!(b.weak, b.strong);
        assert_eq!(b.weak, batch);

        let cfg = TrainConfig { scheduler: SchedulerConfig::disabled(), ..TrainConfig::default() };
        let rng = Rng::new(5);
        let b1 = build_branches(&batch, &cfg, &rng).unwrap();
        let b2 = build_branches(&batch, &cfg, &rng).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(b1.weak, b1.strong);
    }

    #[test]
    fn identity_case_has_zero_losses() {
        let batch = images(2, 16, 2);
        let mut student = ModelState::init(3, 3).unwrap();
        let teacher = student.clone_frozen();
        let mut cfg = quiet(TrainConfig::default());
        cfg.sdr.patch_size = 4;
        let r = train_step(&mut student, &teacher, &batch, &cfg, &Rng::new(0), 0).unwrap();
        assert!(r.l_c.abs() < 1e-12 && r.l_kd.abs() < 1e-12 && r.l_s.abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn zero_weights_only_decay() {
        let batch = images(2, 16, 2);
        let mut student = ModelState::init(3, 3).unwrap();
        let teacher = ModelState::init(4, 3).unwrap().clone_frozen();
        let mut cfg =
            TrainConfig { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, freeze_encoder: false, ..Default::default() };
        cfg.sdr.patch_size = 4;
        let before = student.params_flat();
        let r = train_step(&mut student, &teacher, &batch, &cfg, &Rng::new(0), 0).unwrap();
        assert_eq!(r.grad_norm, 0.0);
        for (a, b) in student.params_flat().iter().zip(&before) {
            assert_eq!(*a, (f64::from(*b) * (1.0 - cfg.lr * cfg.weight_decay)) as f32);
        }
    }

    #[test]
    fn only_strong_branch_feeds_back_without_kd_and_sdr() {
        let w = images(1, 16, 8).remove(0);
        let s = crate::corruption::contrast_with(&w, 0.5);
        let m = ModelState::init(1, 3).unwrap();
        let (pw, _) = m.forward(&w).unwrap();
        let (ps, _) = m.forward(&s).unwrap();
        let pt = ModelState::init(2, 3).unwrap().predict(&w).unwrap();
        let sdr = SdrConfig { patch_size: 4, ..SdrConfig::default() };
        let weights = LossWeights::new(1.0, 0.0, 0.0).unwrap();
        let l = sample_objective(&pw, &ps, &pt, weights, ConsistencyMode::StopGradWeak, &sdr).unwrap();
        assert!(nonzero(&l.total.grad_weak).is_none());
        assert!(nonzero(&l.total.grad_strong).is_some());
        let both = sample_objective(&pw, &ps, &pt, weights, ConsistencyMode::BothBranches, &sdr).unwrap();
        assert!(nonzero(&both.total.grad_weak).is_some());
    }

    #[test]
    fn steps_are_deterministic_and_teacher_is_untouched() {
        let batch = images(2, 16, 3);
        let mut cfg = TrainConfig::default();
        cfg.sdr.patch_size = 4;
        let run = || {
            let mut student = ModelState::init(3, 3).unwrap();
            let teacher = ModelState::init(9, 3).unwrap().clone_frozen();
            let probe = teacher.predict(&batch[0]).unwrap();
            let mut reports = vec![];
            for step in 0..3 {
                reports.push(train_step(&mut student, &teacher, &batch, &cfg, &Rng::new(step as u64), step).unwrap());
            }
            assert_eq!(teacher.predict(&batch[0]).unwrap(), probe);
            (student.params_flat(), reports)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn distillation_alone_decreases() {
        let batch = images(2, 16, 11);
        let mut student = ModelState::init(3, 3).unwrap();
        let teacher = ModelState::init(12, 3).unwrap().clone_frozen();
        let mut cfg =
            quiet(TrainConfig { lambda1: 0.0, lambda3: 0.0, freeze_encoder: false, lr: 1e-3, ..Default::default() });
        cfg.sdr.patch_size = 4;
        let mut prev = f64::INFINITY;
        for step in 0..50 {
            let r = train_step(&mut student, &teacher, &batch, &cfg, &Rng::new(0), step).unwrap();
            assert!(r.l_kd <= prev + 1e-3, "step {step}: {} > {prev}", r.l_kd);
            prev = r.l_kd;
        }
    }

    #[test]
    fn unfrozen_teacher_is_rejected() {
        let batch = images(1, 16, 3);
        let mut student = ModelState::init(3, 3).unwrap();
        let teacher = ModelState::init(3, 3).unwrap();
        assert!(train_step(&mut student, &teacher, &batch, &TrainConfig::default(), &Rng::new(0), 0).is_err());
    }
}
