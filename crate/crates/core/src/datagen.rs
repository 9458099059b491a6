//! Synthetic orthographic scenes with analytic ground-truth depth, and
//! the on-disk dataset layout shared by training and evaluation.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DisparityMap, ImageBuffer};
use crate::io::{load_image, load_pfm, save_image, save_pfm};
use crate::rng::Rng;

pub const DEPTH_NEAR: f64 = 1.0;
pub const DEPTH_FAR: f64 = 20.0;
/// Background depth at the top and bottom rows.
pub const BACKGROUND_DEPTH: (f64, f64) = (20.0, 5.0);
pub const BACKGROUND_ALBEDO: f64 = 0.6;
pub const TEXTURE_AMPLITUDE: f64 = 0.05;
/// Lattice spacing of the value-noise texture, in pixels.
pub const TEXTURE_CELL: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Rect { y0: f64, x0: f64, height: f64, width: f64 },
    Disk { cy: f64, cx: f64, radius: f64 },
}

impl Shape {
    pub fn covers(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, height, width } => y >= y0 && y < y0 + height && x >= x0 && x < x0 + width,
            Shape::Disk { cy, cx, radius } => (y - cy).powi(2) + (x - cx).powi(2) <= radius * radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    /// Meters, in `[DEPTH_NEAR, DEPTH_FAR]`.
    pub depth: f64,
    pub albedo: f64,
    /// Per-channel color multiplier.
    pub tint: [f64; 3],
}

/// Primitives over a top-to-bottom far-to-near background ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn random(rng: &mut Rng, size: usize) -> Scene {
        let s = size as f64;
        let count = 2 + rng.below(5);
        let primitives = (0..count)
            .map(|_| {
                let shape = if rng.unit() < 0.5 {
                    let height = s * (0.15 + 0.35 * rng.unit());
                    let width = s * (0.15 + 0.35 * rng.unit());
                    Shape::Rect {
                        y0: rng.unit() * (s - height * 0.5),
                        x0: rng.unit() * (s - width * 0.5),
                        height,
                        width,
                    }
                } else {
                    Shape::Disk { cy: rng.unit() * s, cx: rng.unit() * s, radius: s * (0.1 + 0.15 * rng.unit()) }
                };
                Primitive {
                    shape,
                    depth: DEPTH_NEAR + (DEPTH_FAR - DEPTH_NEAR) * rng.unit(),
                    albedo: 0.2 + 0.8 * rng.unit(),
                    tint: [0.7 + 0.3 * rng.unit(), 0.7 + 0.3 * rng.unit(), 0.7 + 0.3 * rng.unit()],
                }
            })
            .collect();
        Scene { primitives }
    }

    fn background_depth(y: usize, size: usize) -> f64 {
        let (top, bottom) = BACKGROUND_DEPTH;
        let t = if size > 1 { y as f64 / (size - 1) as f64 } else { 0.0 };
        top + (bottom - top) * t
    }

    /// Depth and surface of the nearest surface at pixel center `(y, x)`.
    fn nearest(&self, y: usize, x: usize, size: usize) -> (f64, f64, [f64; 3]) {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        let mut best = (Self::background_depth(y, size), BACKGROUND_ALBEDO, [1.0; 3]);
        for p in &self.primitives {
            if p.depth < best.0 && p.shape.covers(py, px) {
                best = (p.depth, p.albedo, p.tint);
            }
        }
        best
    }

    /// Un-normalized disparity `1 / depth` of the nearest surface.
    pub fn raw_disparity(&self, size: usize) -> Vec<f64> {
        (0..size * size).map(|i| 1.0 / self.nearest(i / size, i % size, size).0).collect()
    }
}

fn value_noise(size: usize, rng: &mut Rng) -> Vec<f64> {
    let cells = size / TEXTURE_CELL + 2;
    let lattice: Vec<f64> = (0..cells * cells).map(|_| 2.0 * rng.unit() - 1.0).collect();
    (0..size * size)
        .map(|i| {
            let fy = (i / size) as f64 / TEXTURE_CELL as f64;
            let fx = (i % size) as f64 / TEXTURE_CELL as f64;
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            let at = |y: usize, x: usize| lattice[y * cells + x];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            top * (1.0 - ty) + bottom * ty
        })
        .collect()
}

/// Renders an RGB image and its min-max normalized ground-truth disparity.
///
/// Intensity is `albedo · tint · (0.5 + 0.5 / depth)` (depth in units of
/// `DEPTH_NEAR`) plus a value-noise texture. A scene whose disparity is
/// constant is rejected with `DegenerateScale`.
pub fn render(scene: &Scene, size: usize, rng: &mut Rng) -> Result<(ImageBuffer, DisparityMap)> {
    if size == 0 || !size.is_multiple_of(8) {
        return Err(Error::InvalidParameter(format!("scene size {size} must be a positive multiple of 8")));
    }
    let texture = value_noise(size, rng);
    let mut data = Vec::with_capacity(size * size * 3);
    let mut disparity = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (depth, albedo, tint) = scene.nearest(y, x, size);
            let shade = albedo * (0.5 + 0.5 / (depth / DEPTH_NEAR));
            let tex = TEXTURE_AMPLITUDE * texture[y * size + x];
            for t in tint {
                data.push(shade * t + tex);
            }
            disparity.push(1.0 / depth);
        }
    }
    let lo = disparity.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = disparity.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateScale);
    }
    let gt = DisparityMap::new(size, size, disparity.iter().map(|d| (d - lo) / (hi - lo)).collect())?;
    Ok((ImageBuffer::new(size, size, 3, data)?, gt))
}

/// Draws random scenes from `rng` until one renders with non-constant depth.
pub fn random_sample(size: usize, rng: &mut Rng) -> Result<(ImageBuffer, DisparityMap)> {
    loop {
        let scene = Scene::random(rng, size);
        match render(&scene, size, rng) {
            Err(Error::DegenerateScale) => continue,
            other => return other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub gt: String,
    pub seed: u64,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Per-scene seeds derived from the corpus seed.
pub fn scene_seeds(n: usize, seed: u64) -> Vec<u64> {
    let root = Rng::new(seed).fork("datagen");
    (0..n).map(|i| root.fork(&format!("scene-{i}")).next_u64()).collect()
}

/// Writes `n` PPM scenes, their PFM ground truths and a JSON-lines manifest.
pub fn generate_dataset(n: usize, size: usize, seed: u64, out_dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    if n == 0 {
        return Err(Error::InvalidParameter("scene count must be >= 1".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries: Vec<ManifestEntry> = scene_seeds(n, seed)
        .into_par_iter()
        .enumerate()
        .map(|(i, scene_seed)| {
            let (img, gt) = random_sample(size, &mut Rng::new(scene_seed))?;
            let entry =
                ManifestEntry { image: format!("scene_{i:05}.ppm"), gt: format!("scene_{i:05}.pfm"), seed: scene_seed };
            save_image(&img, out_dir.join(&entry.image))?;
            save_pfm(&gt, out_dir.join(&entry.gt))?;
            Ok(entry)
        })
        .collect::<Result<_>>()?;
    let path = out_dir.join(MANIFEST_NAME);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for e in &entries {
        writeln!(f, "{}", serde_json::to_string(e).expect("serializable")).map_err(|err| Error::io(&path, err))?;
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: ImageBuffer,
    pub gt: Option<DisparityMap>,
}

/// Images (and ground truth, when a manifest is present) of a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Reads `manifest.jsonl` when present; otherwise every `.ppm`/`.pgm`
    /// file in name order, without ground truth.
    pub fn open(dir: impl AsRef<Path>) -> Result<Dataset> {
        let root = dir.as_ref().to_path_buf();
        let manifest = root.join(MANIFEST_NAME);
        let samples = if manifest.exists() {
            let f = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
            let mut samples = Vec::new();
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&manifest, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: ManifestEntry =
                    serde_json::from_str(&line).map_err(|e| Error::MalformedLog { line: i + 1, msg: e.to_string() })?;
                samples.push(Sample {
                    name: entry.image.clone(),
                    image: load_image(root.join(&entry.image))?,
                    gt: Some(load_pfm(root.join(&entry.gt))?),
                });
            }
            samples
        } else {
            list_images(&root)?
                .into_iter()
                .map(|p| {
                    Ok(Sample {
                        name: p.file_name().expect("file").to_string_lossy().into_owned(),
                        image: load_image(&p)?,
                        gt: None,
                    })
                })
                .collect::<Result<_>>()?
        };
        if samples.is_empty() {
            return Err(Error::EmptyDataset(root));
        }
        Ok(Dataset { root, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.samples.iter().all(|s| s.gt.is_some())
    }
}

/// `.ppm` and `.pgm` files of `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if p.is_file() && (ext == "ppm" || ext == "pgm") {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}
