//! A small encoder-decoder disparity network with explicit backward passes.
//!
//! Encoder: three 3x3 stride-2 convolutions (8, 16, 32 channels) with
//! ReLU. Decoder: three blocks of nearest 2x upsampling and a 3x3
//! convolution (16, 8, 8 channels) with ReLU; the first two add the
//! matching encoder activation. Head: 1x1 convolution to one channel and
//! softplus, so every output is positive.
//!
//! Parameters are stored as `f32`; activations and gradients are `f64`.

mod checkpoint;
pub mod conv;
mod optim;

use std::fmt;

use crate::error::{Error, Result};
use crate::image::{DisparityMap, ImageBuffer};
use crate::rng::Rng;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use optim::AdamW;

use conv::{
    add_assign, conv_backward, conv_forward, relu, relu_backward, sigmoid, softplus, upsample2, upsample2_backward,
    ConvShape, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Enc1,
    Enc2,
    Enc3,
    Dec1,
    Dec2,
    Dec3,
    Head,
}

impl Block {
    pub const ALL: [Block; 7] =
        [Block::Enc1, Block::Enc2, Block::Enc3, Block::Dec1, Block::Dec2, Block::Dec3, Block::Head];

    pub fn name(self) -> &'static str {
        match self {
            Block::Enc1 => "enc1",
            Block::Enc2 => "enc2",
            Block::Enc3 => "enc3",
            Block::Dec1 => "dec1",
            Block::Dec2 => "dec2",
            Block::Dec3 => "dec3",
            Block::Head => "head",
        }
    }

    pub fn is_encoder(self) -> bool {
        matches!(self, Block::Enc1 | Block::Enc2 | Block::Enc3)
    }

    fn shape(self, input_channels: usize) -> ConvShape {
        let (cin, cout, k, stride) = match self {
            Block::Enc1 => (input_channels, 8, 3, 2),
            Block::Enc2 => (8, 16, 3, 2),
            Block::Enc3 => (16, 32, 3, 2),
            Block::Dec1 => (32, 16, 3, 1),
            Block::Dec2 => (16, 8, 3, 1),
            Block::Dec3 => (8, 8, 3, 1),
            Block::Head => (8, 1, 1, 1),
        };
        ConvShape { cin, cout, k, stride }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub block: Block,
    pub shape: ConvShape,
    /// Weights (`cout x cin x k x k`) then biases.
    pub params: Vec<f32>,
    pub grads: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub frozen: bool,
}

impl Layer {
    fn new(block: Block, shape: ConvShape, params: Vec<f32>, frozen: bool) -> Self {
        let n = params.len();
        Layer { block, shape, params, grads: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n], frozen }
    }

    fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|v| f64::from(*v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    input_channels: usize,
    seed: u64,
    layers: Vec<Layer>,
    /// Optimizer step count.
    pub(crate) step: u64,
    /// Bumped on every parameter mutation; caches remember it.
    generation: u64,
}

/// Activations retained by [`ModelState::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    generation: u64,
    input: Tensor,
    z: [Tensor; 7],
    e: [Tensor; 3],
    d: [Tensor; 3],
    u: [Tensor; 3],
}

impl ActivationCache {
    /// Which ReLU inputs were positive, layer by layer. Two caches with the
    /// same pattern lie on the same linear piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.z[..6].iter().flat_map(|z| z.data.iter().map(|v| *v > 0.0)).collect()
    }
}

/// Per-layer parameter gradients produced by one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &ModelState) -> Self {
        Gradients { layers: model.layers.iter().map(|l| vec![0.0; l.params.len()]).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.layers.iter_mut().flatten() {
            *v *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn image_to_tensor(img: &ImageBuffer) -> Tensor {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut t = Tensor::zeros(c, h, w);
    for (i, v) in img.data().iter().enumerate() {
        let (pix, ch) = (i / c, i % c);
        t.data[ch * h * w + pix] = *v;
    }
    t
}

impl ModelState {
    /// He-uniform weights (limit `sqrt(6 / fan_in)`), zero biases.
    pub fn init(seed: u64, input_channels: usize) -> Result<Self> {
        if input_channels != 1 && input_channels != 3 {
            return Err(Error::InvalidParameter(format!("input channels must be 1 or 3, got {input_channels}")));
        }
        let root = Rng::new(seed).fork("model-init");
        let layers = Block::ALL
            .iter()
            .map(|&block| {
                let shape = block.shape(input_channels);
                let mut rng = root.fork(block.name());
                let limit = (6.0 / shape.fan_in() as f64).sqrt();
                let mut params: Vec<f32> =
                    (0..shape.weight_len()).map(|_| ((2.0 * rng.unit() - 1.0) * limit) as f32).collect();
                params.resize(shape.param_len(), 0.0);
                Layer::new(block, shape, params, false)
            })
            .collect();
        Ok(ModelState { input_channels, seed, layers, step: 0, generation: 0 })
    }

    pub(crate) fn from_parts(input_channels: usize, seed: u64, layers: Vec<Layer>) -> Self {
        ModelState { input_channels, seed, layers, step: 0, generation: 0 }
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, block: Block) -> &Layer {
        &self.layers[Block::ALL.iter().position(|b| *b == block).expect("known block")]
    }

    pub fn set_frozen(&mut self, block: Block, frozen: bool) {
        for l in &mut self.layers {
            if l.block == block {
                l.frozen = frozen;
            }
        }
    }

    pub fn set_encoder_frozen(&mut self, frozen: bool) {
        for l in &mut self.layers {
            if l.block.is_encoder() {
                l.frozen = frozen;
            }
        }
    }

    pub fn is_frozen(&self, block: Block) -> bool {
        self.layer(block).frozen
    }

    pub fn all_frozen(&self) -> bool {
        self.layers.iter().all(|l| l.frozen)
    }

    /// Deep copy with every block frozen, for use as a fixed teacher.
    pub fn clone_frozen(&self) -> ModelState {
        let mut t = self.clone();
        for l in &mut t.layers {
            l.frozen = true;
            l.grads.iter_mut().for_each(|g| *g = 0.0);
        }
        t
    }

    // ---- flat parameter view ----

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.len()).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if i < l.params.len() {
                return (li, i);
            }
            i -= l.params.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, i: usize) -> f32 {
        let (l, j) = self.locate(i);
        self.layers[l].params[j]
    }

    pub fn set_param(&mut self, i: usize, v: f32) {
        let (l, j) = self.locate(i);
        self.layers[l].params[j] = v;
        self.generation += 1;
    }

    pub fn grad(&self, i: usize) -> f64 {
        let (l, j) = self.locate(i);
        self.layers[l].grads[j]
    }

    /// Mutable access to one gradient entry (fault injection in checks).
    pub fn grad_mut(&mut self, i: usize) -> &mut f64 {
        let (l, j) = self.locate(i);
        &mut self.layers[l].grads[j]
    }

    /// Human-readable name such as `dec2.weight[17]` or `head.bias[0]`.
    pub fn param_name(&self, i: usize) -> String {
        let (l, j) = self.locate(i);
        let layer = &self.layers[l];
        let wl = layer.shape.weight_len();
        if j < wl {
            format!("{}.weight[{j}]", layer.block)
        } else {
            format!("{}.bias[{}]", layer.block, j - wl)
        }
    }

    pub fn params_flat(&self) -> Vec<f32> {
        self.layers.iter().flat_map(|l| l.params.iter().copied()).collect()
    }

    pub fn zero_grads(&mut self) {
        for l in &mut self.layers {
            l.grads.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.layers.iter().flat_map(|l| &l.grads).map(|g| g * g).sum::<f64>().sqrt()
    }

    // ---- forward / backward ----

    pub fn check_input(&self, img: &ImageBuffer) -> Result<()> {
        if img.channels() != self.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} channels, image has {}",
                self.input_channels,
                img.channels()
            )));
        }
        if !img.height().is_multiple_of(8) || !img.width().is_multiple_of(8) {
            return Err(Error::ShapeMismatch(format!("input {}x{} is not divisible by 8", img.height(), img.width())));
        }
        Ok(())
    }

    /// Dense positive disparity for `img`, plus the cache for backward.
    pub fn forward(&self, img: &ImageBuffer) -> Result<(DisparityMap, ActivationCache)> {
        self.check_input(img)?;
        let p: Vec<Vec<f64>> = self.layers.iter().map(Layer::params_f64).collect();
        let sh = |i: usize| &self.layers[i].shape;
        let input = image_to_tensor(img);

        let z0 = conv_forward(sh(0), &p[0], &input);
        let e1 = relu(&z0);
        let z1 = conv_forward(sh(1), &p[1], &e1);
        let e2 = relu(&z1);
        let z2 = conv_forward(sh(2), &p[2], &e2);
        let e3 = relu(&z2);

        let u1 = upsample2(&e3);
        let z3 = conv_forward(sh(3), &p[3], &u1);
        let mut d1 = relu(&z3);
        add_assign(&mut d1, &e2);
        let u2 = upsample2(&d1);
        let z4 = conv_forward(sh(4), &p[4], &u2);
        let mut d2 = relu(&z4);
        add_assign(&mut d2, &e1);
        let u3 = upsample2(&d2);
        let z5 = conv_forward(sh(5), &p[5], &u3);
        let d3 = relu(&z5);
        let z6 = conv_forward(sh(6), &p[6], &d3);

        let out = DisparityMap::new(img.height(), img.width(), z6.data.iter().map(|z| softplus(*z)).collect())?;
        let cache = ActivationCache {
            generation: self.generation,
            input,
            z: [z0, z1, z2, z3, z4, z5, z6],
            e: [e1, e2, e3],
            d: [d1, d2, d3],
            u: [u1, u2, u3],
        };
        Ok((out, cache))
    }

    /// Forward without keeping activations.
    pub fn predict(&self, img: &ImageBuffer) -> Result<DisparityMap> {
        self.forward(img).map(|(d, _)| d)
    }

    /// Parameter gradients of `<grad_out, forward(img)>`, without touching
    /// the model. Frozen layers get all-zero gradients.
    pub fn gradients(&self, cache: &ActivationCache, grad_out: &[f64]) -> Result<Gradients> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache(format!(
                "cache from parameter generation {}, model is at {}",
                cache.generation, self.generation
            )));
        }
        let z6 = &cache.z[6];
        if grad_out.len() != z6.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient has {} values, model output has {}",
                grad_out.len(),
                z6.data.len()
            )));
        }
        let p: Vec<Vec<f64>> = self.layers.iter().map(Layer::params_f64).collect();
        let mut grads = Gradients::zeros_like(self);
        // Input gradients are needed only while some upstream layer trains.
        let upstream_trainable = |i: usize| self.layers[..i].iter().any(|l| !l.frozen);
        let sh = |i: usize| &self.layers[i].shape;
        let back = |i: usize, input: &Tensor, g: &Tensor, grads: &mut Gradients| -> Option<Tensor> {
            let gp = (!self.layers[i].frozen).then(|| grads.layers[i].as_mut_slice());
            conv_backward(sh(i), &p[i], input, g, gp, upstream_trainable(i))
        };

        let g_z6 = Tensor { data: z6.data.iter().zip(grad_out).map(|(z, g)| g * sigmoid(*z)).collect(), ..*z6 };
        let Some(g_d3) = back(6, &cache.d[2], &g_z6, &mut grads) else { return Ok(grads) };
        let g_z5 = relu_backward(&cache.z[5], &g_d3);
        let Some(g_u3) = back(5, &cache.u[2], &g_z5, &mut grads) else { return Ok(grads) };
        let g_d2 = upsample2_backward(&g_u3);
        let mut g_e1 = g_d2.clone();
        let g_z4 = relu_backward(&cache.z[4], &g_d2);
        let Some(g_u2) = back(4, &cache.u[1], &g_z4, &mut grads) else { return Ok(grads) };
        let g_d1 = upsample2_backward(&g_u2);
        let mut g_e2 = g_d1.clone();
        let g_z3 = relu_backward(&cache.z[3], &g_d1);
        let Some(g_u1) = back(3, &cache.u[0], &g_z3, &mut grads) else { return Ok(grads) };
        let g_e3 = upsample2_backward(&g_u1);
        let g_z2 = relu_backward(&cache.z[2], &g_e3);
        if let Some(g) = back(2, &cache.e[1], &g_z2, &mut grads) {
            add_assign(&mut g_e2, &g);
        }
        let g_z1 = relu_backward(&cache.z[1], &g_e2);
        if let Some(g) = back(1, &cache.e[0], &g_z1, &mut grads) {
            add_assign(&mut g_e1, &g);
        }
        let g_z0 = relu_backward(&cache.z[0], &g_e1);
        back(0, &cache.input, &g_z0, &mut grads);
        Ok(grads)
    }

    /// Accumulates parameter gradients of `<grad_out, output>` into the
    /// model's gradient buffers.
    pub fn backward(&mut self, cache: &ActivationCache, grad_out: &[f64]) -> Result<()> {
        let g = self.gradients(cache, grad_out)?;
        self.accumulate(&g);
        Ok(())
    }

    /// Adds `g` into the gradient buffers of unfrozen layers.
    pub fn accumulate(&mut self, g: &Gradients) {
        for (l, gl) in self.layers.iter_mut().zip(&g.layers) {
            if l.frozen {
                continue;
            }
            for (a, b) in l.grads.iter_mut().zip(gl) {
                *a += b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
        let mut rng = Rng::new(seed);
        ImageBuffer::from_fn(h, w, 3, |_, _, _| rng.unit()).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = ModelState::init(5, 3).unwrap();
        let b = ModelState::init(5, 3).unwrap();
        let c = ModelState::init(6, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.layers[0].params, c.layers[0].params);
        for l in a.layers() {
            let limit = (6.0 / l.shape.fan_in() as f64).sqrt() as f32;
            let wl = l.shape.weight_len();
            assert!(l.params[..wl].iter().all(|w| w.abs() <= limit));
            assert!(l.params[wl..].iter().all(|b| *b == 0.0));
        }
        assert!(ModelState::init(1, 2).is_err());
    }

    #[test]
    fn forward_shape_positivity_determinism() {
        let m = ModelState::init(1, 3).unwrap();
        let img = test_image(64, 64, 2);
        let (a, _) = m.forward(&img).unwrap();
        let (b, _) = m.forward(&img).unwrap();
        assert_eq!((a.height(), a.width()), (64, 64));
        assert!(a.data().iter().all(|v| *v > 0.0));
        assert_eq!(a, b);
        let (c, _) = m.forward(&test_image(24, 40, 3)).unwrap();
        assert_eq!((c.height(), c.width()), (24, 40));
        assert!(m.forward(&test_image(20, 16, 3)).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let mut m = ModelState::init(1, 3).unwrap();
        let (_, cache) = m.forward(&test_image(16, 16, 4)).unwrap();
        m.backward(&cache, &[0.0; 256]).unwrap();
        assert_eq!(m.grad_norm(), 0.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = ModelState::init(1, 3).unwrap();
        let (_, cache) = m.forward(&test_image(16, 16, 4)).unwrap();
        let v = m.param(10);
        m.set_param(10, v + 0.5);
        assert!(matches!(m.backward(&cache, &[1.0; 256]), Err(Error::StaleCache(_))));
    }

    #[test]
    fn frozen_encoder_gets_no_gradient_and_decoder_is_unchanged() {
        let img = test_image(16, 16, 7);
        let mut rng = Rng::new(8);
        let g: Vec<f64> = (0..256).map(|_| rng.unit() - 0.5).collect();
        let mut free = ModelState::init(3, 3).unwrap();
        let (_, cache) = free.forward(&img).unwrap();
        free.backward(&cache, &g).unwrap();
        let mut frozen = ModelState::init(3, 3).unwrap();
        frozen.set_encoder_frozen(true);
        let (_, cache) = frozen.forward(&img).unwrap();
        frozen.backward(&cache, &g).unwrap();
        for (a, b) in free.layers().iter().zip(frozen.layers()) {
            if a.block.is_encoder() {
                assert!(b.grads.iter().all(|v| *v == 0.0));
                assert!(a.grads.iter().any(|v| *v != 0.0));
            } else {
                assert_eq!(a.grads, b.grads);
            }
        }
    }

    #[test]
    fn clone_frozen_copies_and_freezes() {
        let m = ModelState::init(9, 3).unwrap();
        let t = m.clone_frozen();
        assert_eq!(t.params_flat(), m.params_flat());
        assert!(t.all_frozen());
    }

    #[test]
    fn param_names() {
        let m = ModelState::init(9, 3).unwrap();
        assert_eq!(m.param_name(0), "enc1.weight[0]");
        assert_eq!(m.param_name(216), "enc1.bias[0]");
        assert_eq!(m.param_name(m.param_count() - 1), "head.bias[0]");
    }
}
