//! Planar tensors and the convolution, upsampling and activation kernels
//! of the depth network, each with its backward pass.

/// Channel-major `c x h x w` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor { c, h, w, data: vec![0.0; c * h * w] }
    }

    #[inline]
    fn plane(&self, ch: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        (self.c, self.h, self.w) == (other.c, other.h, other.w)
    }
}

/// Shape of a square convolution with `k / 2` zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_dim(&self, n: usize) -> usize {
        let pad = self.k / 2;
        (n + 2 * pad - self.k) / self.stride + 1
    }

    /// Output columns `ox` for which `ox * stride + kx - pad` lands in `0..n`.
    #[inline]
    fn valid_range(&self, kx: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        let pad = self.k / 2;
        let s = self.stride;
        // ox * s + kx >= pad
        let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(s) };
        // ox * s + kx - pad <= n_in - 1
        let hi_excl = if n_in + pad > kx { ((n_in + pad - kx - 1) / s + 1).min(n_out) } else { 0 };
        (lo, hi_excl.max(lo))
    }
}

/// `params` holds the weights (`cout x cin x k x k`) followed by the biases.
pub fn conv_forward(shape: &ConvShape, params: &[f64], input: &Tensor) -> Tensor {
    debug_assert_eq!(input.c, shape.cin);
    let (oh, ow) = (shape.out_dim(input.h), shape.out_dim(input.w));
    let mut out = Tensor::zeros(shape.cout, oh, ow);
    let (k, s, pad) = (shape.k, shape.stride, shape.k / 2);
    let bias = &params[shape.weight_len()..];
    for co in 0..shape.cout {
        let out_plane = &mut out.data[co * oh * ow..(co + 1) * oh * ow];
        out_plane.fill(bias[co]);
        for ci in 0..shape.cin {
            let in_plane = input.plane(ci);
            for ky in 0..k {
                let (oy_lo, oy_hi) = shape.valid_range(ky, input.h, oh);
                for kx in 0..k {
                    let wgt = params[((co * shape.cin + ci) * k + ky) * k + kx];
                    let (ox_lo, ox_hi) = shape.valid_range(kx, input.w, ow);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - pad;
                        let in_row = &in_plane[iy * input.w..(iy + 1) * input.w];
                        let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let ix0 = ox_lo + kx - pad;
                            let src = &in_row[ix0..ix0 + (ox_hi - ox_lo)];
                            for (o, i) in out_row[ox_lo..ox_hi].iter_mut().zip(src) {
                                *o += wgt * i;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                out_row[ox] += wgt * in_row[ox * s + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates parameter gradients into `grad_params` and returns the
/// input gradient when `want_input` is set.
#[allow(clippy::needless_range_loop)]
pub fn conv_backward(
    shape: &ConvShape,
    params: &[f64],
    input: &Tensor,
    grad_out: &Tensor,
    grad_params: Option<&mut [f64]>,
    want_input: bool,
) -> Option<Tensor> {
    let (oh, ow) = (grad_out.h, grad_out.w);
    let (k, s, pad) = (shape.k, shape.stride, shape.k / 2);
    let mut grad_in = want_input.then(|| Tensor::zeros(input.c, input.h, input.w));
    let mut grad_params = grad_params;
    if let Some(gp) = grad_params.as_deref_mut() {
        let wl = shape.weight_len();
        for co in 0..shape.cout {
            gp[wl + co] += grad_out.plane(co).iter().sum::<f64>();
        }
    }
    for co in 0..shape.cout {
        let g_plane = grad_out.plane(co);
        for ci in 0..shape.cin {
            let in_plane = input.plane(ci);
            for ky in 0..k {
                let (oy_lo, oy_hi) = shape.valid_range(ky, input.h, oh);
                for kx in 0..k {
                    let widx = ((co * shape.cin + ci) * k + ky) * k + kx;
                    let wgt = params[widx];
                    let (ox_lo, ox_hi) = shape.valid_range(kx, input.w, ow);
                    let mut gw = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - pad;
                        let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                        let in_row = &in_plane[iy * input.w..(iy + 1) * input.w];
                        if s == 1 {
                            let ix0 = ox_lo + kx - pad;
                            let len = ox_hi - ox_lo;
                            let g = &g_row[ox_lo..ox_hi];
                            gw += g.iter().zip(&in_row[ix0..ix0 + len]).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(gi) = grad_in.as_mut() {
                                let base = ci * input.h * input.w + iy * input.w + ix0;
                                for (d, gv) in gi.data[base..base + len].iter_mut().zip(g) {
                                    *d += wgt * gv;
                                }
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * s + kx - pad;
                                gw += g_row[ox] * in_row[ix];
                                if let Some(gi) = grad_in.as_mut() {
                                    gi.data[ci * input.h * input.w + iy * input.w + ix] += wgt * g_row[ox];
                                }
                            }
                        }
                    }
                    if let Some(gp) = grad_params.as_deref_mut() {
                        gp[widx] += gw;
                    }
                }
            }
        }
    }
    grad_in
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(t: &Tensor) -> Tensor {
    let (h2, w2) = (t.h * 2, t.w * 2);
    let mut out = Tensor::zeros(t.c, h2, w2);
    for c in 0..t.c {
        let src = t.plane(c);
        let dst = &mut out.data[c * h2 * w2..(c + 1) * h2 * w2];
        for y in 0..h2 {
            for x in 0..w2 {
                dst[y * w2 + x] = src[(y / 2) * t.w + x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2x2 block.
pub fn upsample2_backward(g: &Tensor) -> Tensor {
    let (h, w) = (g.h / 2, g.w / 2);
    let mut out = Tensor::zeros(g.c, h, w);
    for c in 0..g.c {
        let src = g.plane(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..g.h {
            for x in 0..g.w {
                dst[(y / 2) * w + x / 2] += src[y * g.w + x];
            }
        }
    }
    out
}

pub fn relu(t: &Tensor) -> Tensor {
    Tensor { data: t.data.iter().map(|v| v.max(0.0)).collect(), ..*t }
}

/// Masks `g` by the positive part of the pre-activation `z`.
pub fn relu_backward(z: &Tensor, g: &Tensor) -> Tensor {
    Tensor { data: z.data.iter().zip(&g.data).map(|(z, g)| if *z > 0.0 { *g } else { 0.0 }).collect(), ..*g }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn add_assign(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Direct-definition convolution used as an oracle.
    fn naive_conv(shape: &ConvShape, params: &[f64], input: &Tensor) -> Tensor {
        let (oh, ow) = (shape.out_dim(input.h), shape.out_dim(input.w));
        let pad = (shape.k / 2) as isize;
        let mut out = Tensor::zeros(shape.cout, oh, ow);
        for co in 0..shape.cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = params[shape.weight_len() + co];
                    for ci in 0..shape.cin {
                        for ky in 0..shape.k {
                            for kx in 0..shape.k {
                                let iy = (oy * shape.stride + ky) as isize - pad;
                                let ix = (ox * shape.stride + kx) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= input.h as isize || ix >= input.w as isize {
                                    continue;
                                }
                                acc += params[((co * shape.cin + ci) * shape.k + ky) * shape.k + kx]
                                    * input.data[(ci * input.h + iy as usize) * input.w + ix as usize];
                            }
                        }
                    }
                    out.data[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn random(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.unit() * 2.0 - 1.0).collect()
    }

    #[test]
    fn conv_matches_naive_definition() {
        let mut rng = Rng::new(1);
        for &(cin, cout, k, stride, h, w) in
            &[(3, 4, 3, 1, 5, 7), (2, 3, 3, 2, 8, 6), (4, 1, 1, 1, 3, 3), (1, 2, 3, 2, 7, 5)]
        {
            let shape = ConvShape { cin, cout, k, stride };
            let params = random(&mut rng, shape.param_len());
            let input = Tensor { c: cin, h, w, data: random(&mut rng, cin * h * w) };
            let a = conv_forward(&shape, &params, &input);
            let b = naive_conv(&shape, &params, &input);
            assert!(a.same_shape(&b));
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        // <g, conv(x)> is linear in both x and the weights; compare the
        // analytic gradients against the naive forward by finite differences.
        let mut rng = Rng::new(2);
        for &(stride, h, w) in &[(1, 5, 6), (2, 6, 8), (2, 7, 5)] {
            let shape = ConvShape { cin: 2, cout: 3, k: 3, stride };
            let params = random(&mut rng, shape.param_len());
            let input = Tensor { c: 2, h, w, data: random(&mut rng, 2 * h * w) };
            let (oh, ow) = (shape.out_dim(h), shape.out_dim(w));
            let g = Tensor { c: 3, h: oh, w: ow, data: random(&mut rng, 3 * oh * ow) };
            let mut gp = vec![0.0; shape.param_len()];
            let gi = conv_backward(&shape, &params, &input, &g, Some(&mut gp), true).unwrap();
            let f = |p: &[f64], x: &Tensor| -> f64 {
                naive_conv(&shape, p, x).data.iter().zip(&g.data).map(|(a, b)| a * b).sum()
            };
            let eps = 1e-6;
            for i in 0..params.len() {
                let mut up = params.clone();
                up[i] += eps;
                let mut dn = params.clone();
                dn[i] -= eps;
                let fd = (f(&up, &input) - f(&dn, &input)) / (2.0 * eps);
                assert!((fd - gp[i]).abs() < 1e-7, "param {i}");
            }
            for i in 0..input.data.len() {
                let mut up = input.clone();
                up.data[i] += eps;
                let mut dn = input.clone();
                dn.data[i] -= eps;
                let fd = (f(&params, &up) - f(&params, &dn)) / (2.0 * eps);
                assert!((fd - gi.data[i]).abs() < 1e-7, "input {i}");
            }
        }
    }

    #[test]
    fn upsample_adjoint() {
        let mut rng = Rng::new(3);
        let x = Tensor { c: 2, h: 3, w: 4, data: random(&mut rng, 24) };
        let g = Tensor { c: 2, h: 6, w: 8, data: random(&mut rng, 96) };
        let lhs: f64 = upsample2(&x).data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&upsample2_backward(&g).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn softplus_is_stable_and_positive() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-30.0) > 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        let h = 1e-6;
        for z in [-3.0, -0.2, 0.7, 4.0] {
            let fd = (softplus(z + h) - softplus(z - h)) / (2.0 * h);
            assert!((fd - sigmoid(z)).abs() < 1e-8);
        }
    }
}
