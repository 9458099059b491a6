use super::ModelState;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl ModelState {
    /// One update of every unfrozen parameter from the accumulated
    /// gradients. Frozen layers are left untouched, including decay.
    pub fn adamw_step(&mut self, opt: &AdamW) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for layer in self.layers.iter_mut().filter(|l| !l.frozen) {
            for i in 0..layer.params.len() {
                let g = layer.grads[i];
                layer.m[i] = opt.beta1 * layer.m[i] + (1.0 - opt.beta1) * g;
                layer.v[i] = opt.beta2 * layer.v[i] + (1.0 - opt.beta2) * g * g;
                let m_hat = layer.m[i] / bc1;
                let v_hat = layer.v[i] / bc2;
                let p = f64::from(layer.params[i]);
                let update = m_hat / (v_hat.sqrt() + opt.eps) + opt.weight_decay * p;
                layer.params[i] = (p - opt.lr * update) as f32;
            }
        }
        self.generation += 1;
    }

    /// Clears moment estimates and the step counter.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for layer in &mut self.layers {
            layer.m.iter_mut().for_each(|v| *v = 0.0);
            layer.v.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
