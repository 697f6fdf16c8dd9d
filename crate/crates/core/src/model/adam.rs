/// Adam with Keras defaults (β₁ 0.9, β₂ 0.999, ε 1e-7).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Advances the step counter; call once before the per-tensor updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates the tensor in `slot` (stable across steps) in place.
    pub fn update(&mut self, slot: usize, param: &mut [f32], grad: &[f32]) {
        assert_eq!(param.len(), grad.len());
        assert!(self.step > 0, "begin_step not called");
        if self.moments.len() <= slot {
            self.moments.resize_with(slot + 1, || (Vec::new(), Vec::new()));
        }
        let (m, v) = &mut self.moments[slot];
        if m.is_empty() {
            *m = vec![0.0; param.len()];
            *v = vec![0.0; param.len()];
        }
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let t = self.step;
        let lr_t = (self.learning_rate * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t))) as f32;
        let eps = self.epsilon as f32;
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            param[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
        }
    }
}
