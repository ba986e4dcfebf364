use super::{lit, PolicyParams, Real};

/// Adam with bias correction. Moments are kept in the parameter dtype.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: PolicyParams<T>,
    v: PolicyParams<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &PolicyParams<T>, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One descent step along `grads`. A zero learning rate leaves `params` untouched.
    pub fn update(&mut self, params: &mut PolicyParams<T>, grads: &PolicyParams<T>) {
        self.step += 1;
        if self.learning_rate == 0.0 {
            return;
        }
        let b1: T = lit(self.beta1);
        let b2: T = lit(self.beta2);
        let one = T::one();
        let bc1: T = lit(1.0 - self.beta1.powi(self.step.min(i32::MAX as u64) as i32));
        let bc2: T = lit(1.0 - self.beta2.powi(self.step.min(i32::MAX as u64) as i32));
        let lr: T = lit(self.learning_rate);
        let eps: T = lit(self.epsilon);
        let ms = self.m.slices_mut();
        let vs = self.v.slices_mut();
        for (((p, g), m), v) in params.slices_mut().into_iter().zip(grads.slices()).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Rescale `grads` so their global norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut PolicyParams<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(lit(max_norm / norm));
    }
    norm
}
