use crate::student::StudentParams;
use crate::tensor::Tensor;

/// Adam moments and step counter, one accumulator per parameter tensor.
/// Weight decay, when non-zero, is applied decoupled from the moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moment_shapes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gi = gi as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let upd = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                let mut x = *w as f64;
                x -= self.lr * (upd + self.weight_decay * x);
                *w = x as f32;
            }
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if n > max_norm && n.is_finite() {
        let c = (max_norm / n) as f32;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }
    n
}

/// Exponential moving average of the student weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaParams {
    pub decay: f64,
    pub shadow: StudentParams,
}

impl EmaParams {
    pub fn new(params: &StudentParams, decay: f64) -> Self {
        EmaParams { decay, shadow: params.clone() }
    }

    /// `shadow ← decay·shadow + (1 − decay)·param`.
    pub fn update(&mut self, params: &StudentParams) {
        let d = self.decay;
        for (s, p) in self.shadow.tensors.iter_mut().zip(&params.tensors) {
            for (a, &b) in s.data_mut().iter_mut().zip(p.data()) {
                *a = (d * *a as f64 + (1.0 - d) * b as f64) as f32;
            }
        }
    }
}
