use serde::{Deserialize, Serialize};

use super::model::{AgCnnModel, Gradients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(model: &AgCnnModel, lr: f64) -> Self {
        let shapes: Vec<usize> = model.parameters().iter().map(|(_, p)| p.len()).collect();
        Self::new(&shapes, lr)
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>]) {
        assert_eq!(params.len(), self.m.len(), "parameter tensor count");
        assert_eq!(grads.len(), self.m.len(), "gradient tensor count");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    pub fn step_model(&mut self, model: &mut AgCnnModel, grads: &Gradients) {
        let mut params = model.parameters_mut();
        self.step(&mut params, &grads.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut s = AdamState::new(&[3], 1e-3);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        for _ in 0..5 {
            s.step(&mut [&mut p], &[vec![0.0; 3]]);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_limit() {
        let mut s = AdamState::new(&[2], 1e-3);
        let mut p = vec![0.0, 0.0];
        let mut last = p.clone();
        for _ in 0..2000 {
            last.copy_from_slice(&p);
            s.step(&mut [&mut p], &[vec![0.3, -7.0]]);
        }
        assert!(((last[0] - p[0]) - 1e-3).abs() < 1e-7);
        assert!(((last[1] - p[1]) + 1e-3).abs() < 1e-7);
    }
}
