//! Adam with bias correction over a flat parameter vector.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let lr = self.lr;
        self.update_with(params, grads, |_| lr)
    }

    /// Like [`Adam::update`] with a learning rate per parameter index.
    pub fn update_with(&mut self, params: &mut [f64], grads: &[f64], lr: impl Fn(usize) -> f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                what: "optimizer state",
                expected: self.m.len(),
                actual: if params.len() != self.m.len() { params.len() } else { grads.len() },
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr(i) * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Keeps only the rows (of `stride` values) whose flag is set.
    pub fn retain_rows(&mut self, stride: usize, keep: &[bool]) {
        for buf in [&mut self.m, &mut self.v] {
            let mut out = Vec::with_capacity(buf.len());
            for (row, &k) in buf.chunks_exact(stride).zip(keep) {
                if k {
                    out.extend_from_slice(row);
                }
            }
            *buf = out;
        }
    }

    /// Appends zero-initialized moments for `rows` new rows.
    pub fn extend_rows(&mut self, stride: usize, rows: usize) {
        self.m.resize(self.m.len() + stride * rows, 0.0);
        self.v.resize(self.v.len() + stride * rows, 0.0);
    }

    /// Resets the moments of one row.
    pub fn reset_row(&mut self, stride: usize, row: usize) {
        self.m[row * stride..(row + 1) * stride].fill(0.0);
        self.v[row * stride..(row + 1) * stride].fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut a = Adam::new(3, 0.001);
        let mut p = vec![1.0, -2.0, 0.5];
        a.update(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut a = Adam::new(1, 0.001);
        let mut p = vec![0.0];
        a.update(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut a = Adam::new(2, 0.001);
        assert!(a.update(&mut [0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn quadratic_bowl_descends() {
        let mut a = Adam::new(1, 0.01);
        let mut p = vec![3.0];
        let mut prev = f64::INFINITY;
        for step in 0..100 {
            let loss = p[0] * p[0];
            if step >= 5 {
                assert!(loss < prev, "step {step}: {loss} >= {prev}");
            }
            prev = loss;
            let g = 2.0 * p[0];
            a.update(&mut p, &[g]).unwrap();
        }
    }
}
