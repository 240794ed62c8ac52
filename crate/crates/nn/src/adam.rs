use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layers::ParamSet;

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn first_moments(&self) -> &[Array2<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Array2<f64>] {
        &self.second
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &[Array2<f64>]) -> Result<()> {
        let tensors = params.tensors_mut();
        if grads.len() != tensors.len()
            || self.first.len() != tensors.len()
            || grads.iter().zip(tensors.iter()).any(|(g, t)| g.dim() != t.dim())
        {
            return Err(NnError::Shape("adam: gradient layout differs from parameters".into()));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(NnError::NonFinite { scope: None, what: "gradient" });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in tensors
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("x", Array2::from_elem((1, 2), value));
        p
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = one(1.5);
        let mut adam = Adam::new(&p, 0.1);
        adam.update(&mut p, &[Array2::from_elem((1, 2), 0.3)]).unwrap();
        let after_first = p.clone();
        let m = adam.first_moments()[0][[0, 0]];
        adam.update(&mut p, &[Array2::zeros((1, 2))]).unwrap();
        assert_eq!(adam.first_moments()[0][[0, 0]], 0.9 * m);
        // The decayed moments still move the parameter; a fresh optimizer does not.
        let mut fresh = Adam::new(&after_first, 0.1);
        let mut q = after_first.clone();
        fresh.update(&mut q, &[Array2::zeros((1, 2))]).unwrap();
        assert_eq!(q, after_first);
    }

    #[test]
    fn first_step_closed_form() {
        // m̂ = g and v̂ = g², so the first step is lr · g / (|g| + ε).
        let g = 0.25;
        let mut p = one(1.0);
        let mut adam = Adam::new(&p, 1e-3);
        adam.update(&mut p, &[Array2::from_elem((1, 2), g)]).unwrap();
        let expected = 1.0 - 1e-3 * g / (g + 1e-8);
        assert!((p.tensors()[0][[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_nan() {
        let mut p = one(1.0);
        let mut adam = Adam::new(&p, 1e-3);
        let err = adam.update(&mut p, &[Array2::from_elem((1, 2), f64::NAN)]);
        assert!(matches!(err, Err(NnError::NonFinite { .. })));
    }
}
