//! Expert mixing schedule and adaptive parameter-space noise.

use epiflow_nn::ParamSet;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Probability of taking the expert action: `ε₀ · max(0, 1 − step / decay_steps)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertSchedule {
    pub initial: f64,
    pub decay_steps: u64,
}

impl ExpertSchedule {
    pub fn new(initial: f64, decay_steps: u64) -> Self {
        Self { initial, decay_steps }
    }

    /// Never selects the expert.
    pub fn disabled() -> Self {
        Self::new(0.0, 1)
    }

    pub fn probability(&self, step: u64) -> f64 {
        if self.decay_steps == 0 {
            return 0.0;
        }
        self.initial * (1.0 - step as f64 / self.decay_steps as f64).max(0.0)
    }
}

/// Gaussian weight perturbation whose scale tracks a target distance in action space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamNoise {
    pub std: f64,
    pub target_distance: f64,
    pub factor: f64,
}

impl ParamNoise {
    pub fn new(std: f64, target_distance: f64, factor: f64) -> Self {
        Self {
            std,
            target_distance,
            factor,
        }
    }

    /// Grows the scale when the perturbed policy stays closer than the target, shrinks it
    /// otherwise.
    pub fn adapt(&mut self, distance: f64) {
        if distance < self.target_distance {
            self.std *= self.factor;
        } else if distance > self.target_distance {
            self.std /= self.factor;
        }
    }

    pub fn perturb<R: Rng + ?Sized>(&self, params: &ParamSet, rng: &mut R) -> ParamSet {
        let mut out = params.clone();
        if self.std > 0.0 {
            let normal = Normal::new(0.0, self.std).expect("finite std");
            for t in out.tensors_mut() {
                t.mapv_inplace(|v| v + normal.sample(rng));
            }
        }
        out
    }
}

/// Root-mean-square difference between two rate matrices.
pub fn action_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len().max(1) as f64;
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = ExpertSchedule::new(0.5, 100);
        assert_eq!(s.probability(0), 0.5);
        assert_eq!(s.probability(50), 0.25);
        assert_eq!(s.probability(100), 0.0);
        assert_eq!(s.probability(1000), 0.0);
        let mut last = f64::INFINITY;
        for step in 0..200 {
            let p = s.probability(step);
            assert!(p <= last);
            last = p;
        }
        assert_eq!(ExpertSchedule::disabled().probability(0), 0.0);
    }

    #[test]
    fn adapt_directions() {
        let mut n = ParamNoise::new(0.1, 0.2, 1.01);
        n.adapt(0.2);
        assert_eq!(n.std, 0.1);
        n.adapt(0.0);
        assert!(n.std > 0.1);
        let before = n.std;
        n.adapt(1.0);
        assert!(n.std < before);
    }
}
