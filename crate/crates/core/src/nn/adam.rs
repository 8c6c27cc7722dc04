use serde::{Deserialize, Serialize};

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    first_moment: Vec<T>,
    second_moment: Vec<T>,
    steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            first_moment: vec![T::zero(); num_params],
            second_moment: vec![T::zero(); num_params],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.first_moment.len(), "adam: parameter count");
        assert_eq!(grads.len(), params.len(), "adam: gradient count");
        self.steps += 1;
        let c = &self.config;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one = T::one();
        let t = self.steps as i32;
        // fold both bias corrections into the step size
        let step_size =
            T::from_f64(c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t)));
        let eps = T::from_f64(c.epsilon * (1.0 - c.beta2.powi(t)).sqrt());
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p = *p - step_size * *m / (v.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::<f64>::new(AdamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut adam = Adam::<f64>::new(cfg, 2);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[3.0, -0.2]);
        assert!((p[0] + 0.01).abs() < 1e-8);
        assert!((p[1] - 0.01).abs() < 1e-7);
    }

    #[test]
    fn minimizes_convex_quadratic() {
        // f(x) = Σ a_i (x_i − c_i)², every coordinate starting one unit away
        let a = [1.0, 4.0, 0.25];
        let c = [0.3, -1.2, 2.0];
        let loss = |x: &[f64]| -> f64 { (0..3).map(|i| a[i] * (x[i] - c[i]).powi(2)).sum() };
        let mut x = vec![1.3, -0.2, 3.0];
        let start = loss(&x);
        let mut adam = Adam::<f64>::new(
            AdamConfig {
                learning_rate: 0.05,
                beta1: 0.5,
                ..Default::default()
            },
            3,
        );
        let mut prev = start;
        for _ in 0..100 {
            let g: Vec<f64> = (0..3).map(|i| 2.0 * a[i] * (x[i] - c[i])).collect();
            adam.step(&mut x, &g);
            let l = loss(&x);
            assert!(l < prev, "loss did not decrease: {l} >= {prev}");
            prev = l;
        }
        assert!(prev < 1e-6 * start, "{prev} vs {start}");
    }
}
