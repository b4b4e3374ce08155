use crate::graph::ModelGraph;
use crate::param::Parameter;

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to every parameter and zeroes the gradients.
    pub fn step(&self, graph: &mut ModelGraph) {
        for p in graph.parameters_mut() {
            self.update(p);
        }
    }

    pub fn update(&self, p: &mut Parameter) {
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let values = p.value.data_mut();
        let grads = p.grad.data_mut();
        let m = p.first_moment.data_mut();
        let v = p.second_moment.data_mut();
        for i in 0..values.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            grads[i] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_value_unchanged() {
        let mut p = Parameter::new("p", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
        let adam = Adam::new(0.01);
        for _ in 0..10 {
            adam.update(&mut p);
        }
        assert_eq!(p.value.data(), &[0.5, -1.0, 2.0]);
        assert_eq!(p.step_count(), 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Parameter::new("p", Tensor::new(vec![3], vec![0.0; 3]).unwrap());
        p.grad = Tensor::new(vec![3], vec![0.3, -2.0, 1e-3]).unwrap();
        let adam = Adam::new(0.01);
        adam.update(&mut p);
        for (v, g) in p.value.data().iter().zip([0.3f64, -2.0, 1e-3]) {
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
            assert!((v.abs() - 0.01).abs() < 1e-7);
        }
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
    }
}
