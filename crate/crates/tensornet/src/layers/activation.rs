use super::Layer;
use crate::error::{shape_err, Result, TensorError};
use crate::tensor::Tensor;

#[derive(Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn describe(&self) -> String {
        "relu".into()
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        let mut mask = Vec::with_capacity(x.len());
        for v in y.data_mut() {
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            mask.push(on);
        }
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .take()
            .ok_or(TensorError::BackwardBeforeForward("relu"))?;
        if mask.len() != dy.len() {
            return Err(shape_err("relu backward", format!("dy {:?}", dy.shape())));
        }
        let mut dx = dy.clone();
        for (v, on) in dx.data_mut().iter_mut().zip(mask) {
            if !on {
                *v = 0.0;
            }
        }
        Ok(dx)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU, `0.5 x (1 + tanh(c (x + a x^3)))`. Smooth
/// everywhere, unlike [`Relu`].
#[derive(Default)]
pub struct Gelu {
    input: Option<Tensor>,
}

impl Gelu {
    pub fn new() -> Self {
        Self::default()
    }
}

// 0.5 (1 + tanh(u)) is the logistic function of 2u, which needs one exp
// instead of a tanh. The exps run as one slice pass.
fn gelu_gates(xs: &[f64]) -> Vec<f64> {
    let mut s = xs.to_vec();
    crate::vexp::map_in_place(&mut s, gate);
    s
}

#[inline(always)]
fn gate(x: f64) -> f64 {
    1.0 / (1.0 + crate::vexp::exp(-2.0 * GELU_C * (x + GELU_A * x * x * x)))
}

fn gelu_grad_from_gate(x: f64, s: f64) -> f64 {
    s + 2.0 * x * s * (1.0 - s) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
fn gelu(x: f64) -> f64 {
    x * gelu_gates(&[x])[0]
}

#[cfg(test)]
fn gelu_grad(x: f64) -> f64 {
    gelu_grad_from_gate(x, gelu_gates(&[x])[0])
}

impl Layer for Gelu {
    fn describe(&self) -> String {
        "gelu".into()
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut y = gelu_gates(x.data());
        y.iter_mut().zip(x.data()).for_each(|(s, v)| *s *= v);
        self.input = Some(x.clone());
        Tensor::new(x.shape().to_vec(), y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or(TensorError::BackwardBeforeForward("gelu"))?;
        if x.len() != dy.len() {
            return Err(shape_err("gelu backward", format!("dy {:?}", dy.shape())));
        }
        let mut dx = dy.clone();
        let gates = gelu_gates(x.data());
        for ((d, &v), &s) in dx.data_mut().iter_mut().zip(x.data()).zip(&gates) {
            *d *= gelu_grad_from_gate(v, s);
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        // Tanh form at x = 1: 0.5 (1 + tanh(c * 1.044715)).
        assert!((gelu(1.0) - 0.841_191_990_608_276_8).abs() < 1e-12);
        assert!((gelu(-3.0) + 0.003_637_392_081_773_0).abs() < 1e-12);
        for &x in &[-40.0, -2.0, -0.3, 0.0, 0.7, 2.5, 40.0] {
            let tanh_form = 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh());
            assert!((gelu(x) - tanh_form).abs() < 1e-14);
        }
        for &x in &[-2.0, -0.3, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
