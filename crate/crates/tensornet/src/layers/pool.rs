use rand::Rng;

use super::{softmax_in_place, Layer};
use crate::error::{shape_err, Result, TensorError};
use crate::param::Parameter;
use crate::tensor::Tensor;

/// `[B, T, H] -> [B, H]`, keeping the final timestep.
#[derive(Default)]
pub struct LastStep {
    input_shape: Option<Vec<usize>>,
}

impl LastStep {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for LastStep {
    fn describe(&self) -> String {
        "last_step".into()
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [b, t, h] = *x.shape() else {
            return Err(shape_err(
                "last_step",
                format!("expected [B, T, H], got {:?}", x.shape()),
            ));
        };
        let mut out = Vec::with_capacity(b * h);
        for bi in 0..b {
            out.extend_from_slice(&x.data()[(bi * t + t - 1) * h..][..h]);
        }
        self.input_shape = Some(x.shape().to_vec());
        Ok(Tensor::from_parts(vec![b, h], out))
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .take()
            .ok_or(TensorError::BackwardBeforeForward("last_step"))?;
        let [b, t, h] = shape[..] else { unreachable!() };
        if dy.len() != b * h {
            return Err(shape_err(
                "last_step backward",
                format!("dy {:?}", dy.shape()),
            ));
        }
        let mut dx = vec![0.0; b * t * h];
        for bi in 0..b {
            dx[(bi * t + t - 1) * h..][..h].copy_from_slice(&dy.data()[bi * h..][..h]);
        }
        Ok(Tensor::from_parts(shape, dx))
    }
}

/// Temporal attention pooling: scores `s_t = h_t . w`, weights
/// `a = softmax_t(s)`, output `sum_t a_t h_t`.
pub struct AttentionPool {
    pub score: Parameter,
    cache: Option<(Tensor, Vec<f64>)>,
}

impl AttentionPool {
    pub fn new<R: Rng + ?Sized>(name: &str, width: usize, rng: &mut R) -> Self {
        Self {
            score: Parameter::glorot(format!("{name}.score"), &[width], width, 1, rng),
            cache: None,
        }
    }
}

impl Layer for AttentionPool {
    fn describe(&self) -> String {
        format!("attention_pool width={}", self.score.numel())
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [b, t, h] = *x.shape() else {
            return Err(shape_err(
                "attention_pool",
                format!("expected [B, T, H], got {:?}", x.shape()),
            ));
        };
        if h != self.score.numel() {
            return Err(shape_err(
                "attention_pool",
                format!(
                    "input {:?} does not match score vector of width {}",
                    x.shape(),
                    self.score.numel()
                ),
            ));
        }
        let w = self.score.value.data();
        let mut weights = vec![0.0; b * t];
        let mut out = vec![0.0; b * h];
        for bi in 0..b {
            let a = &mut weights[bi * t..][..t];
            for (ti, s) in a.iter_mut().enumerate() {
                let row = &x.data()[(bi * t + ti) * h..][..h];
                *s = row.iter().zip(w).map(|(p, q)| p * q).sum();
            }
            softmax_in_place(a);
            for ti in 0..t {
                let row = &x.data()[(bi * t + ti) * h..][..h];
                for (o, v) in out[bi * h..][..h].iter_mut().zip(row) {
                    *o += a[ti] * v;
                }
            }
        }
        self.cache = Some((x.clone(), weights));
        Ok(Tensor::from_parts(vec![b, h], out))
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (x, weights) = self
            .cache
            .take()
            .ok_or(TensorError::BackwardBeforeForward("attention_pool"))?;
        let [b, t, h] = x.shape()[..] else {
            unreachable!()
        };
        if dy.len() != b * h {
            return Err(shape_err(
                "attention_pool backward",
                format!("dy {:?}", dy.shape()),
            ));
        }
        let mut dx = vec![0.0; b * t * h];
        let mut ds = vec![0.0; t];
        for bi in 0..b {
            let a = &weights[bi * t..][..t];
            let g = &dy.data()[bi * h..][..h];
            for ti in 0..t {
                let row = &x.data()[(bi * t + ti) * h..][..h];
                ds[ti] = row.iter().zip(g).map(|(p, q)| p * q).sum();
            }
            let dot: f64 = ds.iter().zip(a).map(|(d, p)| d * p).sum();
            for ti in 0..t {
                let dsi = a[ti] * (ds[ti] - dot);
                let row = &x.data()[(bi * t + ti) * h..][..h];
                let dst = &mut dx[(bi * t + ti) * h..][..h];
                for j in 0..h {
                    dst[j] = a[ti] * g[j] + dsi * self.score.value.data()[j];
                    self.score.grad.data_mut()[j] += dsi * row[j];
                }
            }
        }
        Ok(Tensor::from_parts(x.shape().to_vec(), dx))
    }

    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.score]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.score]
    }
}
