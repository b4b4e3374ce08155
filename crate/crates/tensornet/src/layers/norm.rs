use super::Layer;
use crate::error::{shape_err, Result, TensorError};
use crate::param::Parameter;
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;

/// Layer normalization over the last axis with learned gain and shift.
pub struct LayerNorm {
    pub gain: Parameter,
    pub shift: Parameter,
    cache: Option<(Vec<f64>, Vec<f64>, Vec<usize>)>,
}

impl LayerNorm {
    pub fn new(name: &str, width: usize) -> Self {
        Self {
            gain: Parameter::new(format!("{name}.gain"), Tensor::full(&[width], 1.0)),
            shift: Parameter::zeros(format!("{name}.shift"), &[width]),
            cache: None,
        }
    }

    fn width(&self) -> usize {
        self.gain.numel()
    }
}

impl Layer for LayerNorm {
    fn describe(&self) -> String {
        format!("layer_norm width={}", self.width())
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let e = self.width();
        if x.last_dim() != e {
            return Err(shape_err(
                "layer_norm",
                format!("input {:?} vs width {e}", x.shape()),
            ));
        }
        let rows = x.leading();
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x.data()[r * e..][..e];
            let mean = row.iter().sum::<f64>() / e as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / e as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[r] = is;
            for j in 0..e {
                let xh = (row[j] - mean) * is;
                xhat[r * e + j] = xh;
                y[r * e + j] = xh * self.gain.value.data()[j] + self.shift.value.data()[j];
            }
        }
        self.cache = Some((xhat, inv_std, x.shape().to_vec()));
        Ok(Tensor::from_parts(x.shape().to_vec(), y))
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (xhat, inv_std, shape) = self
            .cache
            .take()
            .ok_or(TensorError::BackwardBeforeForward("layer_norm"))?;
        let e = self.width();
        if dy.len() != xhat.len() {
            return Err(shape_err(
                "layer_norm backward",
                format!("dy {:?}", dy.shape()),
            ));
        }
        let mut dx = vec![0.0; xhat.len()];
        let mut dxhat = vec![0.0; e];
        for (r, is) in inv_std.iter().enumerate() {
            let g = &dy.data()[r * e..][..e];
            let xh = &xhat[r * e..][..e];
            for j in 0..e {
                self.gain.grad.data_mut()[j] += g[j] * xh[j];
                self.shift.grad.data_mut()[j] += g[j];
                dxhat[j] = g[j] * self.gain.value.data()[j];
            }
            let mean_d = dxhat.iter().sum::<f64>() / e as f64;
            let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / e as f64;
            for j in 0..e {
                dx[r * e + j] = is * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
        }
        Ok(Tensor::from_parts(shape, dx))
    }

    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.gain, &self.shift]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gain, &mut self.shift]
    }
}
