use rand::Rng;

use super::Layer;
use crate::error::{shape_err, Result, TensorError};
use crate::gemm::{add_col_sums, gemm, MatMut, MatRef};
use crate::param::Parameter;
use crate::tensor::Tensor;

/// Affine map applied along the last axis: `y = x W + b`.
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Parameter::glorot(
                format!("{name}.weight"),
                &[in_dim, out_dim],
                in_dim,
                out_dim,
                rng,
            ),
            bias: Parameter::zeros(format!("{name}.bias"), &[out_dim]),
            input: None,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(shape_err(
                "linear",
                format!(
                    "weight {:?} incompatible with bias {:?}",
                    weight.shape(),
                    bias.shape()
                ),
            ));
        }
        Ok(Self {
            weight: Parameter::new("weight", weight),
            bias: Parameter::new("bias", bias),
            input: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }
}

/// `x: [.., in] · weight: [in, out] + bias: [out]`.
pub fn linear_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (in_dim, out_dim) = match weight.shape() {
        [i, o] => (*i, *o),
        s => {
            return Err(shape_err(
                "linear",
                format!("weight must be 2-D, got {s:?}"),
            ))
        }
    };
    if x.last_dim() != in_dim {
        return Err(shape_err(
            "linear",
            format!(
                "input {:?} does not match weight {:?}",
                x.shape(),
                weight.shape()
            ),
        ));
    }
    if bias.shape() != [out_dim] {
        return Err(shape_err(
            "linear",
            format!(
                "bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            ),
        ));
    }
    let rows = x.leading();
    let mut out = Vec::with_capacity(rows * out_dim);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    gemm(
        1.0,
        MatRef::new(x.data(), rows, in_dim),
        MatRef::new(weight.data(), in_dim, out_dim),
        1.0,
        MatMut::new(&mut out, rows, out_dim),
    );
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_dim;
    Ok(Tensor::from_parts(shape, out))
}

impl Layer for Linear {
    fn describe(&self) -> String {
        format!("linear in={} out={}", self.in_dim(), self.out_dim())
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = linear_forward(x, &self.weight.value, &self.bias.value)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or(TensorError::BackwardBeforeForward("linear"))?;
        let (in_dim, out_dim) = (self.in_dim(), self.out_dim());
        let rows = x.leading();
        if dy.len() != rows * out_dim {
            return Err(shape_err("linear backward", format!("dy {:?}", dy.shape())));
        }
        gemm(
            1.0,
            MatRef::new(x.data(), rows, in_dim).t(),
            MatRef::new(dy.data(), rows, out_dim),
            1.0,
            MatMut::new(self.weight.grad.data_mut(), in_dim, out_dim),
        );
        add_col_sums(self.bias.grad.data_mut(), dy.data(), out_dim);
        let mut dx = vec![0.0; rows * in_dim];
        gemm(
            1.0,
            MatRef::new(dy.data(), rows, out_dim),
            MatRef::new(self.weight.value.data(), in_dim, out_dim).t(),
            0.0,
            MatMut::new(&mut dx, rows, in_dim),
        );
        Ok(Tensor::from_parts(x.shape().to_vec(), dx))
    }

    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}
