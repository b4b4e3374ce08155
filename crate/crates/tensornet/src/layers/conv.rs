use rand::Rng;

use super::Layer;
use crate::error::{arg_err, shape_err, Result, TensorError};
use crate::gemm::{add_col_sums, gemm, MatMut, MatRef};
use crate::param::Parameter;
use crate::tensor::Tensor;

/// Temporal convolution over `[N, T, Cin]` with kernels `[K, Cin, Cout]`.
///
/// `padding` zero-pads both ends of the time axis; `padding = 0` is a
/// "valid" convolution with `T' = floor((T - K) / stride) + 1`.
pub struct Conv1d {
    pub kernel: Parameter,
    pub bias: Parameter,
    stride: usize,
    padding: usize,
    cache: Option<ConvCache>,
}

struct ConvCache {
    input_shape: Vec<usize>,
    cols: Vec<f64>,
    out_len: usize,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    t: usize,
    c_in: usize,
    k: usize,
    c_out: usize,
    t_out: usize,
}

pub fn conv_output_len(t: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = t + 2 * padding;
    if stride == 0 || k == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn geometry(x: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Geometry> {
    let [n, t, c_in] = *x.shape() else {
        return Err(shape_err(
            "conv1d",
            format!("input must be [N, T, Cin], got {:?}", x.shape()),
        ));
    };
    let [k, kc, c_out] = *kernel.shape() else {
        return Err(shape_err(
            "conv1d",
            format!("kernel must be [K, Cin, Cout], got {:?}", kernel.shape()),
        ));
    };
    if kc != c_in {
        return Err(shape_err(
            "conv1d",
            format!(
                "input {:?} has {c_in} channels but kernel {:?} expects {kc}",
                x.shape(),
                kernel.shape()
            ),
        ));
    }
    if stride == 0 {
        return Err(arg_err("conv1d", "stride must be >= 1"));
    }
    let t_out = conv_output_len(t, k, stride, padding).ok_or_else(|| {
        arg_err(
            "conv1d",
            format!(
                "kernel length {k} exceeds padded sequence length {} (T={t}, padding={padding})",
                t + 2 * padding
            ),
        )
    })?;
    Ok(Geometry {
        n,
        t,
        c_in,
        k,
        c_out,
        t_out,
    })
}

fn im2col(x: &[f64], g: Geometry, stride: usize, padding: usize) -> Vec<f64> {
    let width = g.k * g.c_in;
    let mut cols = vec![0.0; g.n * g.t_out * width];
    for n in 0..g.n {
        for to in 0..g.t_out {
            let row = &mut cols[(n * g.t_out + to) * width..][..width];
            for k in 0..g.k {
                let src = (to * stride + k) as isize - padding as isize;
                if src < 0 || src as usize >= g.t {
                    continue;
                }
                let from = (n * g.t + src as usize) * g.c_in;
                row[k * g.c_in..(k + 1) * g.c_in].copy_from_slice(&x[from..from + g.c_in]);
            }
        }
    }
    cols
}

fn conv_apply(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Vec<f64>, Geometry)> {
    let g = geometry(x, kernel, stride, padding)?;
    if bias.shape() != [g.c_out] {
        return Err(shape_err(
            "conv1d",
            format!("bias {:?} for {} output channels", bias.shape(), g.c_out),
        ));
    }
    let cols = im2col(x.data(), g, stride, padding);
    let rows = g.n * g.t_out;
    let width = g.k * g.c_in;
    let mut out = Vec::with_capacity(rows * g.c_out);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    gemm(
        1.0,
        MatRef::new(&cols, rows, width),
        MatRef::new(kernel.data(), width, g.c_out),
        1.0,
        MatMut::new(&mut out, rows, g.c_out),
    );
    Ok((
        Tensor::from_parts(vec![g.n, g.t_out, g.c_out], out),
        cols,
        g,
    ))
}

/// Stateless convolution, `out[b,t,o] = sum_{k,c} x[b, t*stride + k - padding, c] * kernel[k,c,o] + bias[o]`.
pub fn conv1d_forward(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    conv_apply(x, kernel, bias, stride, padding).map(|(y, _, _)| y)
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        kernel_len: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let kernel = Parameter::glorot(
            format!("{name}.kernel"),
            &[kernel_len, c_in, c_out],
            kernel_len * c_in,
            kernel_len * c_out,
            rng,
        );
        Self {
            kernel,
            bias: Parameter::zeros(format!("{name}.bias"), &[c_out]),
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_len(&self, t: usize) -> Option<usize> {
        conv_output_len(t, self.kernel.value.shape()[0], self.stride, self.padding)
    }
}

impl Layer for Conv1d {
    fn describe(&self) -> String {
        let s = self.kernel.value.shape();
        format!(
            "conv1d k={} cin={} cout={} stride={} padding={}",
            s[0], s[1], s[2], self.stride, self.padding
        )
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, cols, g) = conv_apply(
            x,
            &self.kernel.value,
            &self.bias.value,
            self.stride,
            self.padding,
        )?;
        self.cache = Some(ConvCache {
            input_shape: x.shape().to_vec(),
            cols,
            out_len: g.t_out,
        });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or(TensorError::BackwardBeforeForward("conv1d"))?;
        let [n, t, c_in] = cache.input_shape[..] else {
            unreachable!()
        };
        let k = self.kernel.value.shape()[0];
        let c_out = self.kernel.value.shape()[2];
        let rows = n * cache.out_len;
        let width = k * c_in;
        if dy.len() != rows * c_out {
            return Err(shape_err("conv1d backward", format!("dy {:?}", dy.shape())));
        }
        gemm(
            1.0,
            MatRef::new(&cache.cols, rows, width).t(),
            MatRef::new(dy.data(), rows, c_out),
            1.0,
            MatMut::new(self.kernel.grad.data_mut(), width, c_out),
        );
        add_col_sums(self.bias.grad.data_mut(), dy.data(), c_out);
        let mut dcols = vec![0.0; rows * width];
        gemm(
            1.0,
            MatRef::new(dy.data(), rows, c_out),
            MatRef::new(self.kernel.value.data(), width, c_out).t(),
            0.0,
            MatMut::new(&mut dcols, rows, width),
        );
        let mut dx = vec![0.0; n * t * c_in];
        for b in 0..n {
            for to in 0..cache.out_len {
                let row = &dcols[(b * cache.out_len + to) * width..][..width];
                for kk in 0..k {
                    let src = (to * self.stride + kk) as isize - self.padding as isize;
                    if src < 0 || src as usize >= t {
                        continue;
                    }
                    let dst = &mut dx[(b * t + src as usize) * c_in..][..c_in];
                    for (d, v) in dst.iter_mut().zip(&row[kk * c_in..(kk + 1) * c_in]) {
                        *d += v;
                    }
                }
            }
        }
        Ok(Tensor::from_parts(cache.input_shape, dx))
    }

    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.kernel, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.kernel, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_fn(&[2, 5, 3], |i| i as f64 * 0.5 - 3.0);
        let kernel = Tensor::from_fn(&[1, 3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        let y = conv1d_forward(&x, &kernel, &Tensor::zeros(&[3]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_convolution() {
        let x = Tensor::new(vec![1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let kernel = Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap();
        let y = conv1d_forward(&x, &kernel, &Tensor::zeros(&[1]), 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1]);
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn output_length_formula() {
        assert_eq!(conv_output_len(64, 5, 2, 0), Some(30));
        let x = Tensor::zeros(&[1, 64, 2]);
        let y = conv1d_forward(&x, &Tensor::zeros(&[5, 2, 4]), &Tensor::zeros(&[4]), 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 30, 4]);
        // "same" padding with stride 2 halves (rounding up)
        assert_eq!(conv_output_len(32, 5, 2, 2), Some(16));
    }

    #[test]
    fn kernel_longer_than_sequence_errors() {
        let x = Tensor::zeros(&[1, 4, 1]);
        let err =
            conv1d_forward(&x, &Tensor::zeros(&[5, 1, 1]), &Tensor::zeros(&[1]), 1, 0).unwrap_err();
        assert!(matches!(err, TensorError::InvalidArgument { .. }), "{err}");
    }
}
