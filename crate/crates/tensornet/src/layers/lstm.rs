use rand::Rng;

use super::{sigmoid, Layer};
use crate::error::{shape_err, Result, TensorError};
use crate::gemm::{add_col_sums, gemm, MatMut, MatRef};
use crate::param::Parameter;
use crate::tensor::Tensor;

/// Single-layer LSTM over `[B, T, Din]`, zero initial state, returning every
/// hidden state `[B, T, H]`. Gate blocks are ordered input, forget, cell, output.
pub struct Lstm {
    hidden: usize,
    pub input_weight: Parameter,
    pub recurrent_weight: Parameter,
    pub bias: Parameter,
    cache: Option<LstmCache>,
}

struct LstmCache {
    x: Tensor,
    gates: Vec<f64>,
    cells: Vec<f64>,
    hiddens: Vec<f64>,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            hidden,
            input_weight: Parameter::glorot(
                format!("{name}.input_weight"),
                &[input, 4 * hidden],
                input,
                4 * hidden,
                rng,
            ),
            recurrent_weight: Parameter::glorot(
                format!("{name}.recurrent_weight"),
                &[hidden, 4 * hidden],
                hidden,
                4 * hidden,
                rng,
            ),
            bias: Parameter::zeros(format!("{name}.bias"), &[4 * hidden]),
            cache: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_weight.value.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

impl Layer for Lstm {
    fn describe(&self) -> String {
        format!("lstm in={} hidden={}", self.input_dim(), self.hidden)
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [b, t, din] = *x.shape() else {
            return Err(shape_err(
                "lstm",
                format!("expected [B, T, Din], got {:?}", x.shape()),
            ));
        };
        if din != self.input_dim() {
            return Err(shape_err(
                "lstm",
                format!(
                    "input {:?} does not match input weight {:?}",
                    x.shape(),
                    self.input_weight.value.shape()
                ),
            ));
        }
        let h = self.hidden;
        let g4 = 4 * h;
        // input contribution for every step at once
        let mut pre = Vec::with_capacity(b * t * g4);
        for _ in 0..b * t {
            pre.extend_from_slice(self.bias.value.data());
        }
        gemm(
            1.0,
            MatRef::new(x.data(), b * t, din),
            MatRef::new(self.input_weight.value.data(), din, g4),
            1.0,
            MatMut::new(&mut pre, b * t, g4),
        );
        let mut gates = pre;
        let mut cells = vec![0.0; b * t * h];
        let mut hiddens = vec![0.0; b * t * h];
        for step in 0..t {
            if step > 0 {
                gemm(
                    1.0,
                    MatRef::strided(&hiddens, (step - 1) * h, b, h, t * h, 1),
                    MatRef::new(self.recurrent_weight.value.data(), h, g4),
                    1.0,
                    MatMut::strided(&mut gates, step * g4, b, g4, t * g4, 1),
                );
            }
            for bi in 0..b {
                let z = &mut gates[(bi * t + step) * g4..][..g4];
                for j in 0..h {
                    z[j] = sigmoid(z[j]);
                    z[h + j] = sigmoid(z[h + j]);
                    z[2 * h + j] = z[2 * h + j].tanh();
                    z[3 * h + j] = sigmoid(z[3 * h + j]);
                }
                let at = (bi * t + step) * h;
                for j in 0..h {
                    let c_prev = if step > 0 { cells[at - h + j] } else { 0.0 };
                    let c = z[h + j] * c_prev + z[j] * z[2 * h + j];
                    cells[at + j] = c;
                    hiddens[at + j] = z[3 * h + j] * c.tanh();
                }
            }
        }
        let y = Tensor::from_parts(vec![b, t, h], hiddens.clone());
        self.cache = Some(LstmCache {
            x: x.clone(),
            gates,
            cells,
            hiddens,
        });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let c = self
            .cache
            .take()
            .ok_or(TensorError::BackwardBeforeForward("lstm"))?;
        let [b, t, din] = c.x.shape()[..] else {
            unreachable!()
        };
        let h = self.hidden;
        let g4 = 4 * h;
        if dy.len() != b * t * h {
            return Err(shape_err("lstm backward", format!("dy {:?}", dy.shape())));
        }
        let mut dz = vec![0.0; b * t * g4];
        let mut dh_next = vec![0.0; b * h];
        let mut dc_next = vec![0.0; b * h];
        for step in (0..t).rev() {
            for bi in 0..b {
                let at = (bi * t + step) * h;
                let z = &c.gates[(bi * t + step) * g4..][..g4];
                let d = &mut dz[(bi * t + step) * g4..][..g4];
                for j in 0..h {
                    let (i, f, g, o) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
                    let cell = c.cells[at + j];
                    let c_prev = if step > 0 { c.cells[at - h + j] } else { 0.0 };
                    let tc = cell.tanh();
                    let dh = dy.data()[at + j] + dh_next[bi * h + j];
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[bi * h + j];
                    d[j] = dc * g * i * (1.0 - i);
                    d[h + j] = dc * c_prev * f * (1.0 - f);
                    d[2 * h + j] = dc * i * (1.0 - g * g);
                    d[3 * h + j] = dh * tc * o * (1.0 - o);
                    dc_next[bi * h + j] = dc * f;
                }
            }
            if step > 0 {
                gemm(
                    1.0,
                    MatRef::strided(&c.hiddens, (step - 1) * h, b, h, t * h, 1).t(),
                    MatRef::strided(&dz, step * g4, b, g4, t * g4, 1),
                    1.0,
                    MatMut::new(self.recurrent_weight.grad.data_mut(), h, g4),
                );
                gemm(
                    1.0,
                    MatRef::strided(&dz, step * g4, b, g4, t * g4, 1),
                    MatRef::new(self.recurrent_weight.value.data(), h, g4).t(),
                    0.0,
                    MatMut::new(&mut dh_next, b, h),
                );
            }
        }
        gemm(
            1.0,
            MatRef::new(c.x.data(), b * t, din).t(),
            MatRef::new(&dz, b * t, g4),
            1.0,
            MatMut::new(self.input_weight.grad.data_mut(), din, g4),
        );
        add_col_sums(self.bias.grad.data_mut(), &dz, g4);
        let mut dx = vec![0.0; b * t * din];
        gemm(
            1.0,
            MatRef::new(&dz, b * t, g4),
            MatRef::new(self.input_weight.value.data(), din, g4).t(),
            0.0,
            MatMut::new(&mut dx, b * t, din),
        );
        Ok(Tensor::from_parts(c.x.shape().to_vec(), dx))
    }

    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.input_weight, &self.recurrent_weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.input_weight,
            &mut self.recurrent_weight,
            &mut self.bias,
        ]
    }
}
