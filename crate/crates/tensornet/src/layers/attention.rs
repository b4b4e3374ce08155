use rand::Rng;

use super::Layer;
use crate::error::{arg_err, shape_err, Result, TensorError};
use crate::gemm::{add_col_sums, gemm, MatMut, MatRef};
use crate::layers::linear::linear_forward;
use crate::param::Parameter;
use crate::tensor::Tensor;

/// Multi-head scaled dot-product self-attention over the second-to-last
/// axis of `[.., N, E]`; every leading index is an independent group.
///
/// `y = concat_h(softmax(Q_h K_h^T / sqrt(E/heads)) V_h) W_o + b_o`, plus
/// `x` when built with a residual connection. The key projection carries no
/// bias: a per-query constant shift of the scores is invisible to softmax.
pub struct SelfAttention {
    heads: usize,
    residual: bool,
    pub query: (Parameter, Parameter),
    pub key: Parameter,
    pub value: (Parameter, Parameter),
    pub output: (Parameter, Parameter),
    cache: Option<AttnCache>,
}

struct AttnCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    attn: Vec<f64>,
    o: Tensor,
}

fn projection<R: Rng + ?Sized>(name: &str, e: usize, rng: &mut R) -> (Parameter, Parameter) {
    (
        Parameter::glorot(format!("{name}.weight"), &[e, e], e, e, rng),
        Parameter::zeros(format!("{name}.bias"), &[e]),
    )
}

impl SelfAttention {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        embed: usize,
        heads: usize,
        residual: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || embed % heads != 0 {
            return Err(arg_err(
                "self_attention",
                format!("embedding width {embed} is not divisible by {heads} heads"),
            ));
        }
        Ok(Self {
            heads,
            residual,
            query: projection(&format!("{name}.query"), embed, rng),
            key: Parameter::glorot(
                format!("{name}.key.weight"),
                &[embed, embed],
                embed,
                embed,
                rng,
            ),
            value: projection(&format!("{name}.value"), embed, rng),
            output: projection(&format!("{name}.output"), embed, rng),
            cache: None,
        })
    }

    pub fn embed(&self) -> usize {
        self.query.0.value.shape()[0]
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Attention weights of the last forward pass, laid out `[group, head, N, N]`.
    pub fn last_attention(&self) -> Option<&[f64]> {
        self.cache.as_ref().map(|c| c.attn.as_slice())
    }

    fn split(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        let e = self.embed();
        if s.len() < 2 || s[s.len() - 1] != e {
            return Err(shape_err(
                "self_attention",
                format!("input {s:?} does not end in embedding width {e}"),
            ));
        }
        let n = s[s.len() - 2];
        Ok((x.len() / (n * e), n, e))
    }
}

impl Layer for SelfAttention {
    fn describe(&self) -> String {
        format!(
            "self_attention embed={} heads={} residual={}",
            self.embed(),
            self.heads,
            self.residual
        )
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (groups, n, e) = self.split(x)?;
        let dh = e / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = linear_forward(x, &self.query.0.value, &self.query.1.value)?;
        let k = linear_forward(x, &self.key.value, &Tensor::zeros(&[e]))?;
        let v = linear_forward(x, &self.value.0.value, &self.value.1.value)?;
        let mut attn = vec![0.0; groups * self.heads * n * n];
        let mut o = vec![0.0; x.len()];
        for g in 0..groups {
            for h in 0..self.heads {
                let base = g * n * e + h * dh;
                let a = &mut attn[(g * self.heads + h) * n * n..][..n * n];
                gemm(
                    scale,
                    MatRef::strided(q.data(), base, n, dh, e, 1),
                    MatRef::strided(k.data(), base, n, dh, e, 1).t(),
                    0.0,
                    MatMut::new(a, n, n),
                );
                crate::vexp::softmax_rows(a, n);
                gemm(
                    1.0,
                    MatRef::new(a, n, n),
                    MatRef::strided(v.data(), base, n, dh, e, 1),
                    0.0,
                    MatMut::strided(&mut o, base, n, dh, e, 1),
                );
            }
        }
        let o = Tensor::from_parts(x.shape().to_vec(), o);
        let mut y = linear_forward(&o, &self.output.0.value, &self.output.1.value)?;
        if self.residual {
            for (yv, xv) in y.data_mut().iter_mut().zip(x.data()) {
                *yv += xv;
            }
        }
        self.cache = Some(AttnCache {
            x: x.clone(),
            q,
            k,
            v,
            attn,
            o,
        });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let c = self
            .cache
            .take()
            .ok_or(TensorError::BackwardBeforeForward("self_attention"))?;
        if dy.len() != c.x.len() {
            return Err(shape_err(
                "self_attention backward",
                format!("dy {:?}", dy.shape()),
            ));
        }
        let (groups, n, e) = self.split(&c.x)?;
        let rows = groups * n;
        let dh = e / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // output projection
        gemm(
            1.0,
            MatRef::new(c.o.data(), rows, e).t(),
            MatRef::new(dy.data(), rows, e),
            1.0,
            MatMut::new(self.output.0.grad.data_mut(), e, e),
        );
        add_col_sums(self.output.1.grad.data_mut(), dy.data(), e);
        let mut d_o = vec![0.0; rows * e];
        gemm(
            1.0,
            MatRef::new(dy.data(), rows, e),
            MatRef::new(self.output.0.value.data(), e, e).t(),
            0.0,
            MatMut::new(&mut d_o, rows, e),
        );

        let mut dq = vec![0.0; rows * e];
        let mut dk = vec![0.0; rows * e];
        let mut dv = vec![0.0; rows * e];
        let mut da = vec![0.0; n * n];
        for g in 0..groups {
            for h in 0..self.heads {
                let base = g * n * e + h * dh;
                let a = &c.attn[(g * self.heads + h) * n * n..][..n * n];
                gemm(
                    1.0,
                    MatRef::strided(&d_o, base, n, dh, e, 1),
                    MatRef::strided(c.v.data(), base, n, dh, e, 1).t(),
                    0.0,
                    MatMut::new(&mut da, n, n),
                );
                gemm(
                    1.0,
                    MatRef::new(a, n, n).t(),
                    MatRef::strided(&d_o, base, n, dh, e, 1),
                    0.0,
                    MatMut::strided(&mut dv, base, n, dh, e, 1),
                );
                // softmax Jacobian, folded with the score scale
                for (ds_row, a_row) in da.chunks_exact_mut(n).zip(a.chunks_exact(n)) {
                    let dot: f64 = ds_row.iter().zip(a_row).map(|(d, p)| d * p).sum();
                    for (d, p) in ds_row.iter_mut().zip(a_row) {
                        *d = p * (*d - dot) * scale;
                    }
                }
                gemm(
                    1.0,
                    MatRef::new(&da, n, n),
                    MatRef::strided(c.k.data(), base, n, dh, e, 1),
                    0.0,
                    MatMut::strided(&mut dq, base, n, dh, e, 1),
                );
                gemm(
                    1.0,
                    MatRef::new(&da, n, n).t(),
                    MatRef::strided(c.q.data(), base, n, dh, e, 1),
                    0.0,
                    MatMut::strided(&mut dk, base, n, dh, e, 1),
                );
            }
        }

        let mut dx = if self.residual {
            dy.data().to_vec()
        } else {
            vec![0.0; rows * e]
        };
        for (weight, bias, grad) in [
            (&mut self.query.0, Some(&mut self.query.1), &dq),
            (&mut self.key, None, &dk),
            (&mut self.value.0, Some(&mut self.value.1), &dv),
        ] {
            gemm(
                1.0,
                MatRef::new(c.x.data(), rows, e).t(),
                MatRef::new(grad, rows, e),
                1.0,
                MatMut::new(weight.grad.data_mut(), e, e),
            );
            if let Some(bias) = bias {
                add_col_sums(bias.grad.data_mut(), grad, e);
            }
            gemm(
                1.0,
                MatRef::new(grad, rows, e),
                MatRef::new(weight.value.data(), e, e).t(),
                1.0,
                MatMut::new(&mut dx, rows, e),
            );
        }
        Ok(Tensor::from_parts(c.x.shape().to_vec(), dx))
    }

    fn parameters(&self) -> Vec<&Parameter> {
        vec![
            &self.query.0,
            &self.query.1,
            &self.key,
            &self.value.0,
            &self.value.1,
            &self.output.0,
            &self.output.1,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.query.0,
            &mut self.query.1,
            &mut self.key,
            &mut self.value.0,
            &mut self.value.1,
            &mut self.output.0,
            &mut self.output.1,
        ]
    }
}
