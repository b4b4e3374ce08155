use super::Layer;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Adds the fixed sinusoidal position table to `[B, T, E]`.
#[derive(Default)]
pub struct PositionalEncoding {
    cached: Option<(usize, usize, Vec<f64>)>,
}

impl PositionalEncoding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn table(t: usize, e: usize) -> Vec<f64> {
        let mut pe = vec![0.0; t * e];
        for pos in 0..t {
            for i in 0..e {
                let pair = (i / 2) as f64 * 2.0;
                let angle = pos as f64 / 10000f64.powf(pair / e as f64);
                pe[pos * e + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
        pe
    }
}

impl Layer for PositionalEncoding {
    fn describe(&self) -> String {
        "positional_encoding sinusoidal".into()
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [_, t, e] = *x.shape() else {
            return Err(shape_err(
                "positional_encoding",
                format!("expected [B, T, E], got {:?}", x.shape()),
            ));
        };
        let pe = match &self.cached {
            Some((ct, ce, pe)) if (*ct, *ce) == (t, e) => pe,
            _ => &self.cached.insert((t, e, Self::table(t, e))).2,
        };
        let mut y = x.clone();
        for chunk in y.data_mut().chunks_exact_mut(t * e) {
            for (v, p) in chunk.iter_mut().zip(pe) {
                *v += p;
            }
        }
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        Ok(dy.clone())
    }
}
