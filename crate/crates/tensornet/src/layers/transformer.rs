use rand::Rng;

use super::{Gelu, Layer, LayerNorm, Linear, SelfAttention};
use crate::error::Result;
use crate::param::Parameter;
use crate::tensor::Tensor;

/// Post-norm encoder block:
/// `a = LN(x + MHA(x))`, `y = LN(a + W2 gelu(W1 a))`.
pub struct TransformerBlock {
    attention: SelfAttention,
    norm1: LayerNorm,
    ff_in: Linear,
    ff_act: Gelu,
    ff_out: Linear,
    norm2: LayerNorm,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        embed: usize,
        heads: usize,
        ff_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attention: SelfAttention::new(&format!("{name}.attn"), embed, heads, true, rng)?,
            norm1: LayerNorm::new(&format!("{name}.norm1"), embed),
            ff_in: Linear::new(&format!("{name}.ff_in"), embed, ff_width, rng),
            ff_act: Gelu::new(),
            ff_out: Linear::new(&format!("{name}.ff_out"), ff_width, embed, rng),
            norm2: LayerNorm::new(&format!("{name}.norm2"), embed),
        })
    }
}

impl Layer for TransformerBlock {
    fn describe(&self) -> String {
        format!(
            "transformer_block embed={} heads={} ff={}",
            self.attention.embed(),
            self.attention.heads(),
            self.ff_in.out_dim()
        )
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let a = self.norm1.forward(&self.attention.forward(x)?)?;
        let f = self
            .ff_out
            .forward(&self.ff_act.forward(&self.ff_in.forward(&a)?)?)?;
        let mut sum = a;
        for (s, v) in sum.data_mut().iter_mut().zip(f.data()) {
            *s += v;
        }
        self.norm2.forward(&sum)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let dsum = self.norm2.backward(dy)?;
        let df = self
            .ff_in
            .backward(&self.ff_act.backward(&self.ff_out.backward(&dsum)?)?)?;
        let mut da = dsum;
        for (d, v) in da.data_mut().iter_mut().zip(df.data()) {
            *d += v;
        }
        self.attention.backward(&self.norm1.backward(&da)?)
    }

    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.attention.parameters();
        p.extend(self.norm1.parameters());
        p.extend(self.ff_in.parameters());
        p.extend(self.ff_out.parameters());
        p.extend(self.norm2.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.attention.parameters_mut();
        p.extend(self.norm1.parameters_mut());
        p.extend(self.ff_in.parameters_mut());
        p.extend(self.ff_out.parameters_mut());
        p.extend(self.norm2.parameters_mut());
        p
    }
}
