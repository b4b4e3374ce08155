use crate::error::{shape_err, Result};
use crate::layers::Layer;
use crate::param::Parameter;
use crate::tensor::Tensor;

/// A static chain of layers mapping `[B, W, D]` windows to `[B, C]` logits.
pub struct ModelGraph {
    name: String,
    layers: Vec<Box<dyn Layer>>,
    window: usize,
    dims: usize,
    classes: usize,
}

impl std::fmt::Debug for ModelGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelGraph")
            .field("name", &self.name)
            .field("input", &(self.window, self.dims))
            .field("classes", &self.classes)
            .field("layers", &self.layer_descriptions())
            .field("params", &self.count_params())
            .finish()
    }
}

impl ModelGraph {
    pub fn new(name: impl Into<String>, window: usize, dims: usize, classes: usize) -> Self {
        Self {
            name: name.into(),
            layers: Vec::new(),
            window,
            dims,
            classes,
        }
    }

    pub fn push<L: Layer + 'static>(&mut self, layer: L) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_descriptions(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.describe()).collect()
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        match x.shape() {
            [_, w, d] if *w == self.window && *d == self.dims => {}
            s => {
                return Err(shape_err(
                    "model forward",
                    format!(
                        "input {s:?} does not match [B, {}, {}]",
                        self.window, self.dims
                    ),
                ))
            }
        }
        let batch = x.shape()[0];
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h)?;
        }
        if h.shape() != [batch, self.classes] {
            return Err(shape_err(
                "model forward",
                format!(
                    "graph produced {:?}, expected [{batch}, {}]",
                    h.shape(),
                    self.classes
                ),
            ));
        }
        Ok(h)
    }

    /// Forward pass that also returns each layer's wall time.
    pub fn forward_timed(&mut self, x: &Tensor) -> Result<(Tensor, Vec<(String, std::time::Duration)>)> {
        let mut times = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            let start = std::time::Instant::now();
            h = layer.forward(&h)?;
            times.push((layer.describe(), start.elapsed()));
        }
        Ok((h, times))
    }

    pub fn backward(&mut self, dlogits: &Tensor) -> Result<()> {
        let mut g = dlogits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.parameters_mut())
            .collect()
    }

    /// Exact number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.parameters().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor]) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != values.len() {
            return Err(shape_err(
                "restore",
                format!("{} tensors for {} parameters", values.len(), params.len()),
            ));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(shape_err(
                    "restore",
                    format!("{}: {:?} vs {:?}", p.name, p.value.shape(), v.shape()),
                ));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}
