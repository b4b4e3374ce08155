use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::ModelGraph;
use crate::loss::{cross_entropy_difference, softmax_cross_entropy};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked scalars of |a - n| / max(1e-8, |a| + |n|)
    pub max_rel_error: f64,
    pub checked: usize,
    pub total_params: usize,
    /// Name of the parameter holding the worst scalar.
    pub worst: Option<String>,
    /// (analytic, numeric) gradient of the worst scalar.
    pub worst_values: Option<(f64, f64)>,
}

/// Compares backprop gradients of the mean cross-entropy loss against
/// central differences `(L(p + h) - L(p - h)) / 2h` on up to `max_samples`
/// randomly chosen scalars.
pub fn gradient_check(
    graph: &mut ModelGraph,
    x: &Tensor,
    labels: &[usize],
    h: f64,
    max_samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let total = graph.count_params();
    if total == 0 || max_samples == 0 {
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            checked: 0,
            total_params: total,
            worst: None,
            worst_values: None,
        });
    }
    graph.zero_grads();
    let logits = graph.forward(x)?;
    let (_, dlogits) = softmax_cross_entropy(&logits, labels)?;
    graph.backward(&dlogits)?;

    let sizes: Vec<usize> = graph.parameters().iter().map(|p| p.numel()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, total, max_samples.min(total)).into_vec();
    picks.sort_unstable();

    let mut max_err = 0.0;
    let mut worst = None;
    let mut worst_values = None;
    for flat in &picks {
        let (pi, ei) = locate(&sizes, *flat);
        let analytic = graph.parameters()[pi].grad.data()[ei];
        let original = graph.parameters()[pi].value.data()[ei];
        let logits_at = |graph: &mut ModelGraph, v: f64| -> Result<Tensor> {
            graph.parameters_mut()[pi].value.data_mut()[ei] = v;
            graph.forward(x)
        };
        let plus = logits_at(graph, original + h)?;
        let minus = logits_at(graph, original - h)?;
        graph.parameters_mut()[pi].value.data_mut()[ei] = original;
        // Same central difference, but the loss gap is computed from the
        // logits directly so the rounding of two O(1) losses does not swamp
        // gradients near the 1e-8 floor.
        let numeric = cross_entropy_difference(&plus, &minus, labels)? / (2.0 * h);
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        if worst.is_none() || err > max_err {
            max_err = err;
            worst = Some(graph.parameters()[pi].name.clone());
            worst_values = Some((analytic, numeric));
        }
    }
    graph.zero_grads();
    Ok(GradCheckReport {
        max_rel_error: max_err,
        checked: picks.len(),
        total_params: total,
        worst,
        worst_values,
    })
}

fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (i, &s) in sizes.iter().enumerate() {
        if flat < s {
            return (i, flat);
        }
        flat -= s;
    }
    unreachable!("flat index beyond parameter count")
}
