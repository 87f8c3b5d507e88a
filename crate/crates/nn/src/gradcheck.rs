//! Central finite-difference verification of reverse-mode gradients.
//!
//! The oracle only ever calls the forward pass: for each tracked input
//! element, the loss is re-evaluated at ±h and the quotient compared with
//! the analytic gradient. Comparison is a tensor-level relative max-norm,
//! so vanishing components do not blow up the ratio.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Builds a scalar loss from freshly-leafed copies of `inputs`.
pub trait LossBuilder {
    fn build(&self, graph: &mut Graph, inputs: &[NodeId]) -> Result<NodeId>;
}

impl<F> LossBuilder for F
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    fn build(&self, graph: &mut Graph, inputs: &[NodeId]) -> Result<NodeId> {
        self(graph, inputs)
    }
}

fn eval_loss<B: LossBuilder>(builder: &B, inputs: &[Tensor]) -> Result<f64> {
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| graph.leaf(t.clone(), false))
        .collect();
    let loss = builder.build(&mut graph, &ids)?;
    Ok(graph.value(loss).item() as f64)
}

/// Worst relative error across all inputs' gradients.
pub fn max_relative_error<B: LossBuilder>(builder: &B, inputs: &[Tensor]) -> Result<f64> {
    // Analytic pass.
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| graph.leaf(t.clone(), true))
        .collect();
    let loss = builder.build(&mut graph, &ids)?;
    let grads = graph.backward(loss)?;

    let mut worst = 0.0f64;
    for (i, tensor) in inputs.iter().enumerate() {
        let analytic = grads
            .get(ids[i])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; tensor.numel()]);
        let mut numeric = vec![0.0f64; tensor.numel()];
        for j in 0..tensor.numel() {
            let x = tensor.data()[j];
            // Step balances central-difference truncation against the f32
            // forward path's rounding noise.
            let h = 5e-3 * x.abs().max(1.0);
            let mut plus = tensor.data().to_vec();
            plus[j] = x + h;
            let mut minus = tensor.data().to_vec();
            minus[j] = x - h;
            let mut in_plus = inputs.to_vec();
            in_plus[i] = Tensor::new(tensor.shape().to_vec(), plus)?;
            let mut in_minus = inputs.to_vec();
            in_minus[i] = Tensor::new(tensor.shape().to_vec(), minus)?;
            let lp = eval_loss(builder, &in_plus)?;
            let lm = eval_loss(builder, &in_minus)?;
            numeric[j] = (lp - lm) / (2.0 * h as f64);
        }
        let scale = analytic
            .iter()
            .map(|v| v.abs() as f64)
            .chain(numeric.iter().map(|v| v.abs()))
            .fold(0.0f64, f64::max)
            .max(1e-6);
        let err = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (*a as f64 - n).abs())
            .fold(0.0f64, f64::max)
            / scale;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Random test tensor with entries in ±`amp`.
pub fn random_tensor(shape: Vec<usize>, amp: f32, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, amp, rng)
}
