//! Training objective: weighted Huber occupancy loss, masked squared
//! velocity loss (in normalized units) and their weighted combination.
//!
//! Each loss exists twice: an f64 value function used for reporting and
//! unit checks, and a graph builder used for backpropagation. A consistency
//! test keeps the two within f32 tolerance of each other.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Huber transition point of the occupancy loss.
    pub delta: f64,
    /// Occupancy cell-weight scale.
    pub lambda_p: f64,
    /// Velocity weight for static-mask cells.
    pub lambda_static: f64,
    /// Velocity weight for dynamic-mask cells.
    pub lambda_dynamic: f64,
    /// Occupancy term weight in the total loss.
    pub alpha_p: f64,
    /// Velocity term weight in the total loss.
    pub alpha_v: f64,
    /// Velocity normalization factor (m/s per unit).
    pub velocity_norm: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            delta: 0.02,
            lambda_p: 4.0,
            lambda_static: 5.0,
            lambda_dynamic: 20.0,
            alpha_p: 10.0,
            alpha_v: 0.5,
            velocity_norm: 15.0,
        }
    }
}

/// Per-cell occupancy weight: `y·λ_p` above 0.5, `(1−y)·λ_p` below,
/// exactly 1 at y = 0.5. Labels near certainty weigh the most.
pub fn occupancy_weight(label: f64, lambda_p: f64) -> f64 {
    if label > 0.5 {
        label * lambda_p
    } else if label < 0.5 {
        (1.0 - label) * lambda_p
    } else {
        1.0
    }
}

pub fn occupancy_weights(labels: &[f32], lambda_p: f64) -> Vec<f32> {
    labels
        .iter()
        .map(|y| occupancy_weight(*y as f64, lambda_p) as f32)
        .collect()
}

fn huber(e: f64, delta: f64) -> f64 {
    if e.abs() <= delta {
        0.5 * e * e
    } else {
        delta * e.abs() - 0.5 * delta * delta
    }
}

/// Occupancy loss value: mean over cells of `λ_PO(y)·huber_δ(y − ŷ)`.
pub fn occupancy_loss(pred: &[f64], label: &[f64], cfg: &LossConfig) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(NnError::shape(
            "occupancy_loss",
            format!("{} vs {}", pred.len(), label.len()),
        ));
    }
    let mut acc = 0.0f64;
    for (p, y) in pred.iter().zip(label) {
        let w = occupancy_weight(*y, cfg.lambda_p);
        acc += w * huber(y - p, cfg.delta);
    }
    Ok(acc / pred.len() as f64)
}

/// Velocity loss value in normalized units: mean over cells of
/// `0.5·λ_v·(y − ŷ)²`; cells with zero mask weight contribute nothing.
pub fn velocity_loss(pred: &[f64], label: &[f64], weight_mask: &[f64]) -> Result<f64> {
    if pred.len() != label.len() || pred.len() != weight_mask.len() {
        return Err(NnError::shape(
            "velocity_loss",
            format!("{} / {} / {}", pred.len(), label.len(), weight_mask.len()),
        ));
    }
    let mut acc = 0.0f64;
    for ((p, y), w) in pred.iter().zip(label).zip(weight_mask) {
        let e = y - p;
        acc += 0.5 * w * e * e;
    }
    Ok(acc / pred.len() as f64)
}

/// `L = α_p·L_PO + α_v·(L_vE + L_vN)`.
pub fn total_loss(l_po: f64, l_ve: f64, l_vn: f64, cfg: &LossConfig) -> f64 {
    cfg.alpha_p * l_po + cfg.alpha_v * (l_ve + l_vn)
}

/// Graph node for the occupancy loss. `pred` is the [1, H, W] sigmoid head.
pub fn occupancy_loss_node(
    graph: &mut Graph,
    pred: NodeId,
    label: &Tensor,
    cfg: &LossConfig,
) -> Result<NodeId> {
    let weights = Tensor::new(
        label.shape().to_vec(),
        occupancy_weights(label.data(), cfg.lambda_p),
    )?;
    graph.weighted_huber_mean(pred, label, &weights, cfg.delta as f32)
}

/// Graph node for one velocity component's loss in normalized units.
/// `pred` is a [1, H, W] slice of the velocity head; `label_norm` must
/// already be divided by the normalization factor.
pub fn velocity_loss_node(
    graph: &mut Graph,
    pred: NodeId,
    label_norm: &Tensor,
    weight_mask: &Tensor,
) -> Result<NodeId> {
    graph.weighted_sq_mean(pred, label_norm, weight_mask)
}

/// Combined scalar loss node.
pub fn total_loss_node(
    graph: &mut Graph,
    l_po: NodeId,
    l_ve: NodeId,
    l_vn: NodeId,
    cfg: &LossConfig,
) -> Result<NodeId> {
    let po = graph.scale(l_po, cfg.alpha_p as f32);
    let v_sum = graph.add(l_ve, l_vn)?;
    let v = graph.scale(v_sum, cfg.alpha_v as f32);
    graph.add(po, v)
}
