//! ConvLSTM cell: gates are convolutions over the channel-concatenation of
//! input and hidden state.
//!
//! With gate order [i | f | o | g] in the fused kernel:
//! `i = σ(W_i ∗ [x,h] + b_i)`, `f = σ(W_f ∗ [x,h] + b_f)`,
//! `o = σ(W_o ∗ [x,h] + b_o)`, `g = tanh(W_g ∗ [x,h] + b_g)`,
//! `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.

use crate::error::Result;
use crate::graph::{Graph, NodeId};

/// Graph node ids of one cell's state.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

/// One ConvLSTM step. `kernel` is the fused gate kernel
/// [4·hidden, in+hidden, k, k]; `bias` is [4·hidden].
pub fn conv_lstm_cell(
    graph: &mut Graph,
    x: NodeId,
    state: LstmState,
    kernel: NodeId,
    bias: NodeId,
    hidden: usize,
) -> Result<LstmState> {
    let xh = graph.concat_channels(x, state.h)?;
    let gates = graph.conv2d(xh, kernel, Some(bias), 1)?;
    let i_pre = graph.slice_channels(gates, 0, hidden)?;
    let f_pre = graph.slice_channels(gates, hidden, 2 * hidden)?;
    let o_pre = graph.slice_channels(gates, 2 * hidden, 3 * hidden)?;
    let g_pre = graph.slice_channels(gates, 3 * hidden, 4 * hidden)?;
    let i = graph.sigmoid(i_pre);
    let f = graph.sigmoid(f_pre);
    let o = graph.sigmoid(o_pre);
    let g = graph.tanh(g_pre);
    let fc = graph.mul(f, state.c)?;
    let ig = graph.mul(i, g)?;
    let c_next = graph.add(fc, ig)?;
    let c_act = graph.tanh(c_next);
    let h_next = graph.mul(o, c_act)?;
    Ok(LstmState {
        h: h_next,
        c: c_next,
    })
}
