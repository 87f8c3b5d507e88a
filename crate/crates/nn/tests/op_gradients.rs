//! Finite-difference gradient verification for every graph op, randomized
//! shapes, plus the unrolled ConvLSTM and adjointness checks.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dogm_nn::convlstm::{conv_lstm_cell, LstmState};
use dogm_nn::gradcheck::{max_relative_error, random_tensor};
use dogm_nn::graph::{Graph, NodeId};
use dogm_nn::tensor::Tensor;

const TOL: f64 = 1e-3;
const CASES: usize = 20;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weighted sum against a fixed random tensor so upstream gradients are
/// non-uniform.
fn weighted_sum(g: &mut Graph, x: NodeId, weights: &Tensor) -> dogm_nn::Result<NodeId> {
    let w = g.leaf(weights.clone(), false);
    let prod = g.mul(x, w)?;
    Ok(g.sum(prod))
}

#[test]
fn conv2d_gradients() {
    let mut r = rng(100);
    for case in 0..CASES {
        let ic: usize = r.gen_range(1..=3);
        let oc: usize = r.gen_range(1..=3);
        let k = [1usize, 3, 5][r.gen_range(0..3)];
        let stride: usize = r.gen_range(1..=3);
        let h: usize = r.gen_range(4..=8);
        let w: usize = r.gen_range(4..=8);
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let mix = random_tensor(vec![oc, oh, ow], 1.0, &mut r);
        let builder = move |g: &mut Graph, ids: &[NodeId]| {
            let y = g.conv2d(ids[0], ids[1], Some(ids[2]), stride)?;
            weighted_sum(g, y, &mix)
        };
        let x = random_tensor(vec![ic, h, w], 1.0, &mut r);
        let kk = random_tensor(vec![oc, ic, k, k], 0.7, &mut r);
        let b = random_tensor(vec![oc], 0.5, &mut r);
        let err = max_relative_error(&builder, &[x, kk, b]).unwrap();
        assert!(err < TOL, "conv2d case {case}: err {err}");
    }
}

#[test]
fn transposed_conv2d_gradients() {
    let mut r = rng(200);
    for case in 0..CASES {
        let ci: usize = r.gen_range(1..=3);
        let co: usize = r.gen_range(1..=3);
        let k = [1usize, 3][r.gen_range(0..2)];
        let stride: usize = r.gen_range(1..=3);
        let h: usize = r.gen_range(3..=6);
        let w: usize = r.gen_range(3..=6);
        let mix = random_tensor(vec![co, h * stride, w * stride], 1.0, &mut r);
        let builder = move |g: &mut Graph, ids: &[NodeId]| {
            let y = g.transposed_conv2d(ids[0], ids[1], Some(ids[2]), stride)?;
            weighted_sum(g, y, &mix)
        };
        let x = random_tensor(vec![ci, h, w], 1.0, &mut r);
        let kk = random_tensor(vec![ci, co, k, k], 0.7, &mut r);
        let b = random_tensor(vec![co], 0.5, &mut r);
        let err = max_relative_error(&builder, &[x, kk, b]).unwrap();
        assert!(err < TOL, "tconv case {case}: err {err}");
    }
}

#[test]
fn elementwise_gradients() {
    let mut r = rng(300);
    for case in 0..CASES {
        let n: usize = r.gen_range(2..=24);
        let mix = random_tensor(vec![n], 1.0, &mut r);
        let builder = move |g: &mut Graph, ids: &[NodeId]| {
            let a = g.add(ids[0], ids[1])?;
            let m = g.mul(a, ids[2])?;
            let s = g.sigmoid(m);
            let t = g.tanh(s);
            let sc = g.scale(t, -1.7);
            weighted_sum(g, sc, &mix)
        };
        let inputs = [
            random_tensor(vec![n], 1.2, &mut r),
            random_tensor(vec![n], 1.2, &mut r),
            random_tensor(vec![n], 1.2, &mut r),
        ];
        let err = max_relative_error(&builder, &inputs).unwrap();
        assert!(err < TOL, "elementwise case {case}: err {err}");
    }
}

#[test]
fn concat_slice_gradients() {
    let mut r = rng(400);
    for case in 0..CASES {
        let ca: usize = r.gen_range(1..=3);
        let cb: usize = r.gen_range(1..=3);
        let h: usize = r.gen_range(2..=5);
        let w: usize = r.gen_range(2..=5);
        let keep: usize = r.gen_range(1..=ca + cb);
        let mix = random_tensor(vec![keep, h, w], 1.0, &mut r);
        let builder = move |g: &mut Graph, ids: &[NodeId]| {
            let cat = g.concat_channels(ids[0], ids[1])?;
            let sl = g.slice_channels(cat, 0, keep)?;
            weighted_sum(g, sl, &mix)
        };
        let a = random_tensor(vec![ca, h, w], 1.0, &mut r);
        let b = random_tensor(vec![cb, h, w], 1.0, &mut r);
        let err = max_relative_error(&builder, &[a, b]).unwrap();
        assert!(err < TOL, "concat/slice case {case}: err {err}");
    }
}

#[test]
fn dropout_gradients_fixed_mask() {
    let mut r = rng(500);
    for case in 0..CASES {
        let n: usize = r.gen_range(4..=32);
        let seed = r.gen::<u64>();
        let mix = random_tensor(vec![n], 1.0, &mut r);
        let builder = move |g: &mut Graph, ids: &[NodeId]| {
            let d = g.dropout(ids[0], 0.3, true, seed)?;
            weighted_sum(g, d, &mix)
        };
        let x = random_tensor(vec![n], 1.0, &mut r);
        let err = max_relative_error(&builder, &[x]).unwrap();
        assert!(err < TOL, "dropout case {case}: err {err}");
    }
}

#[test]
fn loss_op_gradients() {
    let mut r = rng(600);
    for case in 0..CASES {
        let h: usize = r.gen_range(2..=5);
        let w: usize = r.gen_range(2..=5);
        let n = h * w;
        let pred = random_tensor(vec![1, h, w], 0.4, &mut r);
        // Keep |error| away from the Huber kink at δ = 0.02.
        let delta = 0.02f32;
        let target_data: Vec<f32> = pred
            .data()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let off = if i % 2 == 0 { 0.15 } else { -0.3 };
                p + off
            })
            .collect();
        let target = Tensor::new(vec![1, h, w], target_data).unwrap();
        let weight_data: Vec<f32> = (0..n).map(|i| [0.0f32, 5.0, 20.0][i % 3]).collect();
        let weight = Tensor::new(vec![1, h, w], weight_data).unwrap();
        let t2 = target.clone();
        let w2 = weight.clone();
        let huber_builder = move |g: &mut Graph, ids: &[NodeId]| {
            g.weighted_huber_mean(ids[0], &t2, &w2, delta)
        };
        let err = max_relative_error(&huber_builder, &[pred.clone()]).unwrap();
        assert!(err < TOL, "huber case {case}: err {err}");

        let t3 = target.clone();
        let w3 = weight.clone();
        let sq_builder =
            move |g: &mut Graph, ids: &[NodeId]| g.weighted_sq_mean(ids[0], &t3, &w3);
        let err = max_relative_error(&sq_builder, &[pred]).unwrap();
        assert!(err < TOL, "sq case {case}: err {err}");
    }
}

#[test]
fn conv_lstm_three_step_unroll_gradients() {
    let mut r = rng(700);
    for case in 0..6 {
        let hidden: usize = r.gen_range(1..=2);
        let in_ch: usize = r.gen_range(1..=2);
        let h = 4;
        let w = 4;
        let mix = random_tensor(vec![hidden, h, w], 1.0, &mut r);
        let builder = move |g: &mut Graph, ids: &[NodeId]| {
            let mut state = LstmState {
                h: g.leaf(Tensor::zeros(vec![hidden, h, w]), false),
                c: g.leaf(Tensor::zeros(vec![hidden, h, w]), false),
            };
            for step in 0..3 {
                state = conv_lstm_cell(g, ids[step], state, ids[3], ids[4], hidden)?;
            }
            weighted_sum(g, state.h, &mix)
        };
        let inputs = [
            random_tensor(vec![in_ch, h, w], 0.8, &mut r),
            random_tensor(vec![in_ch, h, w], 0.8, &mut r),
            random_tensor(vec![in_ch, h, w], 0.8, &mut r),
            random_tensor(vec![4 * hidden, in_ch + hidden, 3, 3], 0.4, &mut r),
            random_tensor(vec![4 * hidden], 0.3, &mut r),
        ];
        let err = max_relative_error(&builder, &inputs).unwrap();
        assert!(err < TOL, "convlstm case {case}: err {err}");
    }
}

#[test]
fn conv_transposed_conv_adjointness() {
    // ⟨conv(x), y⟩ = ⟨x, tconv(y)⟩ over random shape/stride cases.
    let mut r = rng(800);
    for case in 0..50 {
        let ic: usize = r.gen_range(1..=4);
        let oc: usize = r.gen_range(1..=4);
        let k = [1usize, 3, 5][r.gen_range(0..3)];
        let stride: usize = r.gen_range(1..=3);
        let h: usize = r.gen_range(3..=9usize) * stride;
        let w: usize = r.gen_range(3..=9usize) * stride;
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);

        let x = random_tensor(vec![ic, h, w], 1.0, &mut r);
        let y = random_tensor(vec![oc, oh, ow], 1.0, &mut r);
        let kernel = random_tensor(vec![oc, ic, k, k], 0.8, &mut r);

        let mut g = Graph::new();
        let xn = g.leaf(x.clone(), false);
        let kn = g.leaf(kernel.clone(), false);
        let conv = g.conv2d(xn, kn, None, stride).unwrap();
        let lhs: f64 = g
            .value(conv)
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();

        let mut g2 = Graph::new();
        let yn = g2.leaf(y, false);
        let kn2 = g2.leaf(kernel, false);
        let up = g2.transposed_conv2d(yn, kn2, None, stride).unwrap();
        let rhs: f64 = g2
            .value(up)
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();

        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        assert!(
            (lhs - rhs).abs() / scale < 1e-4,
            "adjointness case {case}: {lhs} vs {rhs}"
        );
    }
}

#[test]
fn dropout_expectation_preserved() {
    // E[dropout(x)] == x over seeds, 1e-2 tolerance with 10⁴ samples.
    let n = 16;
    let x_data: Vec<f32> = (0..n).map(|i| 0.15 + 0.04 * i as f32).collect();
    let mut sums = vec![0.0f64; n];
    let trials = 10_000u64;
    for seed in 0..trials {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![n], x_data.clone()).unwrap(), false);
        let d = g.dropout(x, 0.2, true, seed).unwrap();
        for (s, v) in sums.iter_mut().zip(g.value(d).data()) {
            *s += *v as f64;
        }
    }
    for (s, x) in sums.iter().zip(&x_data) {
        let mean = s / trials as f64;
        assert!(
            (mean - *x as f64).abs() < 1e-2,
            "dropout expectation drifted: {mean} vs {x}"
        );
    }
}
