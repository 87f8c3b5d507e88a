//! The recurrent grid estimator: strided conv encoder, two-layer ConvLSTM
//! core, per-resolution recurrent skip connections and two upscaling heads
//! (occupancy with a sigmoid output, velocity linear, denormalized by the
//! velocity factor). Both heads consume the same skip states.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dogm_core::grid::{GridSpec, PredictionGrid};

use crate::adam::Param;
use crate::convlstm::{conv_lstm_cell, LstmState};
use crate::error::{NnError, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderStage {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Strided conv stages; the last stage's channel count is the latent
    /// width fed to the core ConvLSTM.
    pub encoder: Vec<EncoderStage>,
    pub lstm_layers: usize,
    pub lstm_kernel: usize,
    /// Decoder widths per upscaling step (one fewer than encoder stages'
    /// count is invalid: one entry per decoder level above the final head).
    pub head_channels: Vec<usize>,
    pub dropout_rate: f32,
    /// Sequence length used in training.
    pub n_in: usize,
    /// Velocity normalization factor (m/s per unit of head output).
    pub velocity_norm: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 2,
            encoder: vec![
                EncoderStage {
                    channels: 16,
                    stride: 2,
                },
                EncoderStage {
                    channels: 32,
                    stride: 2,
                },
                EncoderStage {
                    channels: 64,
                    stride: 2,
                },
            ],
            lstm_layers: 2,
            lstm_kernel: 3,
            head_channels: vec![32, 16],
            dropout_rate: 0.2,
            n_in: 10,
            velocity_norm: 15.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.encoder.is_empty() {
            return Err(NnError::InvalidConfig(
                "need input channels and at least one encoder stage".into(),
            ));
        }
        if self.lstm_layers == 0 || self.lstm_kernel % 2 == 0 {
            return Err(NnError::InvalidConfig(
                "lstm_layers ≥ 1 and odd lstm_kernel required".into(),
            ));
        }
        if self.head_channels.len() != self.encoder.len() - 1 {
            return Err(NnError::InvalidConfig(format!(
                "head_channels must have one entry per decoder level ({} stages → {} levels)",
                self.encoder.len(),
                self.encoder.len() - 1
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::InvalidConfig("dropout_rate must be in [0, 1)".into()));
        }
        if self.n_in == 0 || self.velocity_norm <= 0.0 {
            return Err(NnError::InvalidConfig(
                "n_in ≥ 1 and positive velocity_norm required".into(),
            ));
        }
        Ok(())
    }

    pub fn latent_channels(&self) -> usize {
        self.encoder.last().unwrap().channels
    }

    /// Output spatial size equals input size iff every stride divides the
    /// running extent evenly (checked against a concrete input size).
    pub fn check_input_size(&self, cells: usize) -> Result<()> {
        let mut size = cells;
        for stage in &self.encoder {
            if size % stage.stride != 0 {
                return Err(NnError::InvalidConfig(format!(
                    "stride {} does not divide extent {size}",
                    stage.stride
                )));
            }
            size /= stage.stride;
        }
        Ok(())
    }
}

/// Parameters plus the architecture they belong to.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Param>,
}

fn conv_param(name: &str, oc: usize, ic: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Param> {
    let fan_in = (ic * k * k) as f32;
    let fan_out = (oc * k * k) as f32;
    let bound = (6.0 / (fan_in + fan_out)).sqrt();
    vec![
        Param {
            name: format!("{name}.w"),
            shape: vec![oc, ic, k, k],
            data: Tensor::uniform(vec![oc, ic, k, k], bound, rng).data().to_vec(),
        },
        Param {
            name: format!("{name}.b"),
            shape: vec![oc],
            data: vec![0.0; oc],
        },
    ]
}

/// Transposed-conv parameters: kernel [CI, CO, k, k], bias [CO].
fn tconv_param(name: &str, ci: usize, co: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Param> {
    let fan_in = (ci * k * k) as f32;
    let fan_out = (co * k * k) as f32;
    let bound = (6.0 / (fan_in + fan_out)).sqrt();
    vec![
        Param {
            name: format!("{name}.w"),
            shape: vec![ci, co, k, k],
            data: Tensor::uniform(vec![ci, co, k, k], bound, rng).data().to_vec(),
        },
        Param {
            name: format!("{name}.b"),
            shape: vec![co],
            data: vec![0.0; co],
        },
    ]
}

/// Fused-gate ConvLSTM parameters with the forget-gate bias raised to 1.
fn lstm_param(name: &str, hidden: usize, input: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Param> {
    let ic = input + hidden;
    let oc = 4 * hidden;
    let fan_in = (ic * k * k) as f32;
    let fan_out = (oc * k * k) as f32;
    let bound = (6.0 / (fan_in + fan_out)).sqrt();
    let mut bias = vec![0.0f32; oc];
    for b in bias.iter_mut().take(2 * hidden).skip(hidden) {
        *b = 1.0;
    }
    vec![
        Param {
            name: format!("{name}.w"),
            shape: vec![oc, ic, k, k],
            data: Tensor::uniform(vec![oc, ic, k, k], bound, rng).data().to_vec(),
        },
        Param {
            name: format!("{name}.b"),
            shape: vec![oc],
            data: bias,
        },
    ]
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.lstm_kernel;
        let mut params = Vec::new();
        // Encoder stages.
        let mut in_ch = config.input_channels;
        for (i, stage) in config.encoder.iter().enumerate() {
            params.extend(conv_param(&format!("enc.{i}"), stage.channels, in_ch, 3, &mut rng));
            in_ch = stage.channels;
        }
        // Skip ConvLSTMs (one per encoder stage except the last).
        for (i, stage) in config.encoder[..config.encoder.len() - 1].iter().enumerate() {
            params.extend(lstm_param(
                &format!("skip.{i}"),
                stage.channels,
                stage.channels,
                k,
                &mut rng,
            ));
        }
        // Core ConvLSTM stack at the latent resolution.
        let latent = config.latent_channels();
        for l in 0..config.lstm_layers {
            params.extend(lstm_param(&format!("core.{l}"), latent, latent, k, &mut rng));
        }
        // Two upscaling heads. Level j upsamples and then concatenates the
        // skip state of encoder stage (n-2-j).
        for head in ["occ", "vel"] {
            let mut ch = latent;
            for (j, width) in config.head_channels.iter().enumerate() {
                params.extend(tconv_param(&format!("{head}.up{j}"), ch, *width, 3, &mut rng));
                let skip_idx = config.encoder.len() - 2 - j;
                ch = width + config.encoder[skip_idx].channels;
            }
            let out_ch = if head == "occ" { 1 } else { 2 };
            params.extend(tconv_param(&format!("{head}.out"), ch, out_ch, 3, &mut rng));
        }
        Ok(Model { config, params })
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }
}

/// Parameter node ids after leafing a model into a graph.
pub struct BoundModel {
    ids: Vec<NodeId>,
}

impl BoundModel {
    pub fn bind(graph: &mut Graph, model: &Model, trainable: bool) -> Result<Self> {
        let ids = model
            .params
            .iter()
            .map(|p| {
                Ok(graph.leaf(
                    Tensor::new(p.shape.clone(), p.data.clone())?,
                    trainable,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundModel { ids })
    }

    pub fn id(&self, model: &Model, name: &str) -> Result<NodeId> {
        model
            .param_index(name)
            .map(|i| self.ids[i])
            .ok_or_else(|| NnError::InvalidConfig(format!("unknown parameter {name}")))
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Recurrent state carried across time steps.
pub struct SequenceState {
    skips: Vec<LstmState>,
    core: Vec<LstmState>,
}

/// Final-step network outputs as graph nodes.
pub struct SequenceOutput {
    /// [1, H, W] occupancy probability (post-sigmoid).
    pub p_occ: NodeId,
    /// [2, H, W] velocity in normalized units (before denormalization).
    pub v_norm: NodeId,
}

/// Drives the unrolled network over a sequence. Holds graph, bound params
/// and the evolving recurrent state.
pub struct Forward<'m> {
    pub model: &'m Model,
    pub graph: Graph,
    pub bound: BoundModel,
    state: Option<SequenceState>,
    train: bool,
    dropout_seed: u64,
    step: usize,
    spatial: Option<(usize, usize)>,
}

impl<'m> Forward<'m> {
    pub fn new(model: &'m Model, train: bool, dropout_seed: u64) -> Result<Self> {
        let mut graph = Graph::new();
        let bound = BoundModel::bind(&mut graph, model, train)?;
        Ok(Forward {
            model,
            graph,
            bound,
            state: None,
            train,
            dropout_seed,
            step: 0,
            spatial: None,
        })
    }

    fn zero_state(&mut self, h: usize, w: usize) -> Result<SequenceState> {
        let cfg = &self.model.config;
        let mut size = (h, w);
        let mut skips = Vec::new();
        for stage in &cfg.encoder[..cfg.encoder.len() - 1] {
            size = (size.0 / stage.stride, size.1 / stage.stride);
            let shape = vec![stage.channels, size.0, size.1];
            skips.push(LstmState {
                h: self.graph.leaf(Tensor::zeros(shape.clone()), false),
                c: self.graph.leaf(Tensor::zeros(shape), false),
            });
        }
        let last = cfg.encoder.last().unwrap();
        size = (size.0 / last.stride, size.1 / last.stride);
        let latent = cfg.latent_channels();
        let core = (0..cfg.lstm_layers)
            .map(|_| {
                let shape = vec![latent, size.0, size.1];
                LstmState {
                    h: self.graph.leaf(Tensor::zeros(shape.clone()), false),
                    c: self.graph.leaf(Tensor::zeros(shape), false),
                }
            })
            .collect();
        Ok(SequenceState { skips, core })
    }

    fn dropout_then(&mut self, x: NodeId, tag: usize) -> Result<NodeId> {
        let seed = self
            .dropout_seed
            .wrapping_mul(0x9E3779B97F4A7C15)
            .wrapping_add((self.step as u64) << 16)
            .wrapping_add(tag as u64);
        self.graph
            .dropout(x, self.model.config.dropout_rate, self.train, seed)
    }

    /// Feeds one measurement-grid tensor ([C, H, W]) into the recurrence.
    pub fn push_input(&mut self, input: Tensor) -> Result<()> {
        let (c, h, w) = input.chw()?;
        let cfg = &self.model.config;
        if c != cfg.input_channels {
            return Err(NnError::shape(
                "forward_sequence",
                format!("expected {} input channels, got {c}", cfg.input_channels),
            ));
        }
        cfg.check_input_size(h)?;
        cfg.check_input_size(w)?;
        if let Some(sp) = self.spatial {
            if sp != (h, w) {
                return Err(NnError::shape(
                    "forward_sequence",
                    format!("inputs must share shape: {sp:?} vs {:?}", (h, w)),
                ));
            }
        }
        self.spatial = Some((h, w));
        if self.state.is_none() {
            self.state = Some(self.zero_state(h, w)?);
        }

        let mut x = self.graph.leaf(input, false);
        let model = self.model;
        let n_stages = model.config.encoder.len();
        let mut state = self.state.take().unwrap();

        for (i, stage) in model.config.encoder.iter().enumerate() {
            let w_id = self.bound.id(model, &format!("enc.{i}.w"))?;
            let b_id = self.bound.id(model, &format!("enc.{i}.b"))?;
            let conv = self.graph.conv2d(x, w_id, Some(b_id), stage.stride)?;
            x = self.graph.tanh(conv);
            if i < n_stages - 1 {
                // Recurrent skip at this resolution; dropout on the
                // non-recurrent input only.
                let xin = self.dropout_then(x, 100 + i)?;
                let k = self.bound.id(model, &format!("skip.{i}.w"))?;
                let b = self.bound.id(model, &format!("skip.{i}.b"))?;
                state.skips[i] = conv_lstm_cell(
                    &mut self.graph,
                    xin,
                    state.skips[i],
                    k,
                    b,
                    stage.channels,
                )?;
            }
        }

        let latent = model.config.latent_channels();
        let mut core_in = x;
        for l in 0..model.config.lstm_layers {
            let xin = self.dropout_then(core_in, 200 + l)?;
            let k = self.bound.id(model, &format!("core.{l}.w"))?;
            let b = self.bound.id(model, &format!("core.{l}.b"))?;
            state.core[l] = conv_lstm_cell(&mut self.graph, xin, state.core[l], k, b, latent)?;
            core_in = state.core[l].h;
        }

        self.state = Some(state);
        self.step += 1;
        Ok(())
    }

    /// Rebuilds the recurrence on a fresh graph, carrying the current state
    /// over as constant values. Keeps streaming inference memory bounded;
    /// gradients do not flow across the cut.
    pub fn detached(self) -> Result<Self> {
        let state_values = self.state.as_ref().map(|s| {
            let grab = |st: &LstmState| {
                (
                    self.graph.value(st.h).clone(),
                    self.graph.value(st.c).clone(),
                )
            };
            (
                s.skips.iter().map(grab).collect::<Vec<_>>(),
                s.core.iter().map(grab).collect::<Vec<_>>(),
            )
        });
        let mut fresh = Forward::new(self.model, self.train, self.dropout_seed)?;
        fresh.step = self.step;
        fresh.spatial = self.spatial;
        if let Some((skips, core)) = state_values {
            let mut leaf_state = |pairs: Vec<(Tensor, Tensor)>| {
                pairs
                    .into_iter()
                    .map(|(h, c)| LstmState {
                        h: fresh.graph.leaf(h, false),
                        c: fresh.graph.leaf(c, false),
                    })
                    .collect::<Vec<_>>()
            };
            let skips = leaf_state(skips);
            let core = leaf_state(core);
            fresh.state = Some(SequenceState { skips, core });
        }
        Ok(fresh)
    }

    /// Decodes the current recurrent state into the two output heads.
    pub fn decode(&mut self) -> Result<SequenceOutput> {
        if self.state.is_none() || self.step == 0 {
            return Err(NnError::EmptySequence);
        }
        let model = self.model;
        let cfg = &model.config;
        let state = self.state.as_ref().unwrap();
        let top = state.core.last().unwrap().h;
        let skip_hs: Vec<NodeId> = state.skips.iter().map(|s| s.h).collect();

        let mut heads = Vec::with_capacity(2);
        for head in ["occ", "vel"] {
            let mut x = top;
            for (j, width) in cfg.head_channels.iter().enumerate() {
                let stage_idx = cfg.encoder.len() - 1 - j;
                let stride = cfg.encoder[stage_idx].stride;
                let w_id = self.bound.id(model, &format!("{head}.up{j}.w"))?;
                let b_id = self.bound.id(model, &format!("{head}.up{j}.b"))?;
                let _ = width;
                let up = self
                    .graph
                    .transposed_conv2d(x, w_id, Some(b_id), stride)?;
                let act = self.graph.tanh(up);
                // Both heads share the same skip hidden states.
                let skip_idx = cfg.encoder.len() - 2 - j;
                x = self.graph.concat_channels(act, skip_hs[skip_idx])?;
            }
            let w_id = self.bound.id(model, &format!("{head}.out.w"))?;
            let b_id = self.bound.id(model, &format!("{head}.out.b"))?;
            let stride0 = cfg.encoder[0].stride;
            let out = self
                .graph
                .transposed_conv2d(x, w_id, Some(b_id), stride0)?;
            heads.push(out);
        }
        let p_occ = self.graph.sigmoid(heads[0]);
        Ok(SequenceOutput {
            p_occ,
            v_norm: heads[1],
        })
    }

    /// Extracts a denormalized prediction grid from decoded head nodes.
    pub fn prediction(&self, out: &SequenceOutput, spec: &GridSpec) -> Result<PredictionGrid> {
        let p = self.graph.value(out.p_occ);
        let v = self.graph.value(out.v_norm);
        let (_, h, w) = p.chw()?;
        if h != spec.cells_per_side() || w != spec.cells_per_side() {
            return Err(NnError::shape(
                "prediction",
                format!("output {h}×{w} vs grid {}", spec.cells_per_side()),
            ));
        }
        let n = h * w;
        let norm = self.model.config.velocity_norm;
        let vel_east: Vec<f32> = v.data()[..n].iter().map(|x| x * norm).collect();
        let vel_north: Vec<f32> = v.data()[n..].iter().map(|x| x * norm).collect();
        Ok(PredictionGrid::new(
            *spec,
            p.data().to_vec(),
            vel_east,
            vel_north,
        )?)
    }
}

/// Runs a full sequence and returns the final-step prediction (denormalized,
/// no deployment mask).
pub fn forward_sequence(
    model: &Model,
    inputs: &[Tensor],
    spec: &GridSpec,
    train: bool,
    dropout_seed: u64,
) -> Result<PredictionGrid> {
    if inputs.is_empty() {
        return Err(NnError::EmptySequence);
    }
    let mut fwd = Forward::new(model, train, dropout_seed)?;
    for input in inputs {
        fwd.push_input(input.clone())?;
    }
    let out = fwd.decode()?;
    fwd.prediction(&out, spec)
}
