//! Stacked LSTM encoder–decoder denoiser.
//!
//! The encoder consumes the noisy window together with a `t / T` channel;
//! its per-timestep hidden states (the latent sequence) feed the decoder
//! stack, and a small linear head maps each decoder state to the output
//! channels. SiLU is applied to every hidden-state sequence passed between
//! stacked layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{NodeId, Tape, Tensor};
use crate::error::{ensure, Result};

/// What the denoiser output means.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    /// Predicts the injected noise.
    #[default]
    Epsilon,
    /// Predicts the clean window.
    X0,
}

/// Layer widths and sequence geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub channels: usize,
    pub window: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub diffusion_steps: usize,
}

impl NetConfig {
    /// Predator-prey widths: encoder (2,8)(8,16)(16,32), decoder (32,16)(16,8)(8,2).
    pub fn predator_prey(window: usize, diffusion_steps: usize) -> Self {
        NetConfig {
            channels: 2,
            window,
            encoder_hidden: vec![8, 16, 32],
            decoder_hidden: vec![16, 8, 2],
            diffusion_steps,
        }
    }

    pub fn latent(&self) -> usize {
        *self.encoder_hidden.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.channels > 0, "channels must be positive");
        ensure!(self.window > 0, "window length must be positive");
        ensure!(
            self.diffusion_steps >= 1,
            "diffusion_steps must be positive"
        );
        ensure!(
            !self.encoder_hidden.is_empty() && !self.decoder_hidden.is_empty(),
            "encoder and decoder need at least one layer each"
        );
        ensure!(
            self.encoder_hidden
                .iter()
                .chain(&self.decoder_hidden)
                .all(|&h| h > 0),
            "hidden sizes must be positive: encoder {:?}, decoder {:?}",
            self.encoder_hidden,
            self.decoder_hidden
        );
        ensure!(
            *self.decoder_hidden.last().unwrap() == self.channels,
            "decoder output width {} must equal channel count {}",
            self.decoder_hidden.last().unwrap(),
            self.channels
        );
        Ok(())
    }

    /// `(input, hidden)` for each layer, encoder first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut input = self.channels + 1;
        for &h in self.encoder_hidden.iter().chain(&self.decoder_hidden) {
            dims.push((input, h));
            input = h;
        }
        dims
    }
}

/// Weights for one LSTM layer with gates ordered (input, forget, cell, output).
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerParams {
    pub input: usize,
    pub hidden: usize,
    /// `(input + hidden) × 4·hidden`
    pub weight: Tensor,
    /// `4·hidden`
    pub bias: Tensor,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayerParams {
            input,
            hidden,
            weight: Tensor::zeros(vec![input + hidden, 4 * hidden]),
            bias: Tensor::zeros(vec![4 * hidden]),
        }
    }

    fn uniform(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut layer = Self::zeros(input, hidden);
        for v in layer
            .weight
            .data_mut()
            .iter_mut()
            .chain(layer.bias.data_mut())
        {
            *v = rng.gen_range(-bound..=bound);
        }
        layer
    }
}

/// Records one LSTM step. `x: B × input`, `h, c: B × hidden`.
pub fn lstm_cell_on_tape(
    tape: &mut Tape,
    x: NodeId,
    h: NodeId,
    c: NodeId,
    weight: NodeId,
    bias: NodeId,
    hidden: usize,
) -> Result<(NodeId, NodeId)> {
    let xh = tape.concat(&[x, h])?;
    let z = tape.linear(xh, weight, Some(bias))?;
    let zi = tape.slice(z, 0, hidden)?;
    let zf = tape.slice(z, hidden, hidden)?;
    let zg = tape.slice(z, 2 * hidden, hidden)?;
    let zo = tape.slice(z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Single-sample LSTM step on plain vectors.
pub fn lstm_cell(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    params: &LstmLayerParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(
        x.len() == params.input && h.len() == params.hidden && c.len() == params.hidden,
        "lstm_cell: got x {}, h {}, c {} for layer ({}, {})",
        x.len(),
        h.len(),
        c.len(),
        params.input,
        params.hidden
    );
    let mut tape = Tape::new();
    let xn = tape.constant(Tensor::vector(x.to_vec()));
    let hn = tape.constant(Tensor::vector(h.to_vec()));
    let cn = tape.constant(Tensor::vector(c.to_vec()));
    let w = tape.constant(params.weight.clone());
    let b = tape.constant(params.bias.clone());
    let (h2, c2) = lstm_cell_on_tape(&mut tape, xn, hn, cn, w, b, params.hidden)?;
    Ok((
        tape.value(h2).data().to_vec(),
        tape.value(c2).data().to_vec(),
    ))
}

/// Runs stacked LSTM layers over a sequence of `B × input` nodes.
///
/// Each entry of `layers` is `(weight, bias, hidden)`. SiLU is applied to
/// the output sequence of every layer except the last, and to the last one
/// too when `silu_last` is set.
pub fn lstm_stack_on_tape(
    tape: &mut Tape,
    layers: &[(NodeId, NodeId, usize)],
    mut seq: Vec<NodeId>,
    batch: usize,
    silu_last: bool,
) -> Result<Vec<NodeId>> {
    for (li, &(w, b, hd)) in layers.iter().enumerate() {
        let activate = li + 1 < layers.len() || silu_last;
        let mut h = tape.constant(Tensor::zeros(vec![batch, hd]));
        let mut c = tape.constant(Tensor::zeros(vec![batch, hd]));
        let mut out = Vec::with_capacity(seq.len());
        for &x in &seq {
            let (h2, c2) = lstm_cell_on_tape(tape, x, h, c, w, b, hd)?;
            h = h2;
            c = c2;
            out.push(if activate { tape.silu(h2) } else { h2 });
        }
        seq = out;
    }
    Ok(seq)
}

/// The diffusion denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub config: NetConfig,
    pub mode: Parameterization,
    pub layers: Vec<LstmLayerParams>,
    /// `channels × channels`
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

/// Parameter leaves of a model recorded on a tape, in declared order.
#[derive(Clone, Debug)]
pub struct ParamNodes(pub Vec<NodeId>);

impl DenoiserModel {
    /// Uniform initialization in `±1/√hidden` per layer (`±1/√channels` for the head).
    pub fn init(config: NetConfig, mode: Parameterization, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, h)| LstmLayerParams::uniform(i, h, &mut rng))
            .collect();
        let c = config.channels;
        let bound = 1.0 / (c as f64).sqrt();
        let head_weight = Tensor::new(
            vec![c, c],
            (0..c * c).map(|_| rng.gen_range(-bound..=bound)).collect(),
        )?;
        let head_bias = Tensor::vector((0..c).map(|_| rng.gen_range(-bound..=bound)).collect());
        Ok(DenoiserModel {
            config,
            mode,
            layers,
            head_weight,
            head_bias,
        })
    }

    /// All parameter tensors in declared layer order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        ensure!(
            flat.len() == self.param_count(),
            "expected {} parameters, got {}",
            self.param_count(),
            flat.len()
        );
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Records every parameter as a tape leaf. `trainable` controls whether
    /// gradients flow to them.
    pub fn record_params(&self, tape: &mut Tape, trainable: bool) -> ParamNodes {
        ParamNodes(
            self.tensors()
                .into_iter()
                .map(|t| tape.leaf(t.clone(), trainable))
                .collect(),
        )
    }

    /// Records the forward pass for a batch.
    ///
    /// `x_t` holds `B` windows, each `window × channels` row-major; `steps`
    /// holds the diffusion step of each window. The returned node is
    /// `B × (window·channels)` in the same layout.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        params: &ParamNodes,
        x_t: &[f64],
        steps: &[usize],
    ) -> Result<NodeId> {
        let cfg = &self.config;
        let (len, ch) = (cfg.window, cfg.channels);
        let batch = steps.len();
        ensure!(batch > 0, "denoise: empty batch");
        ensure!(
            x_t.len() == batch * len * ch,
            "denoise: expected {} values for {} windows of {}×{}, got {}",
            batch * len * ch,
            batch,
            len,
            ch,
            x_t.len()
        );
        let total = cfg.diffusion_steps;
        for &t in steps {
            ensure!(
                (1..=total).contains(&t),
                "denoise: diffusion step {} outside 1..={}",
                t,
                total
            );
        }

        let seq: Vec<NodeId> = (0..len)
            .map(|i| {
                let mut data = Vec::with_capacity(batch * (ch + 1));
                for (b, &t) in steps.iter().enumerate() {
                    let base = (b * len + i) * ch;
                    data.extend_from_slice(&x_t[base..base + ch]);
                    data.push(t as f64 / total as f64);
                }
                tape.constant(Tensor::from_parts(vec![batch, ch + 1], data))
            })
            .collect();

        let n_layers = self.layers.len();
        let layers: Vec<(NodeId, NodeId, usize)> = self
            .layers
            .iter()
            .enumerate()
            .map(|(li, l)| (params.0[2 * li], params.0[2 * li + 1], l.hidden))
            .collect();
        let seq = lstm_stack_on_tape(tape, &layers, seq, batch, false)?;

        let hw = params.0[2 * n_layers];
        let hb = params.0[2 * n_layers + 1];
        let mut outs = Vec::with_capacity(len);
        for &h in &seq {
            outs.push(tape.linear(h, hw, Some(hb))?);
        }
        tape.concat(&outs)
    }

    /// Batched inference. Returns `B × window × channels` values.
    pub fn denoise_batch(&self, x_t: &[f64], steps: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = self.record_params(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, &params, x_t, steps)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Prediction for one `window × channels` input at step `t`.
    pub fn denoise(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        let (l, c) = (self.config.window, self.config.channels);
        ensure!(
            x_t.shape() == [l, c],
            "denoise: expected window shape [{}, {}], got {:?}",
            l,
            c,
            x_t.shape()
        );
        let out = self.denoise_batch(x_t.data(), &[t])?;
        Tensor::new(vec![l, c], out)
    }
}
