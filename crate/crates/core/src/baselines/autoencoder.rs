use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{NodeId, Tape, Tensor};
use crate::error::{ensure, Error, Result};
use crate::par::{self, Execution};
use crate::seqnet::{lstm_stack_on_tape, NetConfig};
use crate::train::{LossNodes, Objective};

/// `0.5·Σ(μ² + e^{lv} − 1 − lv)`, the KL divergence of `N(μ, e^{lv})` from `N(0, 1)`.
pub fn gaussian_kl(mean: &[f64], log_var: &[f64]) -> Result<f64> {
    ensure!(
        mean.len() == log_var.len(),
        "mean and log-variance lengths differ"
    );
    if log_var.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("VAE encoder", "non-finite log-variance"));
    }
    Ok(0.5
        * mean
            .iter()
            .zip(log_var)
            .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
            .sum::<f64>())
}

/// LSTM autoencoder with a window-level bottleneck, optionally variational.
///
/// The encoder stack reads the window; its last state is the latent. The
/// decoder stack receives the latent at every timestep and a linear head
/// maps its states to the channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqAutoencoder {
    pub channels: usize,
    pub window: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub variational: bool,
    /// Encoder layers, decoder layers (weight, bias each), then the output
    /// head, then the mean and log-variance heads when variational.
    pub params: Vec<Tensor>,
    pub trained: bool,
}

struct Recorded {
    recon: NodeId,
    mean: Option<NodeId>,
    log_var: Option<NodeId>,
}

impl SeqAutoencoder {
    pub fn init(config: &NetConfig, variational: bool, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize, fan: usize| {
            let bound = 1.0 / (fan as f64).sqrt();
            let shape = if rows == 1 {
                vec![cols]
            } else {
                vec![rows, cols]
            };
            Tensor::new(
                shape,
                (0..rows * cols)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect(),
            )
            .expect("shape matches data")
        };
        let mut params = Vec::new();
        let latent = config.latent();
        let mut input = config.channels;
        for &h in &config.encoder_hidden {
            params.push(uniform(input + h, 4 * h, h));
            params.push(uniform(1, 4 * h, h));
            input = h;
        }
        let mut input = latent;
        for &h in &config.decoder_hidden {
            params.push(uniform(input + h, 4 * h, h));
            params.push(uniform(1, 4 * h, h));
            input = h;
        }
        let c = config.channels;
        params.push(uniform(c, c, c));
        params.push(uniform(1, c, c));
        if variational {
            for _ in 0..2 {
                params.push(uniform(latent, latent, latent));
                params.push(uniform(1, latent, latent));
            }
        }
        Ok(SeqAutoencoder {
            channels: c,
            window: config.window,
            encoder_hidden: config.encoder_hidden.clone(),
            decoder_hidden: config.decoder_hidden.clone(),
            variational,
            params,
            trained: false,
        })
    }

    pub fn latent(&self) -> usize {
        *self.encoder_hidden.last().expect("validated non-empty")
    }

    fn window_size(&self) -> usize {
        self.window * self.channels
    }

    /// Records the forward pass. `noise` holds `B × latent` reparameterization
    /// draws for the variational model.
    fn record(
        &self,
        tape: &mut Tape,
        p: &[NodeId],
        windows: &[Vec<f64>],
        noise: Option<&[f64]>,
    ) -> Result<Recorded> {
        let n = self.window_size();
        let batch = windows.len();
        ensure!(batch > 0, "autoencoder: empty batch");
        for w in windows {
            ensure!(
                w.len() == n,
                "autoencoder: window has {} values, expected {}",
                w.len(),
                n
            );
        }
        let c = self.channels;
        let seq: Vec<NodeId> = (0..self.window)
            .map(|i| {
                let data = windows
                    .iter()
                    .flat_map(|w| w[i * c..(i + 1) * c].iter().copied())
                    .collect();
                tape.constant(Tensor::from_parts(vec![batch, c], data))
            })
            .collect();
        let n_enc = self.encoder_hidden.len();
        let n_dec = self.decoder_hidden.len();
        let layer = |k: usize, h: usize| (p[2 * k], p[2 * k + 1], h);
        let enc: Vec<_> = self
            .encoder_hidden
            .iter()
            .enumerate()
            .map(|(k, &h)| layer(k, h))
            .collect();
        let dec: Vec<_> = self
            .decoder_hidden
            .iter()
            .enumerate()
            .map(|(k, &h)| layer(n_enc + k, h))
            .collect();
        let encoded = lstm_stack_on_tape(tape, &enc, seq, batch, true)?;
        let last = *encoded.last().expect("window is non-empty");

        let head = 2 * (n_enc + n_dec);
        let (latent, mean, log_var) = if self.variational {
            let mean = tape.linear(last, p[head + 2], Some(p[head + 3]))?;
            let log_var = tape.linear(last, p[head + 4], Some(p[head + 5]))?;
            let z = match noise {
                None => mean,
                Some(eps) => {
                    ensure!(
                        eps.len() == batch * self.latent(),
                        "reparameterization noise has wrong length"
                    );
                    let half = tape.scale(log_var, 0.5);
                    let sd = tape.exp(half)?;
                    let eps =
                        tape.constant(Tensor::from_parts(vec![batch, self.latent()], eps.to_vec()));
                    let spread = tape.mul(sd, eps)?;
                    tape.add(mean, spread)?
                }
            };
            (z, Some(mean), Some(log_var))
        } else {
            (last, None, None)
        };
        let repeated = vec![latent; self.window];
        let decoded = lstm_stack_on_tape(tape, &dec, repeated, batch, false)?;
        let mut outs = Vec::with_capacity(self.window);
        for &h in &decoded {
            outs.push(tape.linear(h, p[head], Some(p[head + 1]))?);
        }
        Ok(Recorded {
            recon: tape.concat(&outs)?,
            mean,
            log_var,
        })
    }

    fn check_trained(&self) -> Result<()> {
        ensure!(self.trained, "baseline model has not been trained");
        Ok(())
    }

    fn constants(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect()
    }

    /// Reconstructions of `windows` (posterior mean latent for the VAE).
    pub fn reconstruct(&self, windows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let p = self.constants(&mut tape);
        let r = self.record(&mut tape, &p, windows, None)?;
        Ok(tape
            .value(r.recon)
            .data()
            .chunks_exact(self.window_size())
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Mean squared reconstruction error per window.
    pub fn ae_score(&self, windows: &[Vec<f64>], exec: Execution) -> Result<Vec<f64>> {
        self.check_trained()?;
        let chunks: Vec<&[Vec<f64>]> = windows.chunks(64).collect();
        let per = par::map(exec, &chunks, |chunk| -> Result<Vec<f64>> {
            let rec = self.reconstruct(chunk)?;
            Ok(chunk
                .iter()
                .zip(&rec)
                .map(|(w, r)| {
                    w.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / w.len() as f64
                })
                .collect())
        });
        flatten(per)
    }

    /// Negative ELBO per window: unit-variance Gaussian reconstruction term
    /// plus the analytic KL. One reparameterized draw, shared by all windows.
    pub fn vae_score(&self, windows: &[Vec<f64>], seed: u64, exec: Execution) -> Result<Vec<f64>> {
        self.check_trained()?;
        ensure!(self.variational, "vae_score needs a variational model");
        let k = self.latent();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let chunks: Vec<&[Vec<f64>]> = windows.chunks(64).collect();
        let per = par::map(exec, &chunks, |chunk| -> Result<Vec<f64>> {
            let mut tape = Tape::new();
            let p = self.constants(&mut tape);
            let noise = eps.repeat(chunk.len());
            let r = self.record(&mut tape, &p, chunk, Some(&noise))?;
            let n = self.window_size();
            let rec = tape.value(r.recon).data();
            let mean = tape.value(r.mean.expect("variational")).data();
            let lv = tape.value(r.log_var.expect("variational")).data();
            chunk
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let sq: f64 = w
                        .iter()
                        .zip(&rec[i * n..(i + 1) * n])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let recon = 0.5 * sq + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
                    Ok(recon + gaussian_kl(&mean[i * k..(i + 1) * k], &lv[i * k..(i + 1) * k])?)
                })
                .collect()
        });
        flatten(per)
    }
}

fn flatten(parts: Vec<Result<Vec<f64>>>) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

impl Objective for SeqAutoencoder {
    type Draw = Vec<f64>;

    fn part_names(&self) -> Vec<&'static str> {
        vec!["recon", "kl"]
    }

    fn flat_params(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.params.iter().map(|t| t.len()).sum();
        ensure!(
            flat.len() == total,
            "expected {} parameters, got {}",
            total,
            flat.len()
        );
        let mut off = 0;
        for t in &mut self.params {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        self.trained = true;
        Ok(())
    }

    fn param_tensors(&self) -> Vec<Tensor> {
        self.params.clone()
    }

    fn draw(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let k = if self.variational { self.latent() } else { 0 };
        (0..batch)
            .map(|_| (0..k).map(|_| StandardNormal.sample(rng)).collect())
            .collect()
    }

    fn record(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        windows: &[Vec<f64>],
        draws: &[Vec<f64>],
    ) -> Result<LossNodes> {
        let b = windows.len() as f64;
        let noise: Vec<f64> = draws.concat();
        let r = SeqAutoencoder::record(
            self,
            tape,
            params,
            windows,
            self.variational.then_some(&noise[..]),
        )?;
        let target = tape.constant(Tensor::from_parts(
            vec![windows.len(), self.window_size()],
            windows.iter().flat_map(|w| w.iter().map(|v| -v)).collect(),
        ));
        let diff = tape.add(r.recon, target)?;
        let sq = tape.sum_sq(diff);
        if !self.variational {
            let recon = tape.scale(sq, 1.0 / (b * self.window_size() as f64));
            let kl = tape.constant(Tensor::scalar(0.0));
            return Ok(LossNodes {
                total: recon,
                parts: vec![recon, kl],
            });
        }
        let recon = tape.scale(sq, 0.5 / b);
        let (mean, log_var) = (
            r.mean.expect("variational"),
            r.log_var.expect("variational"),
        );
        let m2 = tape.sum_sq(mean);
        let e = tape.exp(log_var)?;
        let diff = tape.sub(e, log_var)?;
        let s = tape.sum(diff);
        let kl_sum = tape.add(m2, s)?;
        let offset = tape.constant(Tensor::scalar(-((windows.len() * self.latent()) as f64)));
        let kl_all = tape.add(kl_sum, offset)?;
        let kl = tape.scale(kl_all, 0.5 / b);
        let total = tape.add(recon, kl)?;
        Ok(LossNodes {
            total,
            parts: vec![recon, kl],
        })
    }
}
