//! Loss assembly, exact gradients and the Adam training loop.
//!
//! Batches are made of whole surfaces. Each surface is encoded once, gets one
//! reparameterised sample, and is decoded at all of its lattice points; its
//! loss is the mean squared vol error plus `β·KL`, and the batch loss is the
//! mean over surfaces. Optional arbitrage penalties are evaluated on each
//! sample's decoded lattice and differentiated back through the decoder.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{kl_terms, pointwise_inputs, Architecture, DecoderKind, VaeModel, LOG_VARIANCE_BOUND};
use crate::arbitrage::{PenaltyLattice, DEFAULT_TOLERANCE};
use crate::error::{Result, VolError};
use crate::nn::{AdamState, MlpGrads};
use crate::rng::{indexed_substream, substream};
use crate::surfaces::VolSurface;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub calendar: f64,
    pub butterfly: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub seed: u64,
    pub architecture: Architecture,
    pub arbitrage_penalties: Option<PenaltyWeights>,
    /// Maturities × deltas of the penalty lattice used with pointwise decoders.
    pub penalty_lattice: (usize, usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            beta: 1e-6,
            seed: 0,
            architecture: Architecture::default(),
            arbitrage_penalties: None,
            penalty_lattice: (12, 9),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(VolError::Domain(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(VolError::Domain("learning rate must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(VolError::Domain("beta must be finite and >= 0".into()));
        }
        if let Some(p) = self.arbitrage_penalties {
            if !(p.calendar >= 0.0 && p.butterfly >= 0.0) {
                return Err(VolError::Domain("penalty weights must be >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub l_cal: f64,
    pub l_but: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub l_cal: f64,
    pub l_but: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VaeModel,
    pub trace: Vec<EpochStats>,
}

/// Batch loss and its gradient for fixed standard-normal `noise` (`n × d`).
pub fn batch_loss(
    model: &VaeModel,
    batch: &[&[f64]],
    noise: &[f64],
    penalties: Option<(&PenaltyLattice, PenaltyWeights)>,
) -> Result<(LossBreakdown, ModelGrads)> {
    let n = batch.len();
    let d = model.latent_dim();
    let m = model.grid().len();
    if n == 0 || noise.len() != n * d {
        return Err(VolError::Shape(format!(
            "batch of {n} surfaces needs {} noise values, got {}",
            n * d,
            noise.len()
        )));
    }
    let mut x = Vec::with_capacity(n * m);
    for s in batch {
        if s.len() != m {
            return Err(VolError::Shape(format!(
                "surface has {} vols, grid has {m}",
                s.len()
            )));
        }
        model.standardise_into(s, &mut x);
    }
    let enc_tape = model.encoder().forward_tape(&x, n)?;
    let enc_out = enc_tape.output();

    let mut z = vec![0.0; n * d];
    let mut kl = 0.0;
    for s in 0..n {
        let row = &enc_out[s * 2 * d..(s + 1) * 2 * d];
        let mean = &row[..d];
        let lv: Vec<f64> = row[d..]
            .iter()
            .map(|v| v.clamp(-LOG_VARIANCE_BOUND, LOG_VARIANCE_BOUND))
            .collect();
        for k in 0..d {
            z[s * d + k] = mean[k] + (0.5 * lv[k]).exp() * noise[s * d + k];
        }
        kl += kl_terms(mean, &lv);
    }
    kl /= n as f64;

    let coords = model.grid().coordinates();
    let inv_n = 1.0 / n as f64;
    let mut dec_grads = MlpGrads::zeros_like(model.decoder());
    let mut dz = vec![0.0; n * d];
    let mut re = 0.0;
    let (mut l_cal, mut l_but) = (0.0, 0.0);

    let (dec_inputs, rows) = match model.decoder_kind() {
        DecoderKind::Grid => (z.clone(), n),
        DecoderKind::Pointwise => {
            let mut inputs = Vec::with_capacity(n * m * (d + 2));
            for s in 0..n {
                inputs.extend(pointwise_inputs(&z[s * d..(s + 1) * d], &coords)?);
            }
            (inputs, n * m)
        }
    };
    let dec_tape = model.decoder().forward_tape(&dec_inputs, rows)?;
    let y = dec_tape.output();
    let mut cot = vec![0.0; n * m];
    for s in 0..n {
        for k in 0..m {
            let r = y[s * m + k] - batch[s][k];
            re += r * r;
            cot[s * m + k] = 2.0 * r * inv_n / m as f64;
        }
    }
    re /= (n * m) as f64;

    if let Some((lattice, w)) = penalties {
        match model.decoder_kind() {
            DecoderKind::Grid => {
                for s in 0..n {
                    let p = lattice.evaluate(
                        &y[s * m..(s + 1) * m],
                        w.calendar,
                        w.butterfly,
                        DEFAULT_TOLERANCE,
                    )?;
                    l_cal += p.l_cal * inv_n;
                    l_but += p.l_but * inv_n;
                    for (c, g) in cot[s * m..(s + 1) * m].iter_mut().zip(&p.gradient) {
                        *c += g * inv_n;
                    }
                }
            }
            DecoderKind::Pointwise => {
                let lc = lattice.coordinates();
                let l = lc.len();
                let mut inputs = Vec::with_capacity(n * l * (d + 2));
                for s in 0..n {
                    inputs.extend(pointwise_inputs(&z[s * d..(s + 1) * d], &lc)?);
                }
                let tape = model.decoder().forward_tape(&inputs, n * l)?;
                let sig = tape.output();
                let mut pcot = vec![0.0; n * l];
                for s in 0..n {
                    let p = lattice.evaluate(
                        &sig[s * l..(s + 1) * l],
                        w.calendar,
                        w.butterfly,
                        DEFAULT_TOLERANCE,
                    )?;
                    l_cal += p.l_cal * inv_n;
                    l_but += p.l_but * inv_n;
                    for (c, g) in pcot[s * l..(s + 1) * l].iter_mut().zip(&p.gradient) {
                        *c = g * inv_n;
                    }
                }
                let dx = model
                    .decoder()
                    .backward_tape(&tape, &pcot, &mut dec_grads)?;
                accumulate_latent(&dx, d, l, &mut dz);
            }
        }
    }

    let dx = model
        .decoder()
        .backward_tape(&dec_tape, &cot, &mut dec_grads)?;
    match model.decoder_kind() {
        DecoderKind::Grid => {
            for (a, b) in dz.iter_mut().zip(&dx) {
                *a += b;
            }
        }
        DecoderKind::Pointwise => accumulate_latent(&dx, d, m, &mut dz),
    }

    let beta = model.beta();
    let mut enc_cot = vec![0.0; n * 2 * d];
    for s in 0..n {
        let row = &enc_out[s * 2 * d..(s + 1) * 2 * d];
        for k in 0..d {
            let mean = row[k];
            let raw_lv = row[d + k];
            let lv = raw_lv.clamp(-LOG_VARIANCE_BOUND, LOG_VARIANCE_BOUND);
            let g = dz[s * d + k];
            enc_cot[s * 2 * d + k] = g + beta * inv_n * mean;
            if raw_lv.abs() < LOG_VARIANCE_BOUND {
                let sd = (0.5 * lv).exp();
                enc_cot[s * 2 * d + d + k] =
                    g * 0.5 * sd * noise[s * d + k] + beta * inv_n * 0.5 * (lv.exp() - 1.0);
            }
        }
    }
    let mut enc_grads = MlpGrads::zeros_like(model.encoder());
    model
        .encoder()
        .backward_tape(&enc_tape, &enc_cot, &mut enc_grads)?;

    let (lam_c, lam_b) = penalties
        .map(|(_, w)| (w.calendar, w.butterfly))
        .unwrap_or((0.0, 0.0));
    let total = re + beta * kl + lam_c * l_cal + lam_b * l_but;
    Ok((
        LossBreakdown {
            total,
            reconstruction: re,
            kl,
            l_cal,
            l_but,
        },
        ModelGrads {
            encoder: enc_grads,
            decoder: dec_grads,
        },
    ))
}

/// Sum the latent part of per-row input gradients back onto each surface.
fn accumulate_latent(dx: &[f64], d: usize, rows_per_surface: usize, dz: &mut [f64]) {
    let width = d + 2;
    for (r, chunk) in dx.chunks(width).enumerate() {
        let s = r / rows_per_surface;
        for k in 0..d {
            dz[s * d + k] += chunk[k];
        }
    }
}

fn check_corpus(corpus: &[VolSurface]) -> Result<()> {
    let first = corpus
        .first()
        .ok_or_else(|| VolError::Domain("training corpus is empty".into()))?;
    if corpus.iter().any(|s| s.grid() != first.grid()) {
        return Err(VolError::Mismatch(
            "all training surfaces must share one grid".into(),
        ));
    }
    Ok(())
}

const DECODER_OUTPUT_INIT_SCALE: f64 = 0.1;

fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Train a fresh model on `corpus`. Runs are bitwise reproducible for a given seed.
pub fn train(corpus: &[VolSurface], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    check_corpus(corpus)?;
    let grid = corpus[0].grid().clone();
    let m = grid.len();
    let mut init = substream(config.seed, "init");
    let mut model = VaeModel::new(grid.clone(), &config.architecture, config.beta, &mut init)?;

    let count = corpus.len() as f64;
    let mut shift = vec![0.0; m];
    for s in corpus {
        for (a, v) in shift.iter_mut().zip(s.as_flat()) {
            *a += v / count;
        }
    }
    let mut scale = vec![0.0; m];
    for s in corpus {
        for ((a, v), mu) in scale.iter_mut().zip(s.as_flat()).zip(&shift) {
            *a += (v - mu) * (v - mu) / count;
        }
    }
    for a in &mut scale {
        *a = a.sqrt().max(1e-3);
    }
    {
        // start near the mean surface; full-size output weights give ragged
        // smiles whose arbitrage penalties swamp the first updates
        let last = model
            .decoder_mut()
            .layers
            .last_mut()
            .expect("decoder has layers");
        for w in &mut last.weights {
            *w *= DECODER_OUTPUT_INIT_SCALE;
        }
        match config.architecture.decoder_kind {
            DecoderKind::Grid => {
                for (b, mu) in last.biases.iter_mut().zip(&shift) {
                    *b = softplus_inverse(*mu);
                }
            }
            DecoderKind::Pointwise => {
                last.biases[0] = softplus_inverse(shift.iter().sum::<f64>() / m as f64);
            }
        }
    }
    model.set_standardisation(shift, scale);

    let lattice = match (config.arbitrage_penalties, config.architecture.decoder_kind) {
        (None, _) => None,
        (Some(_), DecoderKind::Grid) => Some(PenaltyLattice::on_grid(&grid)?),
        (Some(_), DecoderKind::Pointwise) => Some(PenaltyLattice::spanning(
            &grid,
            config.penalty_lattice.0,
            config.penalty_lattice.1,
        )?),
    };

    let mut enc_adam = AdamState::new(model.encoder(), config.learning_rate);
    let mut dec_adam = AdamState::new(model.decoder(), config.learning_rate);
    let mut noise_rng = substream(config.seed, "reparameterization");
    let d = config.architecture.latent_dim;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut indexed_substream(config.seed, "shuffle", epoch as u64));
        let mut acc = LossBreakdown::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| corpus[i].as_flat()).collect();
            let noise: Vec<f64> = (0..batch.len() * d)
                .map(|_| noise_rng.sample(StandardNormal))
                .collect();
            let pen = lattice.as_ref().zip(config.arbitrage_penalties);
            let (loss, grads) = batch_loss(&model, &batch, &noise, pen)?;
            if !loss.total.is_finite() {
                return Err(divergence(epoch, b, &trace));
            }
            enc_adam
                .step(model.encoder_mut(), &grads.encoder)
                .map_err(|_| divergence(epoch, b, &trace))?;
            dec_adam
                .step(model.decoder_mut(), &grads.decoder)
                .map_err(|_| divergence(epoch, b, &trace))?;
            let w = batch.len() as f64 / count;
            acc.total += w * loss.total;
            acc.reconstruction += w * loss.reconstruction;
            acc.kl += w * loss.kl;
            acc.l_cal += w * loss.l_cal;
            acc.l_but += w * loss.l_but;
        }
        trace.push(EpochStats {
            epoch,
            loss: acc.total,
            reconstruction: acc.reconstruction,
            kl: acc.kl,
            l_cal: acc.l_cal,
            l_but: acc.l_but,
        });
    }
    Ok(TrainOutcome { model, trace })
}

fn divergence(epoch: usize, batch: usize, trace: &[EpochStats]) -> VolError {
    let recent: Vec<String> = trace
        .iter()
        .rev()
        .take(5)
        .map(|e| format!("{:.3e}", e.loss))
        .collect();
    VolError::Divergence(format!(
        "non-finite loss or gradient at epoch {epoch}, batch {batch}; recent epoch losses (newest first): [{}]",
        recent.join(", ")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfaces::GridSpec;
    use chrono::NaiveDate;

    fn surface(level: f64, skew: f64) -> VolSurface {
        let grid = GridSpec::default();
        let vols = grid
            .coordinates()
            .iter()
            .map(|(t, d)| level + skew * (d - 0.5) + 0.02 * (d - 0.5).powi(2) - 0.01 * t.ln() * 0.1)
            .collect();
        VolSurface::from_flat("s", NaiveDate::default(), grid, vols).unwrap()
    }

    fn small_config(kind: DecoderKind, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: 3e-3,
            beta: 1e-5,
            seed: 17,
            architecture: Architecture {
                decoder_kind: kind,
                latent_dim: 2,
                hidden: vec![16, 16],
            },
            ..Default::default()
        }
    }

    #[test]
    fn beta_zero_leaves_pure_reconstruction() {
        let mut cfg = small_config(DecoderKind::Pointwise, 1);
        cfg.beta = 0.0;
        let model = VaeModel::new(
            GridSpec::default(),
            &cfg.architecture,
            0.0,
            &mut substream(1, "init"),
        )
        .unwrap();
        let s = surface(0.1, -0.02);
        let (loss, _) = batch_loss(&model, &[s.as_flat()], &[0.3, -0.1], None).unwrap();
        assert_eq!(loss.total, loss.reconstruction);
        assert!(loss.kl > 0.0);
    }

    #[test]
    fn degenerate_corpus_is_memorised() {
        let corpus = vec![surface(0.11, -0.03); 16];
        let out = train(&corpus, &small_config(DecoderKind::Pointwise, 500)).unwrap();
        let last = out.trace.last().unwrap();
        assert!(last.reconstruction < 1e-4, "{last:?}");
    }

    #[test]
    fn loss_descends_on_varied_corpus() {
        let corpus: Vec<VolSurface> = (0..40)
            .map(|i| surface(0.06 + 0.003 * i as f64, -0.04 + 0.002 * i as f64))
            .collect();
        for kind in [DecoderKind::Grid, DecoderKind::Pointwise] {
            let out = train(&corpus, &small_config(kind, 60)).unwrap();
            let first: f64 = out.trace[..10].iter().map(|e| e.loss).sum::<f64>() / 10.0;
            let last: f64 = out.trace[50..].iter().map(|e| e.loss).sum::<f64>() / 10.0;
            assert!(last < first, "{kind:?}: {first} -> {last}");
        }
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let corpus: Vec<VolSurface> = (0..12)
            .map(|i| surface(0.08 + 0.004 * i as f64, -0.02))
            .collect();
        let cfg = small_config(DecoderKind::Pointwise, 5);
        let a = train(&corpus, &cfg).unwrap().model.to_json().unwrap();
        let b = train(&corpus, &cfg).unwrap().model.to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(train(&[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn softplus_inverse_roundtrips() {
        for y in [0.01, 0.1, 1.5] {
            assert!((crate::nn::softplus(softplus_inverse(y)) - y).abs() < 1e-14);
        }
    }
}
