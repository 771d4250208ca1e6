//! Latent-code calibration, surface completion and the masked-completion benchmark.
//!
//! Two ways to find `z` for a surface: push the full surface through the
//! encoder once, or minimise the mean squared vol error over whatever points
//! are observed, using L-BFGS with decoder gradients from backpropagation.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VolError};
use crate::nn::MlpGrads;
use crate::optim::{minimize, LbfgsConfig};
use crate::rng::{indexed_substream, substream};
use crate::surfaces::{Observation, VolSurface};
use crate::vae::{pointwise_inputs, DecoderKind, VaeModel};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub z: Vec<f64>,
    /// Mean squared vol error over the observed points at `z`.
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub completed_surface: VolSurface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCalibrationConfig {
    pub starts: usize,
    pub seed: u64,
    pub lbfgs: LbfgsConfig,
    /// Optional `ridge · ‖z‖²` added to the objective.
    pub ridge: Option<f64>,
}

impl Default for LatentCalibrationConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            seed: 0,
            lbfgs: LbfgsConfig::default(),
            ridge: None,
        }
    }
}

/// Decode the full grid surface at `z`.
pub fn complete_surface(
    model: &VaeModel,
    z: &[f64],
    asset_id: &str,
    date: NaiveDate,
) -> Result<VolSurface> {
    model.to_surface(z, asset_id, date)
}

/// Encoder-mean calibration: a single forward pass, no sampling.
pub fn calibrate_encoder(model: &VaeModel, surface: &VolSurface) -> Result<CalibrationResult> {
    let code = model.encode_surface(surface)?;
    let completed = complete_surface(
        model,
        &code.mean,
        &surface.asset_id,
        surface.observation_date,
    )?;
    let objective_value = crate::vae::reconstruction_error(completed.as_flat(), surface.as_flat())?;
    Ok(CalibrationResult {
        z: code.mean,
        objective_value,
        iterations: 0,
        converged: true,
        completed_surface: completed,
    })
}

/// Squared-error objective over a fixed set of observations.
struct LatentObjective<'a> {
    model: &'a VaeModel,
    targets: Vec<f64>,
    coords: Vec<(f64, f64)>,
    grid_index: Vec<usize>,
    ridge: f64,
}

impl<'a> LatentObjective<'a> {
    fn new(model: &'a VaeModel, observations: &[Observation], ridge: f64) -> Result<Self> {
        if observations.is_empty() {
            return Err(VolError::Domain(
                "calibration needs at least one observation".into(),
            ));
        }
        if let Some(o) = observations
            .iter()
            .find(|o| !(o.vol > 0.0 && o.vol.is_finite()))
        {
            return Err(VolError::Domain(format!(
                "observed vol must be positive, got {}",
                o.vol
            )));
        }
        let coords: Vec<(f64, f64)> = observations.iter().map(|o| (o.maturity, o.delta)).collect();
        let grid_index = match model.decoder_kind() {
            DecoderKind::Pointwise => Vec::new(),
            DecoderKind::Grid => coords
                .iter()
                .map(|&(t, d)| {
                    model.grid().locate(t, d).ok_or_else(|| {
                        VolError::Mismatch(format!(
                            "grid decoder can only calibrate to lattice points, got ({t}, {d})"
                        ))
                    })
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            model,
            targets: observations.iter().map(|o| o.vol).collect(),
            coords,
            grid_index,
            ridge,
        })
    }

    fn value_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.try_eval(z, grad).unwrap_or(f64::NAN)
    }

    fn try_eval(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        let n = self.targets.len() as f64;
        let d = z.len();
        let dec = self.model.decoder();
        let mut scratch = MlpGrads::zeros_like(dec);
        let mut value = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        match self.model.decoder_kind() {
            DecoderKind::Pointwise => {
                let inputs = pointwise_inputs(z, &self.coords)?;
                let tape = dec.forward_tape(&inputs, self.coords.len())?;
                let mut cot = Vec::with_capacity(self.coords.len());
                for (y, t) in tape.output().iter().zip(&self.targets) {
                    let r = y - t;
                    value += r * r / n;
                    cot.push(2.0 * r / n);
                }
                let dx = dec.backward_tape(&tape, &cot, &mut scratch)?;
                for row in dx.chunks(d + 2) {
                    for k in 0..d {
                        grad[k] += row[k];
                    }
                }
            }
            DecoderKind::Grid => {
                let tape = dec.forward_tape(z, 1)?;
                let y = tape.output();
                let mut cot = vec![0.0; y.len()];
                for (&i, t) in self.grid_index.iter().zip(&self.targets) {
                    let r = y[i] - t;
                    value += r * r / n;
                    cot[i] += 2.0 * r / n;
                }
                let dx = dec.backward_tape(&tape, &cot, &mut scratch)?;
                grad.copy_from_slice(&dx);
            }
        }
        if self.ridge > 0.0 {
            for (g, zi) in grad.iter_mut().zip(z) {
                value += self.ridge * zi * zi;
                *g += 2.0 * self.ridge * zi;
            }
        }
        Ok(value)
    }

    fn misfit(&self, z: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; z.len()];
        let ridge_part: f64 = self.ridge * z.iter().map(|v| v * v).sum::<f64>();
        Ok(self.try_eval(z, &mut g)? - ridge_part)
    }
}

/// Multi-start L-BFGS fit of `z` to the observed vols.
pub fn calibrate_latent(
    model: &VaeModel,
    observations: &[Observation],
    config: &LatentCalibrationConfig,
) -> Result<CalibrationResult> {
    if config.starts == 0 {
        return Err(VolError::Domain(
            "calibration needs at least one start".into(),
        ));
    }
    let objective = LatentObjective::new(model, observations, config.ridge.unwrap_or(0.0))?;
    let d = model.latent_dim();
    let mut rng = substream(config.seed, "calibration-starts");
    let starts: Vec<Vec<f64>> = (0..config.starts)
        .map(|i| {
            if i == 0 {
                vec![0.0; d]
            } else {
                (0..d).map(|_| rng.sample(StandardNormal)).collect()
            }
        })
        .collect();

    let mut best: Option<crate::optim::LbfgsOutcome> = None;
    for x0 in &starts {
        let out = minimize(|z, g| objective.value_and_gradient(z, g), x0, &config.lbfgs);
        if !out.value.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| out.value < b.value) {
            best = Some(out);
        }
    }
    let best = best.ok_or(VolError::Calibration {
        starts: config.starts,
        best_objective: f64::NAN,
    })?;
    let completed = complete_surface(model, &best.x, "calibrated", NaiveDate::default())?;
    Ok(CalibrationResult {
        objective_value: objective.misfit(&best.x)?,
        iterations: best.iterations,
        converged: best.converged,
        z: best.x,
        completed_surface: completed,
    })
}

/// Mean absolute difference in basis points of vol (1 bp = 1e-4).
pub fn mae_bps(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(VolError::Mismatch(format!(
            "cannot compare {} predicted vols with {} actual vols",
            predicted.len(),
            actual.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .sum::<f64>()
        / predicted.len() as f64
        * 1e4)
}

pub fn surface_mae_bps(predicted: &VolSurface, actual: &VolSurface) -> Result<f64> {
    if predicted.grid() != actual.grid() {
        return Err(VolError::Mismatch("surfaces are on different grids".into()));
    }
    mae_bps(predicted.as_flat(), actual.as_flat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingBenchmarkRow {
    pub latent_dim: usize,
    pub known_points: usize,
    pub mae_bps: f64,
    pub n_surfaces: usize,
    pub n_failures: usize,
}

/// Mask of `k` out of the surface's points: the first `k` of a seeded
/// permutation, so masks for increasing `k` are nested.
pub fn mask_indices(n_points: usize, k: usize, seed: u64, surface_index: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n_points).collect();
    perm.shuffle(&mut indexed_substream(seed, "mask", surface_index as u64));
    perm.truncate(k);
    perm
}

/// Masked-completion table: one row per `(model, k)`.
pub fn run_masking_benchmark(
    models: &[&VaeModel],
    validation: &[VolSurface],
    ks: &[usize],
    seed: u64,
    config: &LatentCalibrationConfig,
) -> Result<Vec<MaskingBenchmarkRow>> {
    if validation.is_empty() || models.is_empty() {
        return Err(VolError::Domain(
            "benchmark needs at least one model and one surface".into(),
        ));
    }
    for m in models {
        if validation.iter().any(|s| s.grid() != m.grid()) {
            return Err(VolError::Mismatch(
                "validation surfaces are not on the model grid".into(),
            ));
        }
    }
    let n_points = validation[0].grid().len();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n_points) {
        return Err(VolError::Domain(format!(
            "known points must be in 1..={n_points}, got {k}"
        )));
    }

    let tasks: Vec<(usize, usize, usize)> = (0..models.len())
        .flat_map(|m| {
            (0..ks.len()).flat_map(move |k| (0..validation.len()).map(move |s| (m, k, s)))
        })
        .collect();
    let results: Vec<Option<f64>> = tasks
        .par_iter()
        .map(|&(m, k, s)| {
            let surface = &validation[s];
            let all = surface.observations();
            let obs: Vec<Observation> = mask_indices(n_points, ks[k], seed, s)
                .into_iter()
                .map(|i| all[i])
                .collect();
            calibrate_latent(models[m], &obs, config)
                .and_then(|r| surface_mae_bps(&r.completed_surface, surface))
                .ok()
        })
        .collect();

    let mut rows = Vec::with_capacity(models.len() * ks.len());
    let per = validation.len();
    for (m, model) in models.iter().enumerate() {
        for (k, &known) in ks.iter().enumerate() {
            let base = (m * ks.len() + k) * per;
            let chunk = &results[base..base + per];
            let ok: Vec<f64> = chunk.iter().flatten().copied().collect();
            let mae = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            };
            rows.push(MaskingBenchmarkRow {
                latent_dim: model.latent_dim(),
                known_points: known,
                mae_bps: mae,
                n_surfaces: per,
                n_failures: per - ok.len(),
            });
        }
    }
    Ok(rows)
}

pub const BENCHMARK_HEADER: [&str; 5] = [
    "latent_dim",
    "known_points",
    "mae_bps",
    "n_surfaces",
    "n_failures",
];

pub fn write_benchmark<W: std::io::Write>(writer: W, rows: &[MaskingBenchmarkRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(BENCHMARK_HEADER).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.latent_dim.to_string(),
            r.known_points.to_string(),
            r.mae_bps.to_string(),
            r.n_surfaces.to_string(),
            r.n_failures.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> VolError {
    VolError::Numerical(format!("csv write failed: {e}"))
}
