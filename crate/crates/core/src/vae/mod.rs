//! Variational autoencoder over flattened volatility surfaces.
//!
//! The encoder maps a standardised surface vector to `2d` numbers: the
//! posterior mean followed by the log-variance (clamped to `[-10, 10]`).
//! Two decoder shapes are supported:
//!
//! * `grid`: `z → σ` at every lattice point at once;
//! * `pointwise`: `(z, ln T, δ) → σ` for a single option, which allows
//!   off-grid evaluation and exact derivatives in `T` and `δ`.
//!
//! Both decoders end in a softplus so every decoded vol is positive.

mod train;

pub use train::{
    batch_loss, train, EpochStats, LossBreakdown, ModelGrads, PenaltyWeights, TrainConfig,
    TrainOutcome,
};

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arbitrage::SurfaceSource;
use crate::error::{Result, VolError};
use crate::nn::{Activation, MlpParams};
use crate::surfaces::{normalize_features, GridSpec, VolSurface};

pub const FORMAT_VERSION: u32 = 1;

thread_local! {
    static ENCODER_PASSES: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Number of single-surface encoder passes made on the current thread.
pub fn encoder_passes() -> u64 {
    ENCODER_PASSES.with(|c| c.get())
}
pub const LOG_VARIANCE_BOUND: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Grid,
    Pointwise,
}

impl std::str::FromStr for DecoderKind {
    type Err = VolError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Self::Grid),
            "pointwise" => Ok(Self::Pointwise),
            other => Err(VolError::Domain(format!(
                "unknown decoder kind {other:?} (expected grid or pointwise)"
            ))),
        }
    }
}

/// Posterior parameters for one surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
    pub sample: Option<Vec<f64>>,
}

impl LatentCode {
    /// Clamps the log-variance into `[-10, 10]`.
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() || mean.is_empty() {
            return Err(VolError::Shape(
                "mean and log-variance must share a positive length".into(),
            ));
        }
        if mean.iter().chain(&log_variance).any(|v| !v.is_finite()) {
            return Err(VolError::Numerical(
                "latent code has non-finite entries".into(),
            ));
        }
        let log_variance = log_variance
            .into_iter()
            .map(|v| v.clamp(-LOG_VARIANCE_BOUND, LOG_VARIANCE_BOUND))
            .collect();
        Ok(Self {
            mean,
            log_variance,
            sample: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `z = μ + exp(lv/2)·ε` with `ε ~ N(0, I)` drawn from `rng`.
pub fn reparameterize<R: Rng + ?Sized>(code: &LatentCode, rng: &mut R) -> Vec<f64> {
    code.mean
        .iter()
        .zip(&code.log_variance)
        .map(|(m, lv)| {
            let eps: f64 = rng.sample(StandardNormal);
            m + (0.5 * lv).exp() * eps
        })
        .collect()
}

/// KL divergence of `N(μ, diag(e^lv))` from the standard normal.
pub fn kl_divergence(code: &LatentCode) -> f64 {
    kl_terms(&code.mean, &code.log_variance)
}

fn kl_terms(mean: &[f64], log_variance: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(log_variance)
        .map(|(m, lv)| -1.0 - lv + lv.exp() + m * m)
        .sum::<f64>()
}

/// Mean squared difference.
pub fn reconstruction_error(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(VolError::Shape(format!(
            "reconstruction needs equal non-empty lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

/// Network shapes for a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub decoder_kind: DecoderKind,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            decoder_kind: DecoderKind::Pointwise,
            latent_dim: 4,
            hidden: vec![32, 32],
        }
    }
}

/// Value and exact derivatives of one pointwise-decoded vol.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSensitivity {
    pub vol: f64,
    pub d_maturity: f64,
    pub d_delta: f64,
    pub d_latent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub format_version: u32,
    grid: GridSpec,
    decoder_kind: DecoderKind,
    latent_dim: usize,
    beta: f64,
    /// Encoder inputs are `(σ - input_shift) / input_scale`, per grid point.
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    encoder: MlpParams,
    decoder: MlpParams,
}

impl VaeModel {
    /// Glorot-initialised model. Encoder hidden layers use relu, decoder
    /// hidden layers softplus, and the decoder output softplus.
    pub fn new<R: Rng + ?Sized>(
        grid: GridSpec,
        arch: &Architecture,
        beta: f64,
        rng: &mut R,
    ) -> Result<Self> {
        grid.validate()?;
        if arch.latent_dim == 0 {
            return Err(VolError::Shape(
                "latent dimension must be at least 1".into(),
            ));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(VolError::Domain(format!(
                "beta must be finite and >= 0, got {beta}"
            )));
        }
        let d = arch.latent_dim;
        let n = grid.len();
        let enc_dims: Vec<usize> = std::iter::once(n)
            .chain(arch.hidden.iter().copied())
            .chain(std::iter::once(2 * d))
            .collect();
        let mut enc_acts = vec![Activation::Relu; arch.hidden.len()];
        enc_acts.push(Activation::Identity);
        let (dec_in, dec_out) = match arch.decoder_kind {
            DecoderKind::Grid => (d, n),
            DecoderKind::Pointwise => (d + 2, 1),
        };
        let dec_dims: Vec<usize> = std::iter::once(dec_in)
            .chain(arch.hidden.iter().copied())
            .chain(std::iter::once(dec_out))
            .collect();
        let mut dec_acts = vec![Activation::Softplus; arch.hidden.len()];
        dec_acts.push(Activation::Softplus);
        let encoder = MlpParams::glorot(&enc_dims, &enc_acts, rng)?;
        let decoder = MlpParams::glorot(&dec_dims, &dec_acts, rng)?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            grid,
            decoder_kind: arch.decoder_kind,
            latent_dim: d,
            beta,
            input_shift: vec![0.0; n],
            input_scale: vec![1.0; n],
            encoder,
            decoder,
        })
    }

    /// Assemble from parts, checking every shape.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        grid: GridSpec,
        decoder_kind: DecoderKind,
        latent_dim: usize,
        beta: f64,
        input_shift: Vec<f64>,
        input_scale: Vec<f64>,
        encoder: MlpParams,
        decoder: MlpParams,
    ) -> Result<Self> {
        let m = Self {
            format_version: FORMAT_VERSION,
            grid,
            decoder_kind,
            latent_dim,
            beta,
            input_shift,
            input_scale,
            encoder,
            decoder,
        };
        m.validate()?;
        Ok(m)
    }

    /// Same model with replacement networks of identical shape.
    pub fn with_networks(&self, encoder: MlpParams, decoder: MlpParams) -> Result<Self> {
        let m = Self {
            encoder,
            decoder,
            ..self.clone()
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(VolError::Mismatch(format!(
                "model format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.grid.validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        let n = self.grid.len();
        let d = self.latent_dim;
        if d == 0 || self.encoder.in_dim() != n || self.encoder.out_dim() != 2 * d {
            return Err(VolError::Shape(format!(
                "encoder must map {n} inputs to {} outputs",
                2 * d
            )));
        }
        let (dec_in, dec_out) = match self.decoder_kind {
            DecoderKind::Grid => (d, n),
            DecoderKind::Pointwise => (d + 2, 1),
        };
        if self.decoder.in_dim() != dec_in || self.decoder.out_dim() != dec_out {
            return Err(VolError::Shape(format!(
                "decoder must map {dec_in} inputs to {dec_out} outputs"
            )));
        }
        if self.decoder.layers.last().map(|l| l.activation) != Some(Activation::Softplus) {
            return Err(VolError::Domain("decoder output must be softplus".into()));
        }
        if self.input_shift.len() != n
            || self.input_scale.len() != n
            || self.input_scale.iter().any(|s| !(*s > 0.0))
        {
            return Err(VolError::Shape(
                "input standardisation must have one positive scale per grid point".into(),
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn decoder_kind(&self) -> DecoderKind {
        self.decoder_kind
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Per-point `(shift, scale)` applied to encoder inputs.
    pub fn input_standardisation(&self) -> (&[f64], &[f64]) {
        (&self.input_shift, &self.input_scale)
    }

    pub fn encoder(&self) -> &MlpParams {
        &self.encoder
    }

    pub fn decoder(&self) -> &MlpParams {
        &self.decoder
    }

    pub(crate) fn encoder_mut(&mut self) -> &mut MlpParams {
        &mut self.encoder
    }

    pub(crate) fn decoder_mut(&mut self) -> &mut MlpParams {
        &mut self.decoder
    }

    pub(crate) fn set_standardisation(&mut self, shift: Vec<f64>, scale: Vec<f64>) {
        self.input_shift = shift;
        self.input_scale = scale;
    }

    pub(crate) fn standardise_into(&self, surface: &[f64], out: &mut Vec<f64>) {
        out.extend(
            surface
                .iter()
                .zip(self.input_shift.iter().zip(&self.input_scale))
                .map(|(v, (m, s))| (v - m) / s),
        );
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(VolError::Shape(format!(
                "latent vector has {} entries, model has d = {}",
                z.len(),
                self.latent_dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(VolError::Numerical(
                "latent vector has non-finite entries".into(),
            ));
        }
        Ok(())
    }

    fn require(&self, kind: DecoderKind) -> Result<()> {
        if self.decoder_kind != kind {
            return Err(VolError::Mismatch(format!(
                "operation needs a {kind:?} decoder, model has {:?}",
                self.decoder_kind
            )));
        }
        Ok(())
    }

    /// Posterior mean and log-variance of a flattened surface.
    pub fn encode(&self, surface: &[f64]) -> Result<LatentCode> {
        if surface.len() != self.grid.len() {
            return Err(VolError::Shape(format!(
                "surface has {} vols, model grid has {}",
                surface.len(),
                self.grid.len()
            )));
        }
        let mut x = Vec::with_capacity(surface.len());
        self.standardise_into(surface, &mut x);
        ENCODER_PASSES.with(|c| c.set(c.get() + 1));
        let out = self.encoder.forward(&x)?;
        let d = self.latent_dim;
        LatentCode::new(out[..d].to_vec(), out[d..].to_vec())
    }

    pub fn encode_surface(&self, surface: &VolSurface) -> Result<LatentCode> {
        if surface.grid() != &self.grid {
            return Err(VolError::Mismatch(
                "surface grid differs from the model grid".into(),
            ));
        }
        self.encode(surface.as_flat())
    }

    pub fn decode_grid(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.require(DecoderKind::Grid)?;
        self.check_latent(z)?;
        self.decoder.forward(z)
    }

    pub fn decode_point(&self, z: &[f64], maturity: f64, delta: f64) -> Result<f64> {
        Ok(self.decode_points(z, &[(maturity, delta)])?[0])
    }

    /// Pointwise decode at many `(maturity, delta)` pairs in one batch.
    pub fn decode_points(&self, z: &[f64], coords: &[(f64, f64)]) -> Result<Vec<f64>> {
        self.require(DecoderKind::Pointwise)?;
        self.check_latent(z)?;
        let inputs = pointwise_inputs(z, coords)?;
        self.decoder.forward_batch(&inputs, coords.len())
    }

    /// The full grid surface as a flat vector, for either decoder kind.
    pub fn decode_surface(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self.decoder_kind {
            DecoderKind::Grid => self.decode_grid(z),
            DecoderKind::Pointwise => self.decode_points(z, &self.grid.coordinates()),
        }
    }

    /// Vols at arbitrary coordinates; grid decoders are interpolated between lattice points.
    pub fn decode_at(&self, z: &[f64], coords: &[(f64, f64)]) -> Result<Vec<f64>> {
        match self.decoder_kind {
            DecoderKind::Pointwise => self.decode_points(z, coords),
            DecoderKind::Grid => self
                .to_surface(z, "decoded", Default::default())?
                .vols_at(coords),
        }
    }

    pub fn to_surface(
        &self,
        z: &[f64],
        asset_id: &str,
        date: chrono::NaiveDate,
    ) -> Result<VolSurface> {
        VolSurface::from_flat(asset_id, date, self.grid.clone(), self.decode_surface(z)?)
    }

    /// Exact derivatives of a pointwise-decoded vol in maturity, delta and `z`.
    pub fn point_sensitivity(
        &self,
        z: &[f64],
        maturity: f64,
        delta: f64,
    ) -> Result<PointSensitivity> {
        self.require(DecoderKind::Pointwise)?;
        self.check_latent(z)?;
        let input = pointwise_inputs(z, &[(maturity, delta)])?;
        let (_, dx) = self.decoder.backward(&input, &[1.0])?;
        let vol = self.decoder.forward(&input)?[0];
        let d = self.latent_dim;
        Ok(PointSensitivity {
            vol,
            // the decoder sees ln T
            d_maturity: dx[d] / maturity,
            d_delta: dx[d + 1],
            d_latent: dx[..d].to_vec(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if let Some(v) = value.get("format_version").and_then(|v| v.as_u64()) {
            if v != u64::from(FORMAT_VERSION) {
                return Err(VolError::Mismatch(format!(
                    "model format version {v} is not supported (expected {FORMAT_VERSION})"
                )));
            }
        }
        let model: Self = serde_json::from_value(value)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn pointwise_inputs(z: &[f64], coords: &[(f64, f64)]) -> Result<Vec<f64>> {
    let mut inputs = Vec::with_capacity(coords.len() * (z.len() + 2));
    for &(t, d) in coords {
        if !(t > 0.0 && t.is_finite()) || !(d > 0.0 && d < 1.0) {
            return Err(VolError::Domain(format!(
                "pointwise decoder needs maturity > 0 and delta in (0,1), got ({t}, {d})"
            )));
        }
        inputs.extend_from_slice(z);
        inputs.extend_from_slice(&normalize_features(t, d));
    }
    Ok(inputs)
}

/// A decoded surface viewed as a [`SurfaceSource`] for the arbitrage checks.
pub struct DecodedSurface<'a> {
    pub model: &'a VaeModel,
    pub z: &'a [f64],
}

impl SurfaceSource for DecodedSurface<'_> {
    fn maturity_range(&self) -> (f64, f64) {
        let m = self.model.grid.maturities();
        (m[0], m[m.len() - 1])
    }

    fn delta_range(&self) -> (f64, f64) {
        let d = self.model.grid.deltas();
        (d[0], d[d.len() - 1])
    }

    fn vols_at(&self, coords: &[(f64, f64)]) -> Result<Vec<f64>> {
        self.model.decode_at(self.z, coords)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn model(kind: DecoderKind, d: usize) -> VaeModel {
        let arch = Architecture {
            decoder_kind: kind,
            latent_dim: d,
            hidden: vec![16, 16],
        };
        VaeModel::new(GridSpec::default(), &arch, 1e-4, &mut substream(3, "init")).unwrap()
    }

    #[test]
    fn kl_examples() {
        let unit = LatentCode::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert_eq!(kl_divergence(&unit), 0.0);
        let shifted = LatentCode::new(vec![1.0], vec![0.0]).unwrap();
        assert!((kl_divergence(&shifted) - 0.5).abs() < 1e-12);
        let wide = LatentCode::new(vec![0.0], vec![4.0f64.ln()]).unwrap();
        assert!((kl_divergence(&wide) - 0.5 * (3.0 - 4.0f64.ln())).abs() < 1e-12);
        assert!((kl_divergence(&wide) - 0.806_852_819_440_054_7).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_examples() {
        assert_eq!(reconstruction_error(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        let v = reconstruction_error(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(reconstruction_error(&[0.3; 4], &[0.3; 4]).unwrap(), 0.0);
        assert!(reconstruction_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn log_variance_is_clamped() {
        let c = LatentCode::new(vec![0.5], vec![-50.0]).unwrap();
        assert_eq!(c.log_variance[0], -10.0);
        let mut rng = substream(1, "reparameterization");
        for _ in 0..100 {
            let z = reparameterize(&c, &mut rng)[0];
            assert!((z - 0.5).abs() < 0.007 * 6.0);
        }
    }

    #[test]
    fn reparameterization_moments() {
        let c = LatentCode::new(vec![0.0], vec![0.0]).unwrap();
        let mut rng = substream(11, "reparameterization");
        let xs: Vec<f64> = (0..10_000)
            .map(|_| reparameterize(&c, &mut rng)[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.04, "{mean}");
        assert!((var - 1.0).abs() < 0.1, "{var}");
        let a = reparameterize(&c, &mut substream(5, "r"));
        let b = reparameterize(&c, &mut substream(5, "r"));
        assert_eq!(a, b);
    }

    #[test]
    fn shapes_and_kind_checks() {
        let m = model(DecoderKind::Pointwise, 3);
        assert_eq!(m.encoder().dims(), vec![40, 16, 16, 6]);
        assert_eq!(m.decoder().dims(), vec![5, 16, 16, 1]);
        let code = m.encode(&[0.1; 40]).unwrap();
        assert_eq!((code.mean.len(), code.log_variance.len()), (3, 3));
        assert!(m.decode_grid(&[0.0; 3]).is_err());
        assert!(m.encode(&[0.1; 39]).is_err());
        assert!(m.decode_point(&[0.0; 3], 0.0, 0.5).is_err());
        assert!(m.decode_point(&[0.0; 2], 1.0, 0.5).is_err());
        let g = model(DecoderKind::Grid, 2);
        assert_eq!(g.decoder().dims(), vec![2, 16, 16, 40]);
        assert_eq!(g.decode_grid(&[0.1, -0.2]).unwrap().len(), 40);
        assert!(g.decode_point(&[0.0; 2], 1.0, 0.5).is_err());
    }

    #[test]
    fn default_architecture_dims() {
        let m = VaeModel::new(
            GridSpec::default(),
            &Architecture::default(),
            1e-4,
            &mut substream(1, "init"),
        )
        .unwrap();
        assert_eq!(m.encoder().dims(), vec![40, 32, 32, 8]);
        assert_eq!(m.decoder().dims(), vec![6, 32, 32, 1]);
    }

    #[test]
    fn decoded_vols_are_positive() {
        let mut rng = substream(9, "z");
        for kind in [DecoderKind::Grid, DecoderKind::Pointwise] {
            let m = model(kind, 2);
            for _ in 0..1000 {
                let z: Vec<f64> = (0..2)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                assert!(m.decode_surface(&z).unwrap().iter().all(|v| *v > 0.0));
            }
        }
    }

    #[test]
    fn batch_decode_equals_single_calls() {
        let m = model(DecoderKind::Pointwise, 4);
        let z = [0.3, -1.0, 0.2, 0.7];
        let batch = m.decode_surface(&z).unwrap();
        for ((t, d), v) in m.grid().coordinates().into_iter().zip(batch) {
            assert_eq!(m.decode_point(&z, t, d).unwrap(), v);
        }
    }

    #[test]
    fn maturity_derivative_matches_finite_difference() {
        let m = model(DecoderKind::Pointwise, 2);
        let z = [0.4, -0.3];
        for &(t, d) in &[(0.1, 0.25), (0.75, 0.5), (2.0, 0.9)] {
            let s = m.point_sensitivity(&z, t, d).unwrap();
            let h = 1e-5 * t;
            let fd = (m.decode_point(&z, t + h, d).unwrap()
                - m.decode_point(&z, t - h, d).unwrap())
                / (2.0 * h);
            assert!(
                (s.d_maturity - fd).abs() <= 1e-4 * fd.abs().max(1e-8),
                "{} vs {fd}",
                s.d_maturity
            );
            let h = 1e-6;
            let fd = (m.decode_point(&z, t, d + h).unwrap()
                - m.decode_point(&z, t, d - h).unwrap())
                / (2.0 * h);
            assert!((s.d_delta - fd).abs() <= 1e-4 * fd.abs().max(1e-8));
        }
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let m = model(DecoderKind::Pointwise, 3);
        let back = VaeModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let bumped =
            m.to_json()
                .unwrap()
                .replacen("\"format_version\": 1", "\"format_version\": 7", 1);
        assert!(matches!(
            VaeModel::from_json(&bumped),
            Err(VolError::Mismatch(_))
        ));
    }
}
