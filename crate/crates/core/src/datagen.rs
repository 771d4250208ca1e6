//! Synthetic multi-asset surface corpus.
//!
//! Each asset follows four mean-reverting daily factor paths: ATM vol level,
//! skew, convexity and the slope of the ATM term structure. A day's factors
//! define an SSVI total-variance surface
//!
//! ```text
//! θ(t)    = t · (level · t^slope)²
//! φ(θ)    = η / (√θ · √(1 + θ))
//! w(X, t) = θ/2 · (1 + ρφX + √((φX + ρ)² + 1 − ρ²))
//! ```
//!
//! with `ρ` the skew and `η` the convexity (clamped so that `η(1 + |ρ|) ≤ 2`),
//! which is then read off the delta grid by solving `X = X(δ, σ(X, t), t)`.
//! The final tenth of the days carries a shock to level and convexity.
//! Every surface is screened with the static-arbitrage check and, if it fails,
//! the day's factor innovations are re-drawn (at most ten times).

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arbitrage::{check_surface, DenseResolution, DEFAULT_TOLERANCE};
use crate::error::{Result, VolError};
use crate::rng::substream;
use crate::surfaces::{log_moneyness_at_delta, GridSpec, VolSurface};

pub const VOL_FLOOR: f64 = 0.01;
pub const VOL_CAP: f64 = 1.5;
pub const VALIDATION_FRACTION: f64 = 0.15;
pub const CRISIS_FRACTION: f64 = 0.10;
const MAX_REDRAWS: usize = 10;

/// Discrete Ornstein-Uhlenbeck path `x ← x + κ(μ − x) + s·ε`, clamped to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorProcess {
    pub mean: f64,
    pub reversion: f64,
    pub volatility: f64,
    pub min: f64,
    pub max: f64,
}

impl FactorProcess {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = self.min < self.max
            && (self.min..=self.max).contains(&self.mean)
            && (0.0..=1.0).contains(&self.reversion)
            && self.volatility >= 0.0;
        if !ok {
            return Err(VolError::Domain(format!(
                "factor {name} is not a valid bounded process"
            )));
        }
        Ok(())
    }

    fn step(&self, x: f64, eps: f64) -> f64 {
        (x + self.reversion * (self.mean - x) + self.volatility * eps).clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrisisShock {
    /// Multiplier on the vol level during the crisis window.
    pub level_factor: f64,
    /// Multiplier on the convexity during the crisis window.
    pub convexity_factor: f64,
}

impl Default for CrisisShock {
    fn default() -> Self {
        Self {
            level_factor: 1.5,
            convexity_factor: 1.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAssetSpec {
    pub asset_id: String,
    pub n_days: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub base_vol: FactorProcess,
    pub skew: FactorProcess,
    pub convexity: FactorProcess,
    pub term_slope: FactorProcess,
    #[serde(default)]
    pub crisis: CrisisShock,
}

impl SyntheticAssetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_days < 2 {
            return Err(VolError::Domain(format!(
                "{}: need at least two days",
                self.asset_id
            )));
        }
        self.base_vol.validate("base_vol")?;
        self.skew.validate("skew")?;
        self.convexity.validate("convexity")?;
        self.term_slope.validate("term_slope")?;
        if self.base_vol.min <= 0.0 || self.convexity.min < 0.0 {
            return Err(VolError::Domain(format!(
                "{}: vol level must stay positive and convexity >= 0",
                self.asset_id
            )));
        }
        if self.skew.min <= -1.0 || self.skew.max >= 1.0 {
            return Err(VolError::Domain(format!(
                "{}: skew must stay inside (-1, 1)",
                self.asset_id
            )));
        }
        if self.term_slope.min <= -0.5 {
            return Err(VolError::Domain(format!(
                "{}: term slope must stay above -0.5 for increasing ATM variance",
                self.asset_id
            )));
        }
        if !(self.crisis.level_factor > 0.0 && self.crisis.convexity_factor >= 0.0) {
            return Err(VolError::Domain(format!(
                "{}: crisis factors must be positive",
                self.asset_id
            )));
        }
        Ok(())
    }
}

/// A collection of asset specs, as read from a JSON spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub assets: Vec<SyntheticAssetSpec>,
    #[serde(default)]
    pub grid: GridSpec,
}

/// SSVI surface for one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsviSurface {
    pub level: f64,
    pub skew: f64,
    pub convexity: f64,
    pub term_slope: f64,
}

impl SsviSurface {
    pub fn atm_variance(&self, t: f64) -> f64 {
        let v = self.level * t.powf(self.term_slope);
        t * v * v
    }

    fn eta(&self) -> f64 {
        self.convexity.min(2.0 / (1.0 + self.skew.abs()))
    }

    pub fn total_variance(&self, x: f64, t: f64) -> f64 {
        let theta = self.atm_variance(t);
        let phi = self.eta() / (theta.sqrt() * (1.0 + theta).sqrt());
        let rho = self.skew;
        let a = phi * x + rho;
        0.5 * theta * (1.0 + rho * phi * x + (a * a + 1.0 - rho * rho).sqrt())
    }

    pub fn vol(&self, x: f64, t: f64) -> f64 {
        (self.total_variance(x, t) / t).sqrt()
    }

    /// Implied vol at forward delta `delta`, solving for the matching log-moneyness.
    pub fn vol_at_delta(&self, t: f64, delta: f64) -> Result<f64> {
        let f = |x: f64| x - log_moneyness_at_delta(delta, self.vol(x, t), t);
        let width = 10.0 * self.atm_variance(t).sqrt() + 1.0;
        let (mut lo, mut hi) = (-width, width);
        let (mut flo, fhi) = (f(lo), f(hi));
        if !(flo < 0.0 && fhi > 0.0) {
            return Err(VolError::Numerical(format!(
                "no log-moneyness bracket for delta {delta} at t = {t}"
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if fm == 0.0 || hi - lo < 1e-14 {
                lo = mid;
                hi = mid;
                break;
            }
            if (fm < 0.0) == (flo < 0.0) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        Ok(self.vol(0.5 * (lo + hi), t))
    }

    pub fn on_grid(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        grid.coordinates()
            .into_iter()
            .map(|(t, d)| self.vol_at_delta(t, d).map(|v| v.clamp(VOL_FLOOR, VOL_CAP)))
            .collect()
    }
}

/// Chronologically split corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub train: Vec<VolSurface>,
    pub validation: Vec<VolSurface>,
}

impl GeneratedCorpus {
    pub fn all(&self) -> Vec<VolSurface> {
        self.train.iter().chain(&self.validation).cloned().collect()
    }
}

/// Number of trailing days held out for validation.
pub fn validation_days(n_days: usize) -> usize {
    ((n_days as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, n_days - 1)
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// All surfaces of one asset, in date order.
pub fn generate_asset(spec: &SyntheticAssetSpec, grid: &GridSpec) -> Result<Vec<VolSurface>> {
    spec.validate()?;
    let mut rng = substream(spec.seed, &format!("datagen/{}", spec.asset_id));
    let crisis_start = spec.n_days - ((spec.n_days as f64 * CRISIS_FRACTION).round() as usize);
    let dates = business_days(spec.start_date, spec.n_days);
    let resolution = DenseResolution::default();
    let mut state = [
        spec.base_vol.mean,
        spec.skew.mean,
        spec.convexity.mean,
        spec.term_slope.mean,
    ];
    let procs = [spec.base_vol, spec.skew, spec.convexity, spec.term_slope];
    let mut out = Vec::with_capacity(spec.n_days);
    for (day, date) in dates.into_iter().enumerate() {
        let mut accepted = None;
        let mut last_failure = String::new();
        for _ in 0..=MAX_REDRAWS {
            let mut next = state;
            if day > 0 {
                for (x, p) in next.iter_mut().zip(&procs) {
                    *x = p.step(*x, rng.sample(StandardNormal));
                }
            }
            let shocked = day >= crisis_start;
            let ssvi = SsviSurface {
                level: next[0]
                    * if shocked {
                        spec.crisis.level_factor
                    } else {
                        1.0
                    },
                skew: next[1],
                convexity: next[2]
                    * if shocked {
                        spec.crisis.convexity_factor
                    } else {
                        1.0
                    },
                term_slope: next[3],
            };
            let vols = match ssvi.on_grid(grid) {
                Ok(v) => v,
                Err(e) => {
                    last_failure = e.to_string();
                    continue;
                }
            };
            let surface = VolSurface::from_flat(spec.asset_id.clone(), date, grid.clone(), vols)?;
            match check_surface(&surface, &resolution, DEFAULT_TOLERANCE) {
                Ok(r) if r.passed() => {
                    accepted = Some((next, surface));
                    break;
                }
                Ok(r) => {
                    last_failure = format!("{} arbitrage violations", r.violation_count());
                }
                Err(e) => last_failure = e.to_string(),
            }
        }
        let (next, surface) = accepted.ok_or_else(|| VolError::Generation {
            asset: spec.asset_id.clone(),
            detail: format!(
                "day {day}: no arbitrage-free surface after {MAX_REDRAWS} redraws ({last_failure})"
            ),
        })?;
        state = next;
        out.push(surface);
    }
    Ok(out)
}

/// Generate every asset (in parallel) and split each chronologically.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<GeneratedCorpus> {
    spec.grid.validate()?;
    let mut ids = std::collections::HashSet::new();
    for a in &spec.assets {
        if !ids.insert(a.asset_id.as_str()) {
            return Err(VolError::Domain(format!(
                "duplicate asset id {}",
                a.asset_id
            )));
        }
    }
    let per_asset = spec
        .assets
        .par_iter()
        .map(|a| generate_asset(a, &spec.grid))
        .collect::<Result<Vec<_>>>()?;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for surfaces in per_asset {
        let n_val = validation_days(surfaces.len());
        let cut = surfaces.len() - n_val;
        let mut it = surfaces.into_iter();
        train.extend(it.by_ref().take(cut));
        validation.extend(it);
    }
    Ok(GeneratedCorpus { train, validation })
}

fn process(mean: f64, reversion: f64, volatility: f64, min: f64, max: f64) -> FactorProcess {
    FactorProcess {
        mean,
        reversion,
        volatility,
        min,
        max,
    }
}

/// Five synthetic FX-like assets with 400 business days each.
pub fn default_corpus_spec(seed: u64) -> CorpusSpec {
    // (id, level, skew, convexity, slope)
    let assets = [
        ("FXA", 0.085, -0.30, 0.9, 0.04),
        ("FXB", 0.065, -0.10, 0.7, 0.06),
        ("FXC", 0.105, 0.15, 1.0, 0.00),
        ("FXD", 0.130, -0.40, 1.1, -0.04),
        ("FXE", 0.075, 0.00, 0.8, 0.08),
    ];
    let start = NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date");
    CorpusSpec {
        grid: GridSpec::default(),
        assets: assets
            .iter()
            .enumerate()
            .map(|(i, &(id, level, skew, conv, slope))| SyntheticAssetSpec {
                asset_id: id.to_string(),
                n_days: 400,
                seed: seed.wrapping_add(i as u64),
                start_date: start,
                base_vol: process(level, 0.03, 0.15 * level * 0.25, 0.4 * level, 3.0 * level),
                skew: process(
                    skew,
                    0.03,
                    0.02,
                    (skew - 0.4).max(-0.9),
                    (skew + 0.4).min(0.9),
                ),
                convexity: process(conv, 0.03, 0.04, 0.2, 1.8),
                term_slope: process(slope, 0.03, 0.01, slope - 0.15, slope + 0.15),
                crisis: CrisisShock::default(),
            })
            .collect(),
    }
}
