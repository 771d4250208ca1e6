//! Heston stochastic-volatility baseline: semi-analytic pricing, delta-lattice
//! surfaces and vol-space calibration.
//!
//! The characteristic function uses the "little Heston trap" branch. The
//! `ξ - d` difference is formed as `-σ_v²(u² + iu)/(ξ + d)` and the
//! logarithms through a complex `log1p`, so the vol-of-vol → 0 limit stays
//! accurate instead of cancelling catastrophically.
//!
//! Calls are priced with the Gil-Pelaez probabilities `P1, P2`; puts use the
//! independent Lewis contour integral on `Im u = -1/2`. Both integrate with
//! composite 256-node Gauss-Legendre panels of width 200 over `[0, U]`, where
//! `U ≥ 200` is extended until the integrand envelope is negligible.

use std::sync::OnceLock;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VolError};
use crate::optim::{self, LbfgsConfig};
use crate::surfaces::{implied_vol, log_moneyness_at_delta, GridSpec, Observation, VolSurface};

const PANEL_WIDTH: f64 = 200.0;
const NODES_PER_PANEL: usize = 256;
const MAX_PANELS: usize = 256;
const REFINEMENT_TOLERANCE: f64 = 1e-6;
const ENVELOPE_TOLERANCE: f64 = 1e-16;
// lighter rule used inside calibration loops; final errors are re-priced with the full rule
const FAST_NODES_PER_PANEL: usize = 64;
const FAST_ENVELOPE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma_v: f64,
    pub rho: f64,
    pub v0: f64,
    pub rate: f64,
}

impl HestonParams {
    pub fn new(kappa: f64, theta: f64, sigma_v: f64, rho: f64, v0: f64, rate: f64) -> Result<Self> {
        let p = Self {
            kappa,
            theta,
            sigma_v,
            rho,
            v0,
            rate,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.kappa, self.theta, self.sigma_v, self.v0];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || !(self.rho > -1.0 && self.rho < 1.0)
            || !self.rate.is_finite()
        {
            return Err(VolError::Domain(format!(
                "invalid Heston parameters {self:?}"
            )));
        }
        Ok(())
    }

    /// `2κθ / σ_v²`; at least one when the Feller condition holds.
    pub fn feller_ratio(&self) -> f64 {
        2.0 * self.kappa * self.theta / (self.sigma_v * self.sigma_v)
    }

    /// Expected integrated variance over `[0, t]`.
    fn integrated_variance(&self, t: f64) -> f64 {
        let decay = if self.kappa * t < 1e-8 {
            t
        } else {
            (1.0 - (-self.kappa * t).exp()) / self.kappa
        };
        self.theta * t + (self.v0 - self.theta) * decay
    }

    /// Characteristic function of `ln(S_T / F_T)` at complex `u`.
    pub fn char_fn(&self, u: Complex64, t: f64) -> Complex64 {
        let i = Complex64::i();
        let sigma2 = self.sigma_v * self.sigma_v;
        let xi = self.kappa - self.sigma_v * self.rho * i * u;
        let uu = u * u + i * u;
        let d = (xi * xi + sigma2 * uu).sqrt();
        let sum = xi + d;
        // (ξ - d) / σ_v² without cancellation
        let q = -uu / sum;
        let g = q * sigma2 / sum;
        let e = (-d * t).exp();
        let log_ratio = log1p(-g * e) - log1p(-g);
        let a = self.kappa * self.theta * (q * t - 2.0 * log_ratio / sigma2);
        let b = q * (1.0 - e) / (1.0 - g * e);
        (a + b * self.v0).exp()
    }
}

fn log1p(z: Complex64) -> Complex64 {
    if z.norm() < 1e-3 {
        // z - z²/2 + ... ; six terms are exact to double precision here
        let mut term = z;
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 1..=7 {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            acc += term * (sign / k as f64);
            term *= z;
        }
        acc
    } else {
        (Complex64::new(1.0, 0.0) + z).ln()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 {
                1.0
            } else if n == 1 {
                x
            } else {
                p1
            };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static R64: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R256: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R512: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        64 => R64.get_or_init(|| gauss_legendre(64)),
        256 => R256.get_or_init(|| gauss_legendre(256)),
        512 => R512.get_or_init(|| gauss_legendre(512)),
        _ => unreachable!("unsupported rule size"),
    }
}

/// Characteristic-function samples for one maturity, reusable across strikes.
struct Quadrature {
    u: Vec<f64>,
    w: Vec<f64>,
    phi: Vec<Complex64>,
    phi_shift: Vec<Complex64>,
    phi_half: Vec<Complex64>,
}

impl Quadrature {
    fn build(params: &HestonParams, t: f64, panels: usize, nodes_per_panel: usize) -> Self {
        let (x, wx) = rule(nodes_per_panel);
        let n = panels * nodes_per_panel;
        let mut q = Quadrature {
            u: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
            phi: Vec::with_capacity(n),
            phi_shift: Vec::with_capacity(n),
            phi_half: Vec::with_capacity(n),
        };
        let half = 0.5 * PANEL_WIDTH;
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * PANEL_WIDTH;
            for (xi, wi) in x.iter().zip(wx) {
                let u = mid + half * xi;
                q.u.push(u);
                q.w.push(half * wi);
                q.phi.push(params.char_fn(Complex64::new(u, 0.0), t));
                q.phi_shift.push(params.char_fn(Complex64::new(u, -1.0), t));
                q.phi_half.push(params.char_fn(Complex64::new(u, -0.5), t));
            }
        }
        q
    }

    /// Undiscounted call on a unit forward at log-moneyness `k`.
    fn call(&self, k: f64) -> f64 {
        let (mut i1, mut i2) = (0.0, 0.0);
        for j in 0..self.u.len() {
            let u = self.u[j];
            let rot = Complex64::from_polar(1.0 / u, -u * k - std::f64::consts::FRAC_PI_2);
            i1 += self.w[j] * (rot * self.phi_shift[j]).re;
            i2 += self.w[j] * (rot * self.phi[j]).re;
        }
        let p1 = 0.5 + i1 / std::f64::consts::PI;
        let p2 = 0.5 + i2 / std::f64::consts::PI;
        p1 - k.exp() * p2
    }

    /// Undiscounted put on a unit forward via the Lewis integral.
    fn put(&self, k: f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.u.len() {
            let u = self.u[j];
            let rot = Complex64::from_polar(1.0, -u * k);
            acc += self.w[j] * (rot * self.phi_half[j]).re / (u * u + 0.25);
        }
        let strike = k.exp();
        strike - strike.sqrt() * acc / std::f64::consts::PI
    }
}

/// Number of panels needed before the integrand envelope becomes negligible.
fn panel_count(params: &HestonParams, t: f64, tolerance: f64) -> Result<usize> {
    let mut panels = 1;
    loop {
        let u = panels as f64 * PANEL_WIDTH;
        let env = params.char_fn(Complex64::new(u, -0.5), t).norm() / (u * u)
            + params.char_fn(Complex64::new(u, 0.0), t).norm() / u
            + params.char_fn(Complex64::new(u, -1.0), t).norm() / u;
        if env < tolerance {
            return Ok(panels);
        }
        if panels >= MAX_PANELS {
            return Err(VolError::Integration(format!(
                "integrand still {env:e} at u={u} for maturity {t}"
            )));
        }
        panels *= 2;
    }
}

/// Prices vanilla options at one maturity on a unit forward.
pub struct HestonSlice {
    params: HestonParams,
    maturity: f64,
    coarse: Quadrature,
    fine: Option<Quadrature>,
}

impl HestonSlice {
    /// `check_refinement` additionally builds a rule with twice the range and
    /// twice the node density, and every price is compared against it.
    pub fn new(params: &HestonParams, maturity: f64, check_refinement: bool) -> Result<Self> {
        params.validate()?;
        if !(maturity > 0.0) {
            return Err(VolError::Domain(format!(
                "maturity must be positive, got {maturity}"
            )));
        }
        let panels = panel_count(params, maturity, ENVELOPE_TOLERANCE)?;
        let coarse = Quadrature::build(params, maturity, panels, NODES_PER_PANEL);
        let fine = check_refinement
            .then(|| Quadrature::build(params, maturity, 2 * panels, 2 * NODES_PER_PANEL));
        Ok(Self {
            params: *params,
            maturity,
            coarse,
            fine,
        })
    }

    /// Coarser rule for calibration inner loops (about 1e-7 in vol).
    fn fast(params: &HestonParams, maturity: f64) -> Result<Self> {
        params.validate()?;
        let panels = panel_count(params, maturity, FAST_ENVELOPE_TOLERANCE)?;
        Ok(Self {
            params: *params,
            maturity,
            coarse: Quadrature::build(params, maturity, panels, FAST_NODES_PER_PANEL),
            fine: None,
        })
    }

    fn checked(&self, k: f64, f: impl Fn(&Quadrature, f64) -> f64) -> Result<f64> {
        let value = f(&self.coarse, k);
        if !value.is_finite() {
            return Err(VolError::Integration(format!("non-finite price at k={k}")));
        }
        if let Some(fine) = &self.fine {
            let refined = f(fine, k);
            if (refined - value).abs() > REFINEMENT_TOLERANCE {
                return Err(VolError::Integration(format!(
                    "refinement disagreement {:e} at k={k}, T={}",
                    (refined - value).abs(),
                    self.maturity
                )));
            }
        }
        Ok(value)
    }

    /// Undiscounted call on a unit forward, clamped to the no-arbitrage band.
    pub fn forward_call(&self, log_moneyness: f64) -> Result<f64> {
        let c = self.checked(log_moneyness, Quadrature::call)?;
        Ok(c.clamp((1.0 - log_moneyness.exp()).max(0.0), 1.0))
    }

    pub fn forward_put(&self, log_moneyness: f64) -> Result<f64> {
        let p = self.checked(log_moneyness, Quadrature::put)?;
        let k = log_moneyness.exp();
        Ok(p.clamp((k - 1.0).max(0.0), k))
    }

    /// Black implied vol at a log-moneyness.
    pub fn implied_vol(&self, log_moneyness: f64) -> Result<f64> {
        let c = self.forward_call(log_moneyness)?;
        implied_vol(c, 1.0, log_moneyness.exp(), 0.0, self.maturity)
    }

    /// Implied vol at a forward call delta, solving the strike/vol fixed point.
    pub fn implied_vol_at_delta(&self, delta: f64) -> Result<f64> {
        let mut vol = (self.params.integrated_variance(self.maturity) / self.maturity).sqrt();
        for _ in 0..50 {
            let k = log_moneyness_at_delta(delta, vol, self.maturity);
            let next = self.implied_vol(k)?;
            if !(next > 0.0) {
                return Err(VolError::Numerical(format!(
                    "zero implied vol at delta {delta}, T={}",
                    self.maturity
                )));
            }
            if (next - vol).abs() < 1e-8 {
                return Ok(next);
            }
            vol = next;
        }
        Err(VolError::Numerical(format!(
            "strike/vol fixed point did not converge in 50 iterations at delta {delta}, T={}",
            self.maturity
        )))
    }
}

/// European call price under Heston with spot, strike and continuously compounded rate.
pub fn heston_call_price(
    params: &HestonParams,
    spot: f64,
    strike: f64,
    maturity: f64,
) -> Result<f64> {
    check_market(spot, strike)?;
    let slice = HestonSlice::new(params, maturity, true)?;
    let forward = spot * (params.rate * maturity).exp();
    let df = (-params.rate * maturity).exp();
    Ok(df * forward * slice.forward_call((strike / forward).ln())?)
}

/// European put price from the Lewis integral (does not use put-call parity).
pub fn heston_put_price(
    params: &HestonParams,
    spot: f64,
    strike: f64,
    maturity: f64,
) -> Result<f64> {
    check_market(spot, strike)?;
    let slice = HestonSlice::new(params, maturity, true)?;
    let forward = spot * (params.rate * maturity).exp();
    let df = (-params.rate * maturity).exp();
    Ok(df * forward * slice.forward_put((strike / forward).ln())?)
}

fn check_market(spot: f64, strike: f64) -> Result<()> {
    if !(spot > 0.0) || !(strike > 0.0) {
        return Err(VolError::Domain(format!(
            "spot and strike must be positive (spot={spot}, strike={strike})"
        )));
    }
    Ok(())
}

/// Heston implied vols on every lattice point (forward normalised to one).
pub fn heston_surface(params: &HestonParams, grid: &GridSpec) -> Result<VolSurface> {
    let vols = lattice_vols(params, grid, true)?;
    VolSurface::from_flat("heston", chrono::NaiveDate::default(), grid.clone(), vols)
}

fn lattice_vols(params: &HestonParams, grid: &GridSpec, check: bool) -> Result<Vec<f64>> {
    let mut vols = Vec::with_capacity(grid.len());
    for &t in grid.maturities() {
        let slice = HestonSlice::new(params, t, check)?;
        for &d in grid.deltas() {
            vols.push(slice.implied_vol_at_delta(d)?);
        }
    }
    Ok(vols)
}

/// Model vols at arbitrary observation coordinates, one slice per distinct maturity.
pub fn heston_vols_at(
    params: &HestonParams,
    observations: &[Observation],
    check: bool,
) -> Result<Vec<f64>> {
    vols_with(observations, |t| HestonSlice::new(params, t, check))
}

fn vols_with(
    observations: &[Observation],
    slice_at: impl Fn(f64) -> Result<HestonSlice>,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; observations.len()];
    let mut order: Vec<usize> = (0..observations.len()).collect();
    order.sort_by(|&a, &b| {
        observations[a]
            .maturity
            .total_cmp(&observations[b].maturity)
    });
    let mut slice: Option<HestonSlice> = None;
    for idx in order {
        let obs = observations[idx];
        if slice.as_ref().map(|s| s.maturity) != Some(obs.maturity) {
            slice = Some(slice_at(obs.maturity)?);
        }
        out[idx] = slice.as_ref().unwrap().implied_vol_at_delta(obs.delta)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HestonFit {
    pub params: HestonParams,
    pub objective: f64,
    pub converged: bool,
    pub starts_failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonCalibrationConfig {
    pub starts: usize,
    pub seed: u64,
    pub lbfgs: LbfgsConfig,
    pub fd_step: f64,
}

impl Default for HestonCalibrationConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            seed: 0,
            lbfgs: LbfgsConfig {
                max_iterations: 200,
                gradient_tolerance: 1e-10,
                ..LbfgsConfig::default()
            },
            fd_step: 1e-6,
        }
    }
}

/// Unconstrained coordinates: logs for the positive parameters, atanh for rho.
fn to_unconstrained(p: &HestonParams) -> [f64; 5] {
    [
        p.kappa.ln(),
        p.theta.ln(),
        p.sigma_v.ln(),
        p.rho.atanh(),
        p.v0.ln(),
    ]
}

fn from_unconstrained(x: &[f64], rate: f64) -> Option<HestonParams> {
    // box keeps the pricer in a sane regime; outside it the objective is undefined
    let bounds = [
        (-6.0, 4.0),
        (-10.0, 1.0),
        (-6.0, 2.0),
        (-4.0, 4.0),
        (-10.0, 1.0),
    ];
    if x.iter()
        .zip(bounds)
        .any(|(v, (lo, hi))| !(*v >= lo && *v <= hi))
    {
        return None;
    }
    HestonParams::new(
        x[0].exp(),
        x[1].exp(),
        x[2].exp(),
        x[3].tanh(),
        x[4].exp(),
        rate,
    )
    .ok()
}

fn vol_objective(params: &HestonParams, observations: &[Observation]) -> f64 {
    match vols_with(observations, |t| HestonSlice::fast(params, t)) {
        Ok(model) => {
            model
                .iter()
                .zip(observations)
                .map(|(m, o)| (m - o.vol).powi(2))
                .sum::<f64>()
                / observations.len() as f64
        }
        Err(_) => f64::NAN,
    }
}

/// Heuristic starting point read off the quotes: short and long near-ATM
/// variances give `v0` and `theta`, the sign of the delta slope gives `rho`.
pub fn initial_guess(observations: &[Observation], rate: f64) -> Result<HestonParams> {
    if observations.is_empty() {
        return Err(VolError::Domain(
            "no observations for an initial guess".into(),
        ));
    }
    let atm_at = |target: f64| -> f64 {
        observations
            .iter()
            .min_by(|a, b| {
                let ka = ((a.maturity / target).ln().abs(), (a.delta - 0.5).abs());
                let kb = ((b.maturity / target).ln().abs(), (b.delta - 0.5).abs());
                ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|o| o.vol)
            .unwrap_or(0.1)
    };
    let t_min = observations
        .iter()
        .map(|o| o.maturity)
        .fold(f64::INFINITY, f64::min);
    let t_max = observations.iter().map(|o| o.maturity).fold(0.0, f64::max);
    let v0 = atm_at(t_min).powi(2);
    let theta = atm_at(t_max).powi(2);

    let n = observations.len() as f64;
    let md = observations.iter().map(|o| o.delta).sum::<f64>() / n;
    let mv = observations.iter().map(|o| o.vol).sum::<f64>() / n;
    let sxx: f64 = observations.iter().map(|o| (o.delta - md).powi(2)).sum();
    let sxy: f64 = observations
        .iter()
        .map(|o| (o.delta - md) * (o.vol - mv))
        .sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    // vols rising towards low call deltas (high strikes) mean positive correlation
    let rho = (-slope / mv.max(1e-3) * 2.0).clamp(-0.8, 0.8);
    HestonParams::new(1.5, theta.max(1e-4), 0.6, rho, v0.max(1e-4), rate)
}

/// Least-squares fit of Heston parameters to observed vols, multi-start.
///
/// The first start is `initial_guess`; the rest are seeded perturbations of it.
pub fn heston_calibrate(
    observations: &[Observation],
    initial_guess: &HestonParams,
    config: &HestonCalibrationConfig,
) -> Result<HestonFit> {
    if observations.len() < 5 {
        return Err(VolError::Domain(format!(
            "Heston calibration needs at least 5 observations, got {}",
            observations.len()
        )));
    }
    initial_guess.validate()?;
    let rate = initial_guess.rate;
    let base = to_unconstrained(initial_guess);
    let mut rng = crate::rng::substream(config.seed, "heston-starts");
    let mut best: Option<HestonFit> = None;
    let mut failed = 0;

    for start in 0..config.starts.max(1) {
        let x0: Vec<f64> = if start == 0 {
            base.to_vec()
        } else {
            base.iter()
                .map(|v| v + rng.random_range(-0.7..0.7))
                .collect()
        };
        let h = config.fd_step;
        let objective = |x: &[f64], grad: &mut [f64]| -> f64 {
            let Some(p) = from_unconstrained(x, rate) else {
                return f64::NAN;
            };
            let f0 = vol_objective(&p, observations);
            if !f0.is_finite() {
                return f64::NAN;
            }
            let mut xp = x.to_vec();
            for i in 0..x.len() {
                xp[i] = x[i] + h;
                let fp = from_unconstrained(&xp, rate).map(|p| vol_objective(&p, observations));
                xp[i] = x[i] - h;
                let fm = from_unconstrained(&xp, rate).map(|p| vol_objective(&p, observations));
                xp[i] = x[i];
                grad[i] = match (fp, fm) {
                    (Some(a), Some(b)) if a.is_finite() && b.is_finite() => (a - b) / (2.0 * h),
                    (Some(a), _) if a.is_finite() => (a - f0) / h,
                    (_, Some(b)) if b.is_finite() => (f0 - b) / h,
                    _ => 0.0,
                };
            }
            f0
        };
        let out = optim::minimize(objective, &x0, &config.lbfgs);
        let Some(params) = from_unconstrained(&out.x, rate).filter(|_| out.value.is_finite())
        else {
            failed += 1;
            continue;
        };
        let fit = HestonFit {
            params,
            objective: out.value,
            converged: out.converged,
            starts_failed: 0,
        };
        if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
            best = Some(fit);
        }
    }
    match best {
        Some(mut fit) => {
            fit.starts_failed = failed;
            Ok(fit)
        }
        None => Err(VolError::Calibration {
            starts: config.starts,
            best_objective: f64::NAN,
        }),
    }
}
