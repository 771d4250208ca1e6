//! Static-arbitrage diagnostics in total implied variance `w(X, t) = t·σ²`.
//!
//! A surface is sampled on a dense (delta, maturity) lattice, each smile is
//! moved to log-moneyness `X = log(K/F)` and re-interpolated onto a shared
//! uniform `X` axis, then checked for calendar (`∂w/∂t ≥ 0`) and butterfly
//! (`g ≥ 0`) arbitrage with second-order finite differences.

mod lattice;
mod source;
pub mod stencil;

pub use lattice::{LatticePenalty, PenaltyLattice};
pub use source::SurfaceSource;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VolError};
use crate::interp::Pchip;
use crate::surfaces::log_moneyness_at_delta;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
const WORST_REPORTED: usize = 10;

/// Sampling density of the dense lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseResolution {
    pub maturities: usize,
    pub deltas: usize,
    pub x_nodes: usize,
}

impl Default for DenseResolution {
    fn default() -> Self {
        Self {
            maturities: 41,
            deltas: 41,
            x_nodes: 41,
        }
    }
}

impl DenseResolution {
    pub fn validate(&self) -> Result<()> {
        if self.maturities < 20 || self.deltas < 20 || self.x_nodes < 20 {
            return Err(VolError::Resolution(format!(
                "dense resolution must be at least 20 in every direction, got {}x{}x{}",
                self.maturities, self.deltas, self.x_nodes
            )));
        }
        Ok(())
    }
}

/// Total implied variance on an `(X, t)` lattice, stored maturity-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalVarianceGrid {
    log_moneyness: Vec<f64>,
    maturities: Vec<f64>,
    w: Vec<f64>,
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite()) && xs.windows(2).all(|p| p[1] > p[0])
}

impl TotalVarianceGrid {
    pub fn new(log_moneyness: Vec<f64>, maturities: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if !strictly_increasing(&log_moneyness) || !strictly_increasing(&maturities) {
            return Err(VolError::Domain(
                "grid axes must be strictly increasing".into(),
            ));
        }
        if maturities.first().is_some_and(|&t| t <= 0.0) {
            return Err(VolError::Domain("maturities must be positive".into()));
        }
        if w.len() != log_moneyness.len() * maturities.len() {
            return Err(VolError::Shape(format!(
                "expected {} total-variance values, got {}",
                log_moneyness.len() * maturities.len(),
                w.len()
            )));
        }
        if let Some(bad) = w.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(VolError::Domain(format!(
                "total variance must be finite and >= 0, got {bad}"
            )));
        }
        Ok(Self {
            log_moneyness,
            maturities,
            w,
        })
    }

    /// Build from a function `w(X, t)`.
    pub fn from_fn(
        log_moneyness: Vec<f64>,
        maturities: Vec<f64>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let w = maturities
            .iter()
            .flat_map(|&t| log_moneyness.iter().map(move |&x| (x, t)))
            .map(|(x, t)| f(x, t))
            .collect();
        Self::new(log_moneyness, maturities, w)
    }

    pub fn log_moneyness(&self) -> &[f64] {
        &self.log_moneyness
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn w(&self, i_t: usize, i_x: usize) -> f64 {
        self.w[i_t * self.log_moneyness.len() + i_x]
    }

    fn row(&self, i_t: usize) -> &[f64] {
        let n = self.log_moneyness.len();
        &self.w[i_t * n..(i_t + 1) * n]
    }

    fn column(&self, i_x: usize) -> Vec<f64> {
        (0..self.maturities.len()).map(|i| self.w(i, i_x)).collect()
    }
}

/// A flagged node. `magnitude` is the size of the negative part, always above tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub x: f64,
    pub t: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalendarOutcome {
    /// `∂w/∂t` at every node, maturity-major.
    pub derivative: Vec<f64>,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButterflyOutcome {
    /// `g(X, t)` at every node, `NaN` where `w = 0`.
    pub g: Vec<f64>,
    pub violations: Vec<Violation>,
    /// Nodes with `w = 0`, excluded from the check.
    pub singular: Vec<(f64, f64)>,
}

pub fn calendar_check(grid: &TotalVarianceGrid, tol: f64) -> Result<CalendarOutcome> {
    let nt = grid.maturities.len();
    if nt < 3 {
        return Err(VolError::Resolution(format!(
            "calendar check needs at least 3 maturity nodes, got {nt}"
        )));
    }
    let nx = grid.log_moneyness.len();
    let mut derivative = vec![0.0; grid.len()];
    for j in 0..nx {
        let d = stencil::first_derivative(&grid.maturities, &grid.column(j));
        for (i, v) in d.into_iter().enumerate() {
            derivative[i * nx + j] = v;
        }
    }
    let violations = flag(grid, &derivative, tol);
    Ok(CalendarOutcome {
        derivative,
        violations,
    })
}

/// Local butterfly function from `w`, `∂w/∂X` and `∂²w/∂X²`.
pub fn g_function(x: f64, w: f64, wx: f64, wxx: f64) -> f64 {
    let a = 1.0 - x * wx / (2.0 * w);
    a * a - wx * wx / 4.0 * (1.0 / w + 0.25) + wxx / 2.0
}

pub fn butterfly_check(grid: &TotalVarianceGrid, tol: f64) -> Result<ButterflyOutcome> {
    let nx = grid.log_moneyness.len();
    if nx < 5 {
        return Err(VolError::Resolution(format!(
            "butterfly check needs at least 5 log-moneyness nodes, got {nx}"
        )));
    }
    let mut g = vec![f64::NAN; grid.len()];
    let mut singular = Vec::new();
    for (i, &t) in grid.maturities.iter().enumerate() {
        let row = grid.row(i);
        let (d1, d2) = stencil::derivatives(&grid.log_moneyness, row);
        for j in 0..nx {
            let x = grid.log_moneyness[j];
            if row[j] == 0.0 {
                singular.push((x, t));
                continue;
            }
            g[i * nx + j] = g_function(x, row[j], d1[j], d2[j]);
        }
    }
    let violations = flag(grid, &g, tol);
    Ok(ButterflyOutcome {
        g,
        violations,
        singular,
    })
}

fn flag(grid: &TotalVarianceGrid, values: &[f64], tol: f64) -> Vec<Violation> {
    let nx = grid.log_moneyness.len();
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < -tol)
        .map(|(k, v)| Violation {
            x: grid.log_moneyness[k % nx],
            t: grid.maturities[k / nx],
            magnitude: -v,
        })
        .collect()
}

/// Sum of squared negative parts beyond `-tol`, divided by the number of values.
pub(crate) fn clamped_square_mean(values: &[f64], tol: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values
        .iter()
        .filter(|v| **v < -tol)
        .map(|v| v * v)
        .sum::<f64>()
        / values.len() as f64
}

/// `(L_cal, L_but)`: mean squared negative parts of `∂w/∂t` and `g`.
pub fn penalty_losses(grid: &TotalVarianceGrid, tol: f64) -> Result<(f64, f64)> {
    let cal = calendar_check(grid, tol)?;
    let but = butterfly_check(grid, tol)?;
    Ok((
        clamped_square_mean(&cal.derivative, tol),
        clamped_square_mean(&but.g, tol),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageReport {
    pub calendar_violations: Vec<Violation>,
    pub butterfly_violations: Vec<Violation>,
    pub singular_nodes: Vec<(f64, f64)>,
    /// Largest value of `-∂w/∂t` over the lattice; negative when `w` increases everywhere.
    pub max_calendar_deficit: f64,
    pub min_g: f64,
    pub tolerance: f64,
}

/// Compact, serializable view of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageSummary {
    pub passed: bool,
    pub calendar_count: usize,
    pub butterfly_count: usize,
    pub singular_count: usize,
    pub max_calendar_deficit: f64,
    pub min_g: f64,
    pub worst_calendar: Vec<Violation>,
    pub worst_butterfly: Vec<Violation>,
}

fn worst(v: &[Violation]) -> Vec<Violation> {
    let mut out = v.to_vec();
    out.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude));
    out.truncate(WORST_REPORTED);
    out
}

impl ArbitrageReport {
    pub fn passed(&self) -> bool {
        self.calendar_violations.is_empty() && self.butterfly_violations.is_empty()
    }

    pub fn violation_count(&self) -> usize {
        self.calendar_violations.len() + self.butterfly_violations.len()
    }

    pub fn summary(&self) -> ArbitrageSummary {
        ArbitrageSummary {
            passed: self.passed(),
            calendar_count: self.calendar_violations.len(),
            butterfly_count: self.butterfly_violations.len(),
            singular_count: self.singular_nodes.len(),
            max_calendar_deficit: self.max_calendar_deficit,
            min_g: self.min_g,
            worst_calendar: worst(&self.calendar_violations),
            worst_butterfly: worst(&self.butterfly_violations),
        }
    }
}

pub fn check_grid(grid: &TotalVarianceGrid, tol: f64) -> Result<ArbitrageReport> {
    let cal = calendar_check(grid, tol)?;
    let but = butterfly_check(grid, tol)?;
    let max_calendar_deficit = cal
        .derivative
        .iter()
        .map(|d| -d)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_g = but
        .g
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::INFINITY, f64::min);
    Ok(ArbitrageReport {
        calendar_violations: cal.violations,
        butterfly_violations: but.violations,
        singular_nodes: but.singular,
        max_calendar_deficit,
        min_g,
        tolerance: tol,
    })
}

/// `n` log-uniform points on `[lo, hi]`.
pub fn log_uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

pub fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Sample `source` densely in (delta, t), move each smile to log-moneyness with
/// unit forward, and re-interpolate onto the common `X` band.
pub fn to_total_variance<S: SurfaceSource + ?Sized>(
    source: &S,
    resolution: &DenseResolution,
) -> Result<TotalVarianceGrid> {
    resolution.validate()?;
    let (t_lo, t_hi) = source.maturity_range();
    let (d_lo, d_hi) = source.delta_range();
    let ts = log_uniform(t_lo, t_hi, resolution.maturities);
    let ds = uniform(d_lo, d_hi, resolution.deltas);
    let coords: Vec<(f64, f64)> = ts
        .iter()
        .flat_map(|&t| ds.iter().map(move |&d| (t, d)))
        .collect();
    let vols = source.vols_at(&coords)?;
    if vols.len() != coords.len() {
        return Err(VolError::Shape(
            "surface source returned the wrong number of vols".into(),
        ));
    }

    let nd = ds.len();
    let mut smiles = Vec::with_capacity(ts.len());
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (i, &t) in ts.iter().enumerate() {
        let row = &vols[i * nd..(i + 1) * nd];
        // X falls as delta rises, so walk the deltas backwards
        let mut xs = Vec::with_capacity(nd);
        let mut ws = Vec::with_capacity(nd);
        for j in (0..nd).rev() {
            xs.push(log_moneyness_at_delta(ds[j], row[j], t));
            ws.push(t * row[j] * row[j]);
        }
        if !strictly_increasing(&xs) {
            return Err(VolError::Numerical(format!(
                "log-moneyness is not monotone in delta at t = {t}"
            )));
        }
        lo = lo.max(xs[0]);
        hi = hi.min(xs[nd - 1]);
        smiles.push(Pchip::new(xs, ws)?);
    }
    if !(hi - lo > 1e-9) {
        return Err(VolError::Coverage { lo, hi });
    }
    let xs = uniform(lo, hi, resolution.x_nodes);
    let w = smiles
        .iter()
        .flat_map(|p| xs.iter().map(move |&x| p.eval(x).max(0.0)))
        .collect();
    TotalVarianceGrid::new(xs, ts, w)
}

/// Full check of a surface source on the dense lattice.
pub fn check_surface<S: SurfaceSource + ?Sized>(
    source: &S,
    resolution: &DenseResolution,
    tol: f64,
) -> Result<ArbitrageReport> {
    check_grid(&to_total_variance(source, resolution)?, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfaces::{GridSpec, VolSurface};
    use chrono::NaiveDate;

    fn axes(nx: usize, nt: usize) -> (Vec<f64>, Vec<f64>) {
        (uniform(-0.5, 0.5, nx), uniform(0.1, 2.0, nt))
    }

    #[test]
    fn flat_surface_has_unit_g_and_no_violations() {
        let (x, t) = axes(21, 15);
        let grid = TotalVarianceGrid::from_fn(x, t, |_, t| t * 0.04).unwrap();
        let report = check_grid(&grid, DEFAULT_TOLERANCE).unwrap();
        assert!(report.passed());
        assert!((report.max_calendar_deficit + 0.04).abs() < 1e-12);
        // w' = 0 at every node, so g collapses to 1
        let but = butterfly_check(&grid, DEFAULT_TOLERANCE).unwrap();
        assert!(but.g.iter().all(|g| (g - 1.0).abs() < 1e-9));
    }

    #[test]
    fn decreasing_variance_flags_every_node() {
        let (x, t) = axes(7, 9);
        let grid = TotalVarianceGrid::from_fn(x, t, |_, t| (3.0 - t) * 0.04).unwrap();
        let cal = calendar_check(&grid, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(cal.violations.len(), grid.len());
        assert!(cal
            .violations
            .iter()
            .all(|v| (v.magnitude - 0.04).abs() < 1e-12));
    }

    #[test]
    fn calendar_derivative_of_t_squared() {
        let (x, t) = axes(5, 11);
        let grid = TotalVarianceGrid::from_fn(x, t.clone(), |_, t| t * t).unwrap();
        let cal = calendar_check(&grid, DEFAULT_TOLERANCE).unwrap();
        for (i, &ti) in t.iter().enumerate() {
            assert!((cal.derivative[i * 5] - 2.0 * ti).abs() < 1e-12);
        }
    }

    #[test]
    fn steep_linear_smile_is_flagged() {
        let x = uniform(-0.05, 0.05, 11);
        let grid =
            TotalVarianceGrid::from_fn(x, vec![0.5, 1.0, 2.0], |x, _| 0.04 + 0.5 * x).unwrap();
        let but = butterfly_check(&grid, DEFAULT_TOLERANCE).unwrap();
        // at X = 0: g = 1 - (0.25 / 4)(1 / 0.04 + 1 / 4)
        let expected = 1.0 - 0.0625 * (25.0 + 0.25);
        assert!((but.g[5] - expected).abs() < 1e-12);
        assert_eq!(but.violations.len(), grid.len());
    }

    fn max_error(n: usize) -> (f64, f64) {
        let x = uniform(-0.5, 0.5, n);
        let w: Vec<f64> = x.iter().map(|x| 0.04 * (2.0 * x).exp()).collect();
        let (d1, d2) = stencil::derivatives(&x, &w);
        let e1 = x
            .iter()
            .zip(&d1)
            .map(|(x, d)| (d - 0.08 * (2.0 * x).exp()).abs())
            .fold(0.0, f64::max);
        let e2 = x
            .iter()
            .zip(&d2)
            .map(|(x, d)| (d - 0.16 * (2.0 * x).exp()).abs())
            .fold(0.0, f64::max);
        (e1, e2)
    }

    #[test]
    fn quadratic_smile_derivatives_are_exact() {
        let x = uniform(-0.5, 0.5, 9);
        let w: Vec<f64> = x.iter().map(|x| 0.04 + 0.01 * x * x).collect();
        let (d1, d2) = stencil::derivatives(&x, &w);
        for (i, xi) in x.iter().enumerate() {
            assert!((d1[i] - 0.02 * xi).abs() < 1e-14);
            assert!((d2[i] - 0.02).abs() < 1e-12);
        }
    }

    #[test]
    fn stencils_converge_at_second_order() {
        let (a1, a2) = max_error(11);
        let (b1, b2) = max_error(21);
        let r1 = a1 / b1;
        let r2 = a2 / b2;
        assert!((3.3..4.8).contains(&r1), "first-derivative ratio {r1}");
        assert!((3.3..4.8).contains(&r2), "second-derivative ratio {r2}");
    }

    #[test]
    fn penalties_vanish_on_clean_grid_and_match_definition() {
        let (x, t) = axes(9, 9);
        let clean = TotalVarianceGrid::from_fn(x.clone(), t.clone(), |_, t| t * 0.01).unwrap();
        assert_eq!(
            penalty_losses(&clean, DEFAULT_TOLERANCE).unwrap(),
            (0.0, 0.0)
        );

        // derivative -0.1 at exactly one node
        let vals = vec![0.0, -0.1, 0.3, 0.0, 2.0];
        assert!((clamped_square_mean(&vals, DEFAULT_TOLERANCE) - 0.01 / 5.0).abs() < 1e-16);
    }

    #[test]
    fn butterfly_penalty_matches_brute_force() {
        let (x, t) = (uniform(-0.08, 0.08, 15), uniform(0.1, 2.0, 4));
        let grid =
            TotalVarianceGrid::from_fn(x.clone(), t.clone(), |x, t| 0.01 * t + 0.04 + 0.5 * x)
                .unwrap();
        let (_, l_but) = penalty_losses(&grid, DEFAULT_TOLERANCE).unwrap();
        let mut acc = 0.0;
        for &ti in &t {
            for &xj in &x {
                let w = 0.01 * ti + 0.04 + 0.5 * xj;
                // the slice is linear, so every stencil returns the exact slope
                let g = g_function(xj, w, 0.5, 0.0);
                if g < -DEFAULT_TOLERANCE {
                    acc += g * g;
                }
            }
        }
        let expected = acc / grid.len() as f64;
        assert!(expected > 0.0);
        assert!((l_but - expected).abs() < 1e-10 * expected.max(1.0));
    }

    #[test]
    fn zero_variance_nodes_are_reported_not_evaluated() {
        let (x, t) = axes(7, 3);
        let grid =
            TotalVarianceGrid::from_fn(x, t, |x, t| if x.abs() < 1e-12 { 0.0 } else { t * 0.04 })
                .unwrap();
        let but = butterfly_check(&grid, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(but.singular.len(), 3);
        assert!(but.g[3].is_nan());
    }

    #[test]
    fn resolution_limits() {
        let grid =
            TotalVarianceGrid::from_fn(uniform(-0.1, 0.1, 4), uniform(0.1, 1.0, 2), |_, t| t)
                .unwrap();
        assert!(matches!(
            calendar_check(&grid, 1e-8),
            Err(VolError::Resolution(_))
        ));
        assert!(matches!(
            butterfly_check(&grid, 1e-8),
            Err(VolError::Resolution(_))
        ));
        assert!(TotalVarianceGrid::new(vec![0.0, 1.0], vec![1.0], vec![0.1, -0.1]).is_err());
    }

    #[test]
    fn g_is_one_for_flat_surfaces_under_axis_shift() {
        for shift in [-0.3, 0.0, 0.7] {
            let x: Vec<f64> = uniform(-0.2, 0.2, 9).iter().map(|x| x + shift).collect();
            let grid = TotalVarianceGrid::from_fn(x, vec![0.5, 1.0, 1.5], |_, t| 0.01 * t).unwrap();
            let but = butterfly_check(&grid, 1e-8).unwrap();
            assert!(but.g.iter().all(|g| (g - 1.0).abs() < 1e-12));
        }
    }

    fn flat_surface(vol: f64) -> VolSurface {
        let grid = GridSpec::default();
        let n = grid.len();
        VolSurface::from_flat("flat", NaiveDate::default(), grid, vec![vol; n]).unwrap()
    }

    #[test]
    fn flat_surface_total_variance() {
        let s = flat_surface(0.12);
        let tv = to_total_variance(&s, &DenseResolution::default()).unwrap();
        for (i, &t) in tv.maturities().iter().enumerate() {
            for j in 0..tv.log_moneyness().len() {
                assert!((tv.w(i, j) - t * 0.0144).abs() < 1e-14);
            }
        }
        let report = check_surface(&s, &DenseResolution::default(), DEFAULT_TOLERANCE).unwrap();
        assert!(report.passed(), "{:?}", report.summary());
        let json = serde_json::to_string(&report.summary()).unwrap();
        assert!(json.contains("\"passed\":true"));
    }

    #[test]
    fn coarse_resolution_is_rejected() {
        let s = flat_surface(0.1);
        let res = DenseResolution {
            maturities: 10,
            ..Default::default()
        };
        assert!(matches!(
            to_total_variance(&s, &res),
            Err(VolError::Resolution(_))
        ));
    }

    #[test]
    fn inverted_term_structure_is_flagged_end_to_end() {
        let grid = GridSpec::default();
        // vol falls so fast with maturity that total variance shrinks
        let vols: Vec<f64> = grid
            .coordinates()
            .into_iter()
            .map(|(t, _)| 0.3 / t.sqrt().max(0.2) * 0.2)
            .collect();
        let mut vols = vols;
        let last = grid.maturities().len() - 1;
        for j in 0..grid.deltas().len() {
            vols[grid.index(last, j)] = 0.01;
        }
        let s = VolSurface::from_flat("inv", NaiveDate::default(), grid, vols).unwrap();
        let report = check_surface(&s, &DenseResolution::default(), DEFAULT_TOLERANCE).unwrap();
        assert!(!report.calendar_violations.is_empty());
        assert!(report.max_calendar_deficit > 0.0);
    }
}
