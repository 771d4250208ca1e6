//! Arbitrage penalties evaluated directly on a (delta, maturity) lattice of decoder outputs.
//!
//! Each lattice node carries an implied vol `σ`; its log-moneyness is
//! `X = -σ√t·N⁻¹(δ) + σ²t/2` and `w = tσ²`. Derivatives in `X` use
//! finite-difference weights on the node's own (non-uniform) `X` values along
//! the smile, and the calendar derivative at fixed `X` is
//! `∂w/∂t|_X = ∂w/∂t|_δ − ∂w/∂X · ∂X/∂t|_δ`. Gradients with respect to the
//! vols are taken by central differences over each violating node's stencil,
//! so they can be pushed back through the decoder.

use super::stencil::{fornberg, window};
use super::{g_function, log_uniform, uniform};
use crate::error::{Result, VolError};
use crate::surfaces::{norm_inv, GridSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyLattice {
    maturities: Vec<f64>,
    deltas: Vec<f64>,
    quantiles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticePenalty {
    pub l_cal: f64,
    pub l_but: f64,
    pub calendar_violations: usize,
    pub butterfly_violations: usize,
    /// `∂(λ_cal·L_cal + λ_but·L_but)/∂σ` per lattice node.
    pub gradient: Vec<f64>,
}

impl PenaltyLattice {
    pub fn new(maturities: Vec<f64>, deltas: Vec<f64>) -> Result<Self> {
        if maturities.len() < 3 || deltas.len() < 4 {
            return Err(VolError::Resolution(format!(
                "penalty lattice needs at least 3 maturities and 4 deltas, got {}x{}",
                maturities.len(),
                deltas.len()
            )));
        }
        let ok = |v: &[f64]| v.windows(2).all(|p| p[1] > p[0]);
        if !ok(&maturities)
            || !ok(&deltas)
            || maturities[0] <= 0.0
            || deltas[0] <= 0.0
            || deltas[deltas.len() - 1] >= 1.0
        {
            return Err(VolError::Domain(
                "penalty lattice axes must be increasing and in range".into(),
            ));
        }
        let quantiles = deltas.iter().map(|&d| norm_inv(d)).collect();
        Ok(Self {
            maturities,
            deltas,
            quantiles,
        })
    }

    /// Log-uniform maturities and uniform deltas spanning `grid`.
    pub fn spanning(grid: &GridSpec, n_maturities: usize, n_deltas: usize) -> Result<Self> {
        let m = grid.maturities();
        let d = grid.deltas();
        Self::new(
            log_uniform(m[0], m[m.len() - 1], n_maturities),
            uniform(d[0], d[d.len() - 1], n_deltas),
        )
    }

    /// The model grid itself.
    pub fn on_grid(grid: &GridSpec) -> Result<Self> {
        Self::new(grid.maturities().to_vec(), grid.deltas().to_vec())
    }

    pub fn len(&self) -> usize {
        self.maturities.len() * self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(maturity, delta)` for every node, maturity-major.
    pub fn coordinates(&self) -> Vec<(f64, f64)> {
        self.maturities
            .iter()
            .flat_map(|&t| self.deltas.iter().map(move |&d| (t, d)))
            .collect()
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.deltas.len() + j
    }

    fn x(&self, s: &[f64], i: usize, j: usize) -> f64 {
        let t = self.maturities[i];
        let v = s[self.idx(i, j)];
        -v * t.sqrt() * self.quantiles[j] + 0.5 * v * v * t
    }

    fn w(&self, s: &[f64], i: usize, j: usize) -> f64 {
        let v = s[self.idx(i, j)];
        self.maturities[i] * v * v
    }

    fn smile_derivative(&self, s: &[f64], i: usize, j: usize, width: usize, order: usize) -> f64 {
        let r = window(j, self.deltas.len(), width);
        let xs: Vec<f64> = r.clone().map(|k| self.x(s, i, k)).collect();
        let c = fornberg(self.x(s, i, j), &xs, order);
        r.zip(&c[order]).map(|(k, c)| c * self.w(s, i, k)).sum()
    }

    fn calendar_at(&self, s: &[f64], i: usize, j: usize) -> f64 {
        let wx = self.smile_derivative(s, i, j, 3, 1);
        let r = window(i, self.maturities.len(), 3);
        let c = fornberg(self.maturities[i], &self.maturities[r.clone()], 1);
        let (mut wt, mut xt) = (0.0, 0.0);
        for (k, c) in r.zip(&c[1]) {
            wt += c * self.w(s, k, j);
            xt += c * self.x(s, k, j);
        }
        wt - wx * xt
    }

    fn g_at(&self, s: &[f64], i: usize, j: usize) -> f64 {
        let wx = self.smile_derivative(s, i, j, 3, 1);
        let wxx = self.smile_derivative(s, i, j, 4, 2);
        g_function(self.x(s, i, j), self.w(s, i, j), wx, wxx)
    }

    fn calendar_support(&self, i: usize, j: usize) -> Vec<usize> {
        let mut out: Vec<usize> = window(j, self.deltas.len(), 3)
            .map(|k| self.idx(i, k))
            .collect();
        out.extend(window(i, self.maturities.len(), 3).map(|k| self.idx(k, j)));
        out.sort_unstable();
        out.dedup();
        out
    }

    fn butterfly_support(&self, i: usize, j: usize) -> Vec<usize> {
        let n = self.deltas.len();
        let mut out: Vec<usize> = window(j, n, 3)
            .chain(window(j, n, 4))
            .map(|k| self.idx(i, k))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Penalties and their gradient for vols `s` laid out like [`coordinates`](Self::coordinates).
    pub fn evaluate(
        &self,
        s: &[f64],
        lambda_cal: f64,
        lambda_but: f64,
        tol: f64,
    ) -> Result<LatticePenalty> {
        if s.len() != self.len() {
            return Err(VolError::Shape(format!(
                "penalty lattice has {} nodes, got {} vols",
                self.len(),
                s.len()
            )));
        }
        let n = self.len() as f64;
        let mut work = s.to_vec();
        let mut gradient = vec![0.0; s.len()];
        let (mut l_cal, mut l_but) = (0.0, 0.0);
        let (mut n_cal, mut n_but) = (0, 0);
        for i in 0..self.maturities.len() {
            for j in 0..self.deltas.len() {
                let c = self.calendar_at(s, i, j);
                if c < -tol {
                    n_cal += 1;
                    l_cal += c * c / n;
                    if lambda_cal != 0.0 {
                        let scale = lambda_cal * 2.0 * c / n;
                        for k in self.calendar_support(i, j) {
                            let d = central(&mut work, k, |w| self.calendar_at(w, i, j));
                            gradient[k] += scale * d;
                        }
                    }
                }
                let g = self.g_at(s, i, j);
                if g < -tol {
                    n_but += 1;
                    l_but += g * g / n;
                    if lambda_but != 0.0 {
                        let scale = lambda_but * 2.0 * g / n;
                        for k in self.butterfly_support(i, j) {
                            let d = central(&mut work, k, |w| self.g_at(w, i, j));
                            gradient[k] += scale * d;
                        }
                    }
                }
            }
        }
        if !(l_cal.is_finite() && l_but.is_finite()) {
            return Err(VolError::Numerical("non-finite arbitrage penalty".into()));
        }
        Ok(LatticePenalty {
            l_cal,
            l_but,
            calendar_violations: n_cal,
            butterfly_violations: n_but,
            gradient,
        })
    }
}

fn central(work: &mut [f64], k: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let v = work[k];
    let h = 1e-6 * v.abs().max(1e-3);
    work[k] = v + h;
    let up = f(work);
    work[k] = v - h;
    let down = f(work);
    work[k] = v;
    (up - down) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbitrage::{check_surface, DenseResolution, DEFAULT_TOLERANCE};
    use crate::surfaces::VolSurface;
    use chrono::NaiveDate;

    #[test]
    fn flat_vols_are_penalty_free() {
        let lat = PenaltyLattice::spanning(&GridSpec::default(), 12, 9).unwrap();
        let out = lat
            .evaluate(&vec![0.1; lat.len()], 1.0, 1.0, DEFAULT_TOLERANCE)
            .unwrap();
        assert_eq!((out.l_cal, out.l_but), (0.0, 0.0));
        assert!(out.gradient.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn calendar_matches_flat_variance_rate() {
        // constant vol: dw/dt at fixed X equals vol² exactly
        let lat = PenaltyLattice::spanning(&GridSpec::default(), 12, 9).unwrap();
        let s = vec![0.2; lat.len()];
        for i in 0..12 {
            for j in 0..9 {
                assert!((lat.calendar_at(&s, i, j) - 0.04).abs() < 1e-10);
                assert!((lat.g_at(&s, i, j) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn collapsing_term_structure_is_penalised_with_matching_gradient() {
        let grid = GridSpec::default();
        let lat = PenaltyLattice::on_grid(&grid).unwrap();
        let s: Vec<f64> = lat
            .coordinates()
            .iter()
            .map(|(t, d)| 0.25 / (1.0 + 4.0 * t) + 0.02 * d)
            .collect();
        let out = lat.evaluate(&s, 1.0, 1.0, DEFAULT_TOLERANCE).unwrap();
        assert!(out.calendar_violations > 0 && out.l_cal > 0.0);
        let total = |v: &[f64]| {
            let p = lat.evaluate(v, 1.0, 1.0, DEFAULT_TOLERANCE).unwrap();
            p.l_cal + p.l_but
        };
        let mut v = s.clone();
        for k in [0, 7, 22, 39] {
            let h = 1e-6;
            v[k] = s[k] + h;
            let up = total(&v);
            v[k] = s[k] - h;
            let down = total(&v);
            v[k] = s[k];
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - out.gradient[k]).abs() < 1e-5 * fd.abs().max(1e-3),
                "node {k}: {fd} vs {}",
                out.gradient[k]
            );
        }
    }

    #[test]
    fn agrees_with_dense_check_on_clean_and_broken_surfaces() {
        let grid = GridSpec::default();
        let lat = PenaltyLattice::on_grid(&grid).unwrap();
        let clean: Vec<f64> = grid
            .coordinates()
            .iter()
            .map(|(_, d)| 0.1 + 0.01 * (d - 0.5).powi(2))
            .collect();
        let out = lat.evaluate(&clean, 1.0, 1.0, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(out.l_cal + out.l_but, 0.0);
        let s = VolSurface::from_flat("c", NaiveDate::default(), grid, clean).unwrap();
        assert!(
            check_surface(&s, &DenseResolution::default(), DEFAULT_TOLERANCE)
                .unwrap()
                .passed()
        );
    }
}
