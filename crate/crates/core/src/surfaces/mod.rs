//! Implied-volatility surfaces on a fixed maturity × forward-delta lattice.
//!
//! Moneyness is the forward call delta `N(d1)` with no premium adjustment.
//! Surfaces are stored and flattened maturity-major: index
//! `i_maturity * n_deltas + i_delta`.

mod black_scholes;
mod csv_io;
mod quotes;

pub use black_scholes::{
    bs_call_price, delta_to_strike, forward_delta, implied_vol, log_moneyness_at_delta, norm_cdf,
    norm_inv, norm_pdf, PRICE_TOLERANCE,
};
pub use csv_io::{
    read_observations, read_quotes, read_surfaces, write_surfaces, ObservationSet, QuoteRecord,
};
pub use quotes::{quotes_to_smile, MarketQuoteRow, QUOTE_DELTAS};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VolError};

/// Tenor year-fractions of the default lattice: 1w, 1m, 2m, 3m, 6m, 9m, 1y, 3y.
pub const DEFAULT_MATURITIES: [f64; 8] = [
    7.0 / 365.0,
    30.0 / 365.0,
    60.0 / 365.0,
    90.0 / 365.0,
    180.0 / 365.0,
    270.0 / 365.0,
    1.0,
    3.0,
];

pub const DEFAULT_DELTAS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// Tolerance used when matching file coordinates to lattice coordinates.
pub const COORD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    maturities: Vec<f64>,
    deltas: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            maturities: DEFAULT_MATURITIES.to_vec(),
            deltas: DEFAULT_DELTAS.to_vec(),
        }
    }
}

impl GridSpec {
    pub fn new(maturities: Vec<f64>, deltas: Vec<f64>) -> Result<Self> {
        let grid = Self { maturities, deltas };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.maturities.is_empty() || self.deltas.is_empty() {
            return Err(VolError::Domain("grid axes must be non-empty".into()));
        }
        if !strictly_increasing(&self.maturities) || self.maturities[0] <= 0.0 {
            return Err(VolError::Domain(
                "grid maturities must be positive and strictly increasing".into(),
            ));
        }
        if !strictly_increasing(&self.deltas)
            || self.deltas[0] <= 0.0
            || *self.deltas.last().unwrap() >= 1.0
        {
            return Err(VolError::Domain(
                "grid deltas must lie in (0,1) and be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.maturities.len() * self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, maturity_idx: usize, delta_idx: usize) -> usize {
        maturity_idx * self.deltas.len() + delta_idx
    }

    /// `(maturity, delta)` of every lattice point in flattening order.
    pub fn coordinates(&self) -> Vec<(f64, f64)> {
        self.maturities
            .iter()
            .flat_map(|&t| self.deltas.iter().map(move |&d| (t, d)))
            .collect()
    }

    /// Flat index of a coordinate that lies on the lattice.
    pub fn locate(&self, maturity: f64, delta: f64) -> Option<usize> {
        let i = self
            .maturities
            .iter()
            .position(|&t| (t - maturity).abs() <= COORD_TOLERANCE)?;
        let j = self
            .deltas
            .iter()
            .position(|&d| (d - delta).abs() <= COORD_TOLERANCE)?;
        Some(self.index(i, j))
    }
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite()) && xs.windows(2).all(|w| w[1] > w[0])
}

/// One asset-date observation of implied vols on a lattice (decimal units).
#[derive(Debug, Clone, PartialEq)]
pub struct VolSurface {
    pub asset_id: String,
    pub observation_date: NaiveDate,
    vols: Vec<f64>,
    grid: GridSpec,
}

impl VolSurface {
    /// Build from a maturity-major flat vector.
    pub fn from_flat(
        asset_id: impl Into<String>,
        observation_date: NaiveDate,
        grid: GridSpec,
        vols: Vec<f64>,
    ) -> Result<Self> {
        if vols.len() != grid.len() {
            return Err(VolError::Shape(format!(
                "surface has {} vols, grid has {} points",
                vols.len(),
                grid.len()
            )));
        }
        if let Some(bad) = vols.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(VolError::Domain(format!(
                "surface vols must be positive and finite, found {bad}"
            )));
        }
        Ok(Self {
            asset_id: asset_id.into(),
            observation_date,
            vols,
            grid,
        })
    }

    /// Build from rows indexed by maturity, each holding one vol per delta.
    pub fn from_matrix(
        asset_id: impl Into<String>,
        observation_date: NaiveDate,
        grid: GridSpec,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        if rows.len() != grid.maturities().len()
            || rows.iter().any(|r| r.len() != grid.deltas().len())
        {
            return Err(VolError::Shape(
                "matrix dimensions do not match grid".into(),
            ));
        }
        let flat = rows.concat();
        Self::from_flat(asset_id, observation_date, grid, flat)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn vol(&self, maturity_idx: usize, delta_idx: usize) -> f64 {
        self.vols[self.grid.index(maturity_idx, delta_idx)]
    }

    /// Vols in maturity-major order.
    pub fn flatten(&self) -> Vec<f64> {
        self.vols.clone()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.vols
    }

    /// Rows by maturity.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        self.vols
            .chunks(self.grid.deltas().len())
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// Every lattice point as an observation.
    pub fn observations(&self) -> Vec<Observation> {
        self.grid
            .coordinates()
            .into_iter()
            .zip(&self.vols)
            .map(|((maturity, delta), &vol)| Observation {
                maturity,
                delta,
                vol,
            })
            .collect()
    }
}

/// Single `(maturity, delta, vol)` quote; need not lie on the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub maturity: f64,
    pub delta: f64,
    pub vol: f64,
}

/// Coordinates fed to the pointwise decoder: `(ln maturity, delta)`.
#[inline]
pub fn normalize_features(maturity: f64, delta: f64) -> [f64; 2] {
    [maturity.ln(), delta]
}

/// Inverse of [`normalize_features`].
#[inline]
pub fn denormalize_features(coords: [f64; 2]) -> (f64, f64) {
    (coords[0].exp(), coords[1])
}
