//! FX market quote conversion (ATM, risk reversal, butterfly) to smile vols.
//!
//! Uses the smile approximation `σ_wing = atm + bf ± rr/2`, with risk
//! reversals quoted as call-wing minus put-wing. The 0.25/0.1 call deltas are
//! the high-strike wings, so they take `+rr/2`; 0.75/0.9 call deltas (the
//! 25/10-delta puts) take `-rr/2`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VolError};

pub const QUOTE_DELTAS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketQuoteRow {
    pub tenor: f64,
    pub atm: f64,
    pub rr25: f64,
    pub bf25: f64,
    pub rr10: f64,
    pub bf10: f64,
    pub forward: f64,
    pub domestic_rate: f64,
    pub foreign_rate: f64,
}

/// Five `(call delta, vol)` pairs ordered by delta.
pub fn quotes_to_smile(row: &MarketQuoteRow) -> Result<[(f64, f64); 5]> {
    if !(row.atm > 0.0) {
        return Err(VolError::InvalidQuote {
            wing: "atm",
            vol: row.atm,
        });
    }
    let wings = [
        ("10d call", row.atm + row.bf10 + 0.5 * row.rr10),
        ("25d call", row.atm + row.bf25 + 0.5 * row.rr25),
        ("atm", row.atm),
        ("25d put", row.atm + row.bf25 - 0.5 * row.rr25),
        ("10d put", row.atm + row.bf10 - 0.5 * row.rr10),
    ];
    let mut out = [(0.0, 0.0); 5];
    for (k, (wing, vol)) in wings.into_iter().enumerate() {
        if !(vol > 0.0) || !vol.is_finite() {
            return Err(VolError::InvalidQuote { wing, vol });
        }
        out[k] = (QUOTE_DELTAS[k], vol);
    }
    Ok(out)
}
