//! Black-Scholes pricing, implied-volatility inversion and forward-delta strikes.

use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Result, VolError};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal cumulative distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`norm_cdf`] on `(0, 1)`.
pub fn norm_inv(p: f64) -> f64 {
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step against the exact cdf cleans up the last few ulps
    if x.is_finite() {
        let pdf = norm_pdf(x);
        if pdf > 1e-300 {
            x -= (norm_cdf(x) - p) / pdf;
        }
    }
    x
}

/// European call price under Black-Scholes with a continuously compounded rate.
pub fn bs_call_price(spot: f64, strike: f64, rate: f64, maturity: f64, vol: f64) -> Result<f64> {
    if !(spot > 0.0) || !(strike >= 0.0) || !(maturity > 0.0) || !(vol >= 0.0) || !rate.is_finite()
    {
        return Err(VolError::Domain(format!(
            "bs_call_price needs spot>0, strike>=0, maturity>0, vol>=0 \
             (got spot={spot}, strike={strike}, maturity={maturity}, vol={vol}, rate={rate})"
        )));
    }
    Ok(call_unchecked(spot, strike, rate, maturity, vol))
}

fn call_unchecked(spot: f64, strike: f64, rate: f64, maturity: f64, vol: f64) -> f64 {
    let df_strike = strike * (-rate * maturity).exp();
    if strike == 0.0 {
        return spot;
    }
    let sd = vol * maturity.sqrt();
    if sd == 0.0 {
        return (spot - df_strike).max(0.0);
    }
    let d1 = ((spot / strike).ln() + rate * maturity) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    let price = spot * norm_cdf(d1) - df_strike * norm_cdf(d2);
    price.clamp((spot - df_strike).max(0.0), spot)
}

fn vega(spot: f64, strike: f64, rate: f64, maturity: f64, vol: f64) -> f64 {
    let sd = vol * maturity.sqrt();
    let d1 = ((spot / strike).ln() + rate * maturity) / sd + 0.5 * sd;
    spot * norm_pdf(d1) * maturity.sqrt()
}

/// Absolute price tolerance for implied-volatility inversion.
pub const PRICE_TOLERANCE: f64 = 1e-10;

/// Implied volatility of a call price.
///
/// Bracketed bisection seeded by the Brenner-Subrahmanyam style rational
/// approximation, finished with safeguarded Newton steps.
pub fn implied_vol(price: f64, spot: f64, strike: f64, rate: f64, maturity: f64) -> Result<f64> {
    bs_call_price(spot, strike, rate, maturity, 0.0)?;
    if !price.is_finite() {
        return Err(VolError::Domain(format!(
            "price must be finite, got {price}"
        )));
    }
    let lower = (spot - strike * (-rate * maturity).exp()).max(0.0);
    let upper = spot;
    if price < lower - PRICE_TOLERANCE {
        return Err(VolError::Inversion {
            price,
            bound: "lower",
            limit: lower,
        });
    }
    if price <= lower + PRICE_TOLERANCE * 1e-2 {
        return Ok(0.0);
    }
    if price >= upper {
        return Err(VolError::Inversion {
            price,
            bound: "upper",
            limit: upper,
        });
    }

    let f = |v: f64| call_unchecked(spot, strike, rate, maturity, v) - price;

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Err(VolError::Inversion {
                price,
                bound: "upper",
                limit: upper,
            });
        }
    }

    // rational seed: ATM-style approximation on the forward-adjusted price
    let fwd_strike = strike * (-rate * maturity).exp();
    let seed_raw = (2.0 * std::f64::consts::PI / maturity).sqrt()
        * (price - 0.5 * (spot - fwd_strike))
        / (0.5 * (spot + fwd_strike));
    let mut v = if seed_raw.is_finite() && seed_raw > lo && seed_raw < hi {
        seed_raw
    } else {
        0.5 * (lo + hi)
    };
    // a few bisection steps make Newton safe from flat regions
    for _ in 0..8 {
        let fv = f(v);
        if fv > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        v = 0.5 * (lo + hi);
    }

    for _ in 0..100 {
        let fv = f(v);
        if fv.abs() <= PRICE_TOLERANCE * 1e-4 {
            return Ok(v);
        }
        if fv > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let vg = vega(spot, strike, rate, maturity, v);
        let newton = v - fv / vg;
        let next = if vg > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - v).abs() <= 1e-15 * v.max(1e-3) {
            return Ok(next);
        }
        v = next;
    }
    if f(v).abs() <= PRICE_TOLERANCE {
        Ok(v)
    } else {
        Err(VolError::Numerical(format!(
            "implied vol did not converge for price {price}"
        )))
    }
}

/// Strike whose forward call delta `N(d1)` equals `delta` (no premium adjustment).
pub fn delta_to_strike(delta: f64, forward: f64, vol: f64, maturity: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) || !(forward > 0.0) || !(vol > 0.0) || !(maturity > 0.0) {
        return Err(VolError::Domain(format!(
            "delta_to_strike needs delta in (0,1) and positive forward, vol, maturity \
             (got delta={delta}, forward={forward}, vol={vol}, maturity={maturity})"
        )));
    }
    Ok(forward * log_moneyness_at_delta(delta, vol, maturity).exp())
}

/// `log(K/F)` for the strike with forward delta `delta`.
#[inline]
pub fn log_moneyness_at_delta(delta: f64, vol: f64, maturity: f64) -> f64 {
    let sd = vol * maturity.sqrt();
    -sd * norm_inv(delta) + 0.5 * sd * sd
}

/// Forward call delta `N(d1)` of a strike.
pub fn forward_delta(strike: f64, forward: f64, vol: f64, maturity: f64) -> f64 {
    let sd = vol * maturity.sqrt();
    norm_cdf(((forward / strike).ln()) / sd + 0.5 * sd)
}
