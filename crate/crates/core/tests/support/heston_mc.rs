//! Independent Monte Carlo reference for Heston call prices.
//!
//! Euler with full truncation on the variance and log-Euler on the spot,
//! both driven by the same correlated normals.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use volcraft::heston::HestonParams;
use volcraft::rng::indexed_substream;

const CHUNK: usize = 10_000;

pub struct McPrice {
    pub price: f64,
    pub std_error: f64,
}

/// Discounted call price from `paths` paths with `steps_per_year` time steps.
pub fn call_price(
    p: &HestonParams,
    spot: f64,
    strike: f64,
    maturity: f64,
    paths: usize,
    steps_per_year: f64,
    seed: u64,
) -> McPrice {
    let n = ((maturity * steps_per_year).ceil() as usize).max(1);
    let dt = maturity / n as f64;
    let sq = dt.sqrt();
    let rc = (1.0 - p.rho * p.rho).sqrt();
    let disc = (-p.rate * maturity).exp();
    let chunks = paths.div_ceil(CHUNK);
    let (sum, sum2) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = indexed_substream(seed, "heston-mc", c as u64);
            let count = CHUNK.min(paths - c * CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let (mut x, mut v) = (spot.ln(), p.v0);
                for _ in 0..n {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    let vp = v.max(0.0);
                    let sv = vp.sqrt();
                    x += (p.rate - 0.5 * vp) * dt + sv * sq * z1;
                    v += p.kappa * (p.theta - vp) * dt
                        + p.sigma_v * sv * sq * (p.rho * z1 + rc * z2);
                }
                let pay = disc * (x.exp() - strike).max(0.0);
                s1 += pay;
                s2 += pay * pay;
            }
            (s1, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let m = sum / paths as f64;
    McPrice {
        price: m,
        std_error: ((sum2 / paths as f64 - m * m) / (paths as f64 - 1.0)).sqrt(),
    }
}
