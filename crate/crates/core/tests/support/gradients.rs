//! Central-difference checks of reverse-mode gradients.

use rand::Rng;
use rand_distr::StandardNormal;
use volcraft::arbitrage::PenaltyLattice;
use volcraft::nn::{Activation, MlpGrads, MlpParams};
use volcraft::rng::substream;
use volcraft::vae::{batch_loss, PenaltyWeights, VaeModel};

/// `‖a - b‖ / max(‖b‖, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / scale.max(floor)
}

fn central<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = p[i];
            p[i] = v + h;
            let up = f(&p);
            p[i] = v - h;
            let down = f(&p);
            p[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst relative error over `count` random networks, parameters and inputs together.
pub fn random_network_suite(count: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, "gradient-suite");
    let acts = [
        Activation::Sigmoid,
        Activation::Softplus,
        Activation::Identity,
        Activation::Relu,
    ];
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let depth = rng.random_range(1..=3);
        let dims: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
        let activations: Vec<Activation> = (0..depth)
            .map(|_| acts[rng.random_range(0..acts.len())])
            .collect();
        let net = MlpParams::glorot(&dims, &activations, &mut rng).unwrap();
        let mut net = net;
        let mut flat = net.to_flat();
        for v in &mut flat {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        net.set_flat(&flat).unwrap();
        let n = rng.random_range(1..=3);
        let input: Vec<f64> = (0..n * dims[0])
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let cot: Vec<f64> = (0..n * dims[depth])
            .map(|_| rng.sample(StandardNormal))
            .collect();

        let tape = net.forward_tape(&input, n).unwrap();
        let mut grads = MlpGrads::zeros_like(&net);
        let dx = net.backward_tape(&tape, &cot, &mut grads).unwrap();

        let objective = |net: &MlpParams, x: &[f64]| -> f64 {
            net.forward_batch(x, n)
                .unwrap()
                .iter()
                .zip(&cot)
                .map(|(y, c)| y * c)
                .sum()
        };
        let fd_params = central(&flat, 1e-6, |p| {
            let mut m = net.clone();
            m.set_flat(p).unwrap();
            objective(&m, &input)
        });
        let fd_input = central(&input, 1e-6, |x| objective(&net, x));
        worst = worst
            .max(relative_error(&grads.to_flat(), &fd_params, 1e-8))
            .max(relative_error(&dx, &fd_input, 1e-8));
    }
    worst
}

/// Relative error of the full loss gradient for one frozen batch and noise draw.
pub fn vae_loss_check(
    model: &VaeModel,
    batch: &[&[f64]],
    seed: u64,
    penalties: Option<(&PenaltyLattice, PenaltyWeights)>,
) -> f64 {
    let mut rng = substream(seed, "reparameterization");
    let noise: Vec<f64> = (0..batch.len() * model.latent_dim())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let (_, grads) = batch_loss(model, batch, &noise, penalties).unwrap();

    let enc = model.encoder().to_flat();
    let dec = model.decoder().to_flat();
    let loss_with = |e: &[f64], d: &[f64]| -> f64 {
        let mut en = model.encoder().clone();
        en.set_flat(e).unwrap();
        let mut de = model.decoder().clone();
        de.set_flat(d).unwrap();
        let m = model.with_networks(en, de).unwrap();
        batch_loss(&m, batch, &noise, penalties).unwrap().0.total
    };
    let fd_enc = central(&enc, 1e-6, |e| loss_with(e, &dec));
    let fd_dec = central(&dec, 1e-6, |d| loss_with(&enc, d));
    relative_error(&grads.encoder.to_flat(), &fd_enc, 1e-10).max(relative_error(
        &grads.decoder.to_flat(),
        &fd_dec,
        1e-10,
    ))
}
