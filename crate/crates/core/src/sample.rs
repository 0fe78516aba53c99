//! Seeded random models, paths, controls and terminal functions.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adapted::{path_count, AdaptedProcess};
use crate::dual::TerminalFunction;
use crate::error::Result;
use crate::hmm::HmmModel;
use crate::predictor::AdaptedWeightProcess;

/// Smallest unnormalized entry of a random row.
pub const ROW_FLOOR: f64 = 0.05;

/// A stochastic row with unnormalized entries uniform in `[ROW_FLOOR, 1)`.
pub fn random_row<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(ROW_FLOOR..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// A model with every entry of `mu`, `A` and `C` strictly positive.
pub fn random_hmm<R: Rng + ?Sized>(rng: &mut R, d: usize, m: usize, horizon: usize) -> Result<HmmModel> {
    let mu = random_row(rng, d);
    let transition = (0..d).map(|_| random_row(rng, d)).collect();
    let emission = (0..d).map(|_| random_row(rng, m + 1)).collect();
    HmmModel::new(mu, transition, emission, horizon)
}

/// Draws an index from a probability vector.
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// A trajectory `(x_0..x_T, z_1..z_T)` of the model.
pub fn sample_trajectory<R: Rng + ?Sized>(
    rng: &mut R,
    model: &HmmModel,
    horizon: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut zs = Vec::with_capacity(horizon);
    xs.push(categorical(rng, model.mu().as_slice()));
    for t in 0..horizon {
        let x = xs[t];
        zs.push(categorical(rng, model.emission_row(x)));
        xs.push(categorical(rng, model.transition_row(x)));
    }
    (xs, zs)
}

/// The observed tokens of a sampled trajectory.
pub fn sample_path<R: Rng + ?Sized>(rng: &mut R, model: &HmmModel, horizon: usize) -> Vec<usize> {
    sample_trajectory(rng, model, horizon).1
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            scale * g
        })
        .collect()
}

/// Independent Gaussian control at every node.
pub fn random_control<R: Rng + ?Sized>(
    rng: &mut R,
    model: &HmmModel,
    horizon: usize,
    scale: f64,
) -> AdaptedWeightProcess {
    AdaptedProcess::build(model.alphabet(), horizon, |_, _| gaussian_vec(rng, model.m(), scale))
}

/// Gaussian terminal function, path-dependent when requested.
pub fn random_terminal<R: Rng + ?Sized>(
    rng: &mut R,
    model: &HmmModel,
    horizon: usize,
    path_dependent: bool,
) -> TerminalFunction {
    if path_dependent {
        let n = path_count(model.alphabet(), horizon).expect("small horizon");
        TerminalFunction::PathDependent {
            horizon,
            values: (0..n).map(|_| gaussian_vec(rng, model.d(), 1.0)).collect(),
        }
    } else {
        TerminalFunction::Deterministic(gaussian_vec(rng, model.d(), 1.0))
    }
}

/// `u + scale * noise` at every node.
pub fn perturb_control<R: Rng + ?Sized>(
    rng: &mut R,
    u: &AdaptedWeightProcess,
    scale: f64,
) -> AdaptedWeightProcess {
    u.map(|_, _, w| {
        let noise = gaussian_vec(rng, w.len(), scale);
        w.iter().zip(noise).map(|(a, b)| a + b).collect()
    })
}
