//! Swap sampler for the permutation law `P(π) ∝ Π_i p(Y_π(i) | Z_i)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::gam::ConditionalModel;
use crate::seed::{derive_seed, rng_from_seed, stream};

/// Log acceptance ratio of swapping the values held at positions `i` and `j`.
fn log_swap_ratio(model: &ConditionalModel, y: &[f64], perm: &[usize], i: usize, j: usize) -> f64 {
    let (a_i, a_j) = (y[perm[i]], y[perm[j]]);
    let (m_i, m_j) = (model.fitted_means[i], model.fitted_means[j]);
    -(a_i - a_j) * (m_i - m_j) / model.sigma2
}

/// Runs `sweeps` rounds of disjoint random pair proposals on `perm` in place.
///
/// Each proposal is accepted with probability `q / (1 + q)`, which keeps the
/// target law stationary and, unlike `min(1, q)`, leaves the chain aperiodic
/// when every `q` equals 1.
pub fn run_chain<R: Rng>(model: &ConditionalModel, y: &[f64], perm: &mut [usize], sweeps: usize, rng: &mut R) {
    let n = perm.len();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..sweeps {
        order.shuffle(rng);
        for pair in order.chunks_exact(2) {
            let (i, j) = (pair[0], pair[1]);
            let log_q = log_swap_ratio(model, y, perm, i, j);
            // q/(1+q) = 1/(1+exp(−log q)), evaluated stably.
            let accept = if log_q >= 0.0 {
                1.0 / (1.0 + (-log_q).exp())
            } else {
                let e = log_q.exp();
                e / (1.0 + e)
            };
            if rng.random::<f64>() < accept {
                perm.swap(i, j);
            }
        }
    }
}

/// Draws `m` permutations of `0..n`. Position `i` of a permutation names the
/// index of the `y` value placed at row `i`.
///
/// A hub permutation is reached by one chain from the identity and every
/// returned draw is a fresh chain started at the hub. Under the null the
/// observed data and the draws are then exchangeable.
pub fn cpt_sample_permutations(model: &ConditionalModel, y: &[f64], m: usize, sweeps: usize, seed: u64) -> Vec<Vec<usize>> {
    let n = y.len();
    assert_eq!(model.n(), n, "model and y differ in length");
    let mut hub: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(derive_seed(seed, stream::HUB, 0));
    run_chain(model, y, &mut hub, sweeps, &mut rng);
    (0..m)
        .into_par_iter()
        .map(|k| {
            let mut perm = hub.clone();
            let mut rng = rng_from_seed(derive_seed(seed, stream::PERMUTATION, k as u64));
            run_chain(model, y, &mut perm, sweeps, &mut rng);
            perm
        })
        .collect()
}
