//! Latin hypercube and i.i.d. uniform sampling of the unit cube.
//!
//! All randomness in the crate flows from [`seeded_rng`], a ChaCha8 stream
//! generator (`rand_chacha::ChaCha8Rng`). Its output for a given seed is
//! specified independently of platform and word size, so sampled designs
//! and every artifact derived from them are reproducible across machines.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{MaterialConfig, N_PARAMS};

pub type PipelineRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> PipelineRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a label.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplePlan {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

/// Plain Latin hypercube design on `[0, 1)^d`.
///
/// For each dimension the `n` strata `[i/n, (i+1)/n)` are assigned to the
/// samples by an independent uniform permutation, and each value is placed
/// uniformly within its stratum. Returns `n` rows of length `d`.
pub fn lhs(plan: SamplePlan) -> Vec<Vec<f64>> {
    let SamplePlan { n, d, seed } = plan;
    let mut rng = seeded_rng(seed);
    let mut rows = vec![vec![0.0; d]; n];
    let nf = n as f64;
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(&mut rng);
        for (row, &s) in rows.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            let upper = (s + 1) as f64 / nf;
            let v = (s as f64 + u) / nf;
            row[j] = if v >= upper { upper.next_down() } else { v };
        }
    }
    rows
}

/// I.i.d. uniform samples on `[0, 1)^d`.
pub fn uniform(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect()
}

fn to_configs(rows: Vec<Vec<f64>>) -> Vec<MaterialConfig> {
    rows.into_iter()
        .map(|r| {
            let values: [f64; N_PARAMS] = r.try_into().expect("row width is N_PARAMS");
            MaterialConfig::normalized_unchecked(values)
        })
        .collect()
}

/// LHS design of `n` normalized material configs.
pub fn lhs_sample(n: usize, seed: u64) -> Vec<MaterialConfig> {
    to_configs(lhs(SamplePlan { n, d: N_PARAMS, seed }))
}

/// `n` uniform normalized material configs.
pub fn uniform_sample(n: usize, seed: u64) -> Vec<MaterialConfig> {
    to_configs(uniform(n, N_PARAMS, seed))
}
