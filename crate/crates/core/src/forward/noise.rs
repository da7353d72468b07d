use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::real::Real;

/// Rician magnitude noise `sqrt((S+ξ₁)² + ξ₂²)`, `ξ ~ N(0, σ²)`, `σ = s0/snr`.
pub fn add_rician_noise<T: Real>(signal: &[T], snr: T, s0: T, seed: u64) -> Result<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rician_with(signal, sigma(snr, s0)?, &mut rng)
}

pub fn sigma<T: Real>(snr: T, s0: T) -> Result<T> {
    if !(snr > T::zero()) {
        return Err(Error::Parameter(format!("SNR must be positive, got {snr}")));
    }
    Ok(s0 / snr)
}

/// Same as [`add_rician_noise`] but drawing from a caller-owned stream.
pub fn rician_with<T: Real, R: Rng>(signal: &[T], sigma: T, rng: &mut R) -> Result<Vec<T>> {
    Ok(signal
        .iter()
        .map(|&s| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let re = s + sigma * T::of(a);
            let im = sigma * T::of(b);
            (re * re + im * im).sqrt()
        })
        .collect())
}
