//! Kummer's function M(1/2, 3/2, κ), the Watson normalizer.

use crate::error::{Error, Result};
use crate::real::Real;

/// Above this κ the closed form replaces the power series.
pub const SERIES_LIMIT: f64 = 30.0;

fn check<T: Real>(kappa: T) -> Result<()> {
    if kappa >= T::zero() && kappa.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("kappa must be finite and ≥ 0, got {kappa}")))
    }
}

/// `M(1/2, 3/2, κ)`: power series up to κ = 30, closed form beyond.
/// Accuracy is relative (the value exceeds 1e11 at κ = 30).
pub fn hyp1f1_half<T: Real>(kappa: T) -> Result<T> {
    check(kappa)?;
    if kappa <= T::of(SERIES_LIMIT) {
        Ok(series(kappa))
    } else {
        Ok(closed(kappa))
    }
}

/// `e^{−κ}·M(1/2, 3/2, κ)`, finite for every κ ≥ 0.
pub fn hyp1f1_half_scaled<T: Real>(kappa: T) -> Result<T> {
    check(kappa)?;
    if kappa <= T::of(SERIES_LIMIT) {
        Ok(series(kappa) * (-kappa).exp())
    } else {
        Ok(closed_scaled(kappa))
    }
}

/// `Σ κⁿ / ((2n+1)·n!)`, stopped once the next term no longer changes the sum.
pub fn series<T: Real>(kappa: T) -> T {
    let mut term = T::one();
    let mut sum = T::one();
    let mut n = 0u32;
    loop {
        n += 1;
        term = term * kappa / T::of(n as f64);
        let add = term / T::of((2 * n + 1) as f64);
        sum += add;
        if (T::of(n as f64) > kappa && add <= sum * T::epsilon() * T::of(0.25)) || n > 10_000 {
            return sum;
        }
    }
}

/// `√π·erfi(√κ) / (2√κ) = e^κ·F(√κ)/√κ` with `F` Dawson's integral.
pub fn closed<T: Real>(kappa: T) -> T {
    if kappa == T::zero() {
        return T::one();
    }
    let x = kappa.sqrt();
    kappa.exp() * dawson(x) / x
}

fn closed_scaled<T: Real>(kappa: T) -> T {
    let x = kappa.sqrt();
    dawson(x) / x
}

/// Dawson's integral `F(x) = e^{−x²}∫₀ˣ e^{t²} dt` for `x ≥ 0`, by Rybicki's
/// sampling sum with step 0.1; terms farther than 7 from `x` are below 1e-21.
pub fn dawson<T: Real>(x: T) -> T {
    let h = 0.1f64;
    let xf = x.as_f64();
    let lo = ((xf - 7.0) / h).floor() as i64;
    let hi = ((xf + 7.0) / h).ceil() as i64;
    let mut sum = T::zero();
    let mut m = lo - 1;
    while m <= hi + 1 {
        if m % 2 != 0 {
            let d = x - T::of(m as f64 * h);
            sum += (-(d * d)).exp() / T::of(m as f64);
        }
        m += 1;
    }
    sum / T::PI().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    const M_REF: [(f64, f64); 5] = [
        (0.1, 1.0343576135040385),
        (1.0, 1.4626517459071816),
        (5.0, 17.172_157_773_841_49),
        (10.0, 1_168.230_463_579_439),
        (30.0, 181238877517.30848),
    ];

    #[test]
    fn zero_is_one() {
        assert_eq!(hyp1f1_half(0.0f64).unwrap(), 1.0);
        assert_eq!(closed(0.0f64), 1.0);
    }

    #[test]
    fn series_matches_reference() {
        for (k, m) in M_REF {
            assert!((series(k) / m - 1.0).abs() < 1e-14, "κ={k}");
        }
    }

    #[test]
    fn twelve_term_truncation_at_one() {
        let mut fact = 1.0;
        let mut s = 0.0;
        for n in 0..12 {
            if n > 0 {
                fact *= n as f64;
            }
            s += 1.0 / ((2 * n + 1) as f64 * fact);
        }
        assert!((s - 1.462651745817305).abs() < 1e-15);
        assert!((hyp1f1_half(1.0f64).unwrap() - s).abs() < 1e-10);
    }

    #[test]
    fn dawson_reference() {
        for (x, f) in [
            (0.3, 0.28263166502131192),
            (1.0, 0.538_079_506_912_768_4),
            (3.0, 0.178_271_030_610_558_3),
            (10.0, 0.050_253_847_187_598_53),
            (100.0, 0.005_000_250_037_509_378),
        ] {
            assert!((dawson::<f64>(x) / f - 1.0).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn scaled_large_kappa() {
        let s = hyp1f1_half_scaled(200.0f64).unwrap();
        assert!((s / 0.002_506_297_471_428_678 - 1.0).abs() < 1e-13);
        assert!(hyp1f1_half_scaled(1e6f64).unwrap().is_finite());
        assert!(hyp1f1_half(-1.0f64).is_err());
    }
}
