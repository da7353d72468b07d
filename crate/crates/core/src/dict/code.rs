use crate::real::Real;

/// Regularizer added to every coefficient before normalization.
pub const TAU: f64 = 1e-10;

/// `(x + τ) / ‖x + τ‖₁`. Inputs are expected nonnegative.
pub fn normalize_code<T: Real>(x: &[T], tau: T) -> Vec<T> {
    let total: T = x.iter().map(|&v| v + tau).sum();
    x.iter().map(|&v| (v + tau) / total).collect()
}

/// `Σ grid_k·x_k / Σ x_k` after renormalizing the block with τ.
pub fn barycenter<T: Real>(x: &[T], grid: &[T], tau: T) -> T {
    let w = normalize_code(x, tau);
    w.iter().zip(grid).map(|(&a, &g)| a * g).sum()
}

/// Fraction of exactly-zero coefficients.
pub fn zero_fraction<T: Real>(x: &[T]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().filter(|&&v| v == T::zero()).count() as f64 / x.len() as f64
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), n)
        .into_iter()
        .enumerate()
        .map(|(i, v)| match i {
            0 => lo,
            _ if i == n - 1 => hi,
            _ => v.exp(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_code(&[0.0f64, 0.0], TAU), vec![0.5, 0.5]);
        let v = normalize_code(&[3.0f64, 1.0], TAU);
        assert!((v[0] - 0.75).abs() < 1e-9 && (v[1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn grids_hit_endpoints() {
        let g = logspace(3e-3, 100e-3, 7);
        assert_eq!(g[0], 3e-3);
        assert_eq!(g[6], 100e-3);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(linspace(1.0, 2.0, 1), vec![1.0]);
    }
}
