use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::matmul;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::linalg::spectral_norm_sq;
use crate::real::Real;

/// Norm growth over the first iterate that counts as divergence.
const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `0.99 / ‖Φ‖₂²`
    Auto,
    /// Plain `W = Φᵀ`, which can diverge for over-complete dictionaries.
    Unit,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IhtConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub step: StepRule,
    /// Stop once `‖x_{k+1} − x_k‖₂ ≤ tol`.
    pub tol: f64,
    pub nonneg: bool,
}

impl Default for IhtConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            max_iters: 500,
            step: StepRule::Auto,
            tol: 1e-12,
            nonneg: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode<T> {
    pub x: Vec<T>,
    pub iters: usize,
    pub converged: bool,
}

/// The recurrent form of IHT: `x ← H(y·W + x·S)` with `W = step·Φ` (as an
/// `n×K` right factor) and `S = I − step·ΦᵀΦ`.
#[derive(Clone, Debug)]
pub struct IhtOperator<T> {
    pub w: Tensor<T>,
    pub s: Tensor<T>,
    pub step: T,
    pub norm_sq: T,
}

impl<T: Real> IhtOperator<T> {
    pub fn new(atoms: &Tensor<T>, rule: StepRule) -> Result<Self> {
        let (n, k) = (atoms.rows(), atoms.cols());
        if n == 0 || k == 0 {
            return Err(Error::Dimension("empty dictionary".into()));
        }
        let norm_sq = spectral_norm_sq(atoms.data(), n, k);
        let step = match rule {
            StepRule::Auto => {
                if !(norm_sq > T::zero()) {
                    return Err(Error::Numerical("dictionary has zero spectral norm".into()));
                }
                T::of(0.99) / norm_sq
            }
            StepRule::Unit => T::one(),
            StepRule::Fixed(s) if s > 0.0 => T::of(s),
            StepRule::Fixed(s) => return Err(Error::Parameter(format!("step must be positive, got {s}"))),
        };
        let w = atoms.map(|v| v * step);
        let phit = atoms.transpose();
        let gram = matmul(phit.data(), atoms.data(), k, n, k);
        let mut s: Vec<T> = gram.into_iter().map(|g| -step * g).collect();
        for i in 0..k {
            s[i * k + i] += T::one();
        }
        Ok(Self {
            w,
            s: Tensor::matrix(k, k, s)?,
            step,
            norm_sq,
        })
    }

    pub fn cols(&self) -> usize {
        self.s.cols()
    }

    pub fn solve(&self, y: &[T], cfg: &IhtConfig) -> Result<SparseCode<T>> {
        self.solve_observed(y, cfg, |_| {})
    }

    /// As [`solve`](Self::solve), calling `observe` on every iterate.
    pub fn solve_observed(&self, y: &[T], cfg: &IhtConfig, mut observe: impl FnMut(&[T])) -> Result<SparseCode<T>> {
        let (n, k) = (self.w.rows(), self.w.cols());
        if y.len() != n {
            return Err(Error::Dimension(format!("signal length {} vs {n} dictionary rows", y.len())));
        }
        let lambda = T::of(cfg.lambda);
        if !(lambda > T::zero()) {
            return Err(Error::Parameter(format!("threshold must be positive, got {}", cfg.lambda)));
        }
        let tol = T::of(cfg.tol);
        let drive = matmul(y, self.w.data(), 1, n, k);
        let mut x = vec![T::zero(); k];
        let mut reference = norm(&drive);
        for it in 0..cfg.max_iters {
            let sx = matmul(&x, self.s.data(), 1, k, k);
            let next: Vec<T> = drive
                .iter()
                .zip(&sx)
                .map(|(&a, &b)| threshold(a + b, lambda, cfg.nonneg))
                .collect();
            let delta = next.iter().zip(&x).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
            x = next;
            observe(&x);
            let nx = norm(&x);
            if it == 0 {
                reference = reference.max(nx);
            } else if !nx.is_finite() || nx > T::of(DIVERGENCE_FACTOR) * reference {
                return Err(Error::Numerical(format!(
                    "IHT diverged at iteration {it}: step {} exceeds the contraction bound 1/‖Φ‖₂² = {}",
                    self.step,
                    T::one() / self.norm_sq
                )));
            }
            if delta <= tol {
                return Ok(SparseCode {
                    x,
                    iters: it + 1,
                    converged: true,
                });
            }
        }
        Ok(SparseCode {
            x,
            iters: cfg.max_iters,
            converged: false,
        })
    }
}

#[inline]
fn threshold<T: Real>(v: T, lambda: T, nonneg: bool) -> T {
    let keep = if nonneg { v >= lambda } else { v.abs() >= lambda };
    if keep {
        v
    } else {
        T::zero()
    }
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&a| a * a).sum::<T>().sqrt()
}

/// Iterative hard thresholding of `y` over the columns of `atoms`.
pub fn iht_solve<T: Real>(y: &[T], atoms: &Tensor<T>, cfg: &IhtConfig) -> Result<SparseCode<T>> {
    IhtOperator::new(atoms, cfg.step)?.solve(y, cfg)
}

/// `‖y − Φx‖₂²`
pub fn residual_sq<T: Real>(y: &[T], atoms: &Tensor<T>, x: &[T]) -> T {
    let (n, k) = (atoms.rows(), atoms.cols());
    let fit = matmul(atoms.data(), x, n, k, 1);
    y.iter().zip(&fit).map(|(&a, &b)| (a - b) * (a - b)).sum()
}
