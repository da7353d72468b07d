use super::iht::SparseCode;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::linalg::qr_lstsq;
use crate::real::Real;

/// Dual feasibility tolerance of the active-set loop.
pub const KKT_TOL: f64 = 1e-10;

/// Active-set (Lawson–Hanson) nonnegative least squares `argmin ‖y − Φx‖₂², x ≥ 0`.
pub fn nnls_fit<T: Real>(y: &[T], atoms: &Tensor<T>) -> Result<SparseCode<T>> {
    let (m, n) = (atoms.rows(), atoms.cols());
    if y.len() != m {
        return Err(Error::Dimension(format!("signal length {} vs {m} dictionary rows", y.len())));
    }
    let a = atoms.data();
    let tol = T::of(KKT_TOL);
    let rcond = T::of(1e-12);
    let mut x = vec![T::zero(); n];
    let mut passive = vec![false; n];
    let mut blocked = vec![false; n];
    let mut iters = 0;
    let max_outer = 3 * n + 10;

    let gradient = |x: &[T]| -> Vec<T> {
        let mut r: Vec<T> = y.to_vec();
        for i in 0..m {
            let row = &a[i * n..(i + 1) * n];
            for (j, &xj) in x.iter().enumerate() {
                if xj != T::zero() {
                    r[i] -= row[j] * xj;
                }
            }
        }
        let mut w = vec![T::zero(); n];
        for i in 0..m {
            let row = &a[i * n..(i + 1) * n];
            for (wj, &aij) in w.iter_mut().zip(row) {
                *wj += aij * r[i];
            }
        }
        w
    };

    let solve_passive = |passive: &[bool]| -> Result<Vec<T>> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        if idx.len() > m {
            return Err(Error::Numerical("passive set exceeds row count".into()));
        }
        let sub: Vec<T> = (0..m).flat_map(|i| idx.iter().map(move |&j| a[i * n + j])).collect();
        let z = qr_lstsq(&sub, y, m, idx.len(), rcond)?;
        let mut full = vec![T::zero(); n];
        for (&j, &v) in idx.iter().zip(&z) {
            full[j] = v;
        }
        Ok(full)
    };

    let mut converged = false;
    while iters < max_outer {
        iters += 1;
        let w = gradient(&x);
        let pick = (0..n)
            .filter(|&j| !passive[j] && !blocked[j])
            .max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap_or(std::cmp::Ordering::Equal));
        let Some(t) = pick.filter(|&t| w[t] > tol) else {
            converged = true;
            break;
        };
        passive[t] = true;
        let mut s = match solve_passive(&passive) {
            Ok(s) => s,
            Err(_) => {
                // numerically dependent on the current support
                passive[t] = false;
                blocked[t] = true;
                continue;
            }
        };
        if !(s[t] > T::zero()) {
            passive[t] = false;
            blocked[t] = true;
            continue;
        }
        blocked.iter_mut().for_each(|b| *b = false);
        let mut inner = 0;
        while (0..n).any(|j| passive[j] && s[j] <= T::zero()) {
            inner += 1;
            if inner > 3 * n {
                return Err(Error::Numerical("NNLS inner loop did not terminate".into()));
            }
            let (block, alpha) = (0..n)
                .filter(|&j| passive[j] && s[j] <= T::zero())
                .map(|j| (j, x[j] / (x[j] - s[j])))
                .fold((usize::MAX, T::one()), |acc, v| if v.1 < acc.1 { v } else { acc });
            for j in 0..n {
                if passive[j] {
                    let xj = x[j];
                    x[j] = xj + alpha * (s[j] - xj);
                }
            }
            // rounding can leave the blocking coordinate just above zero
            if block != usize::MAX {
                x[block] = T::zero();
            }
            for j in 0..n {
                if passive[j] && x[j] <= T::zero() {
                    passive[j] = false;
                    x[j] = T::zero();
                }
            }
            s = solve_passive(&passive)?;
        }
        x = s;
    }
    Ok(SparseCode { x, iters, converged })
}

/// Largest KKT violation: `max(max_j −x_j, max_j w_j·[x_j = 0], max_j |w_j|·[x_j > 0])`
/// with `w = Φᵀ(y − Φx)`.
pub fn kkt_residual<T: Real>(y: &[T], atoms: &Tensor<T>, x: &[T]) -> T {
    let (m, n) = (atoms.rows(), atoms.cols());
    let a = atoms.data();
    let mut r: Vec<T> = y.to_vec();
    for i in 0..m {
        for j in 0..n {
            r[i] -= a[i * n + j] * x[j];
        }
    }
    let mut worst = T::zero();
    for j in 0..n {
        let w: T = (0..m).map(|i| a[i * n + j] * r[i]).sum();
        let v = if x[j] > T::zero() { w.abs() } else { w.max(-x[j]) };
        worst = worst.max(v);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_atom_is_one_hot() {
        let phi = Tensor::<f64>::matrix(3, 3, vec![1.0, 0.2, 0.5, 0.0, 1.0, 0.5, 0.3, 0.1, 0.7]).unwrap();
        let y = [0.5, 0.5, 0.7];
        let out = nnls_fit(&y, &phi).unwrap();
        assert!(out.converged);
        assert!((out.x[2] - 1.0).abs() < 1e-12 && out.x[0].abs() < 1e-12 && out.x[1].abs() < 1e-12);
    }

    #[test]
    fn zero_signal() {
        let phi = Tensor::<f64>::matrix(2, 2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let out = nnls_fit(&[0.0, 0.0], &phi).unwrap();
        assert_eq!(out.x, vec![0.0, 0.0]);
    }

    #[test]
    fn negative_column_reaches_exact_fit() {
        let phi = Tensor::<f64>::matrix(2, 3, vec![1.0, 0.0, -1.0, 0.0, 1.0, 0.0]).unwrap();
        let out = nnls_fit(&[-0.3, 0.7], &phi).unwrap();
        assert!((out.x[1] - 0.7).abs() < 1e-14);
        assert!((out.x[2] - 0.3).abs() < 1e-14);
        assert!(kkt_residual(&[-0.3, 0.7], &phi, &out.x) < 1e-12);
    }
}
