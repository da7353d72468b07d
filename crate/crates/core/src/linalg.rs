//! Small dense linear algebra on row-major slices.

use crate::error::{Error, Result};
use crate::real::Real;

/// Solves `a·x = b` for square `a[n×n]` by LU with partial pivoting.
pub fn solve<T: Real>(a: &[T], b: &[T], n: usize) -> Result<Vec<T>> {
    if a.len() != n * n || b.len() != n {
        return Err(Error::Dimension(format!("solve: {}×? with rhs {}", n, b.len())));
    }
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(T::zero(), |s, v| s.max(v.abs()));
    let tiny = scale * T::epsilon() * T::of(n as f64);
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, m[r * n + col].abs()))
            .fold((col, -T::one()), |acc, it| if it.1 > acc.1 { it } else { acc });
        if !(pmax > tiny) {
            return Err(Error::Numerical(format!("singular matrix at column {col}")));
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[r * n + k] -= f * v;
            }
            let xv = x[col];
            x[r] -= f * xv;
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col * n + k] * x[k];
        }
        x[col] = s / m[col * n + col];
    }
    Ok(x)
}

/// Ridge-regularized least squares `argmin ‖a·x − y‖² + ridge·‖x‖²` for `a[m×n]`.
pub fn lstsq<T: Real>(a: &[T], y: &[T], m: usize, n: usize, ridge: T) -> Result<Vec<T>> {
    if a.len() != m * n || y.len() != m {
        return Err(Error::Dimension(format!("lstsq: {m}×{n} with rhs {}", y.len())));
    }
    let mut ata = vec![T::zero(); n * n];
    let mut aty = vec![T::zero(); n];
    for r in 0..m {
        let row = &a[r * n..(r + 1) * n];
        for i in 0..n {
            aty[i] += row[i] * y[r];
            for j in 0..n {
                ata[i * n + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        ata[i * n + i] += ridge;
    }
    solve(&ata, &aty, n)
}

/// Least squares by Householder QR for `a[m×n]`, `m ≥ n`. Fails when a column
/// is numerically dependent on the previous ones (relative pivot below `rcond`).
pub fn qr_lstsq<T: Real>(a: &[T], y: &[T], m: usize, n: usize, rcond: T) -> Result<Vec<T>> {
    if a.len() != m * n || y.len() != m || n > m {
        return Err(Error::Dimension(format!("qr_lstsq: {m}×{n} with rhs {}", y.len())));
    }
    // column-major working copy
    let mut r: Vec<Vec<T>> = (0..n).map(|j| (0..m).map(|i| a[i * n + j]).collect()).collect();
    let mut b = y.to_vec();
    let norms: Vec<T> = r.iter().map(|c| c.iter().map(|&v| v * v).sum::<T>().sqrt()).collect();
    for k in 0..n {
        let alpha = r[k][k..].iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(alpha > rcond * norms[k]) {
            return Err(Error::Numerical(format!("column {k} is rank deficient")));
        }
        let alpha = if r[k][k] > T::zero() { -alpha } else { alpha };
        let mut v: Vec<T> = r[k][k..].to_vec();
        v[0] -= alpha;
        let vn: T = v.iter().map(|&x| x * x).sum();
        if vn > T::zero() {
            for col in r.iter_mut().skip(k) {
                let dot: T = v.iter().zip(&col[k..]).map(|(&p, &q)| p * q).sum();
                let s = T::of(2.0) * dot / vn;
                for (c, &vv) in col[k..].iter_mut().zip(&v) {
                    *c -= s * vv;
                }
            }
            let dot: T = v.iter().zip(&b[k..]).map(|(&p, &q)| p * q).sum();
            let s = T::of(2.0) * dot / vn;
            for (c, &vv) in b[k..].iter_mut().zip(&v) {
                *c -= s * vv;
            }
        }
    }
    let mut x = vec![T::zero(); n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= r[j][k] * x[j];
        }
        x[k] = s / r[k][k];
    }
    Ok(x)
}

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching unit eigenvectors.
pub fn sym_eig3<T: Real>(a: [[T; 3]; 3]) -> ([T; 3], [[T; 3]; 3]) {
    let mut m = a;
    let mut v = [[T::zero(); 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }
    for _ in 0..64 {
        let off = m[0][1].abs() + m[0][2].abs() + m[1][2].abs();
        if off <= T::epsilon() * (m[0][0].abs() + m[1][1].abs() + m[2][2].abs()) || off == T::zero() {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if m[p][q] == T::zero() {
                continue;
            }
            let theta = (m[q][q] - m[p][p]) / (T::of(2.0) * m[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = (t * t + T::one()).sqrt().recip();
            let s = t * c;
            for k in 0..3 {
                let (mkp, mkq) = (m[k][p], m[k][q]);
                m[k][p] = c * mkp - s * mkq;
                m[k][q] = s * mkp + c * mkq;
            }
            for k in 0..3 {
                let (mpk, mqk) = (m[p][k], m[q][k]);
                m[p][k] = c * mpk - s * mqk;
                m[q][k] = s * mpk + c * mqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = order.map(|i| m[i][i]);
    let vecs = order.map(|i| [v[0][i], v[1][i], v[2][i]]);
    (vals, vecs)
}

/// Largest singular value squared of `a[m×n]`, i.e. `‖a‖₂²`, by power iteration on `aᵀa`.
pub fn spectral_norm_sq<T: Real>(a: &[T], m: usize, n: usize) -> T {
    let mut x: Vec<T> = (0..n).map(|i| T::one() + T::of(i as f64 * 1e-3)).collect();
    let mut lam = T::zero();
    let mut ax = vec![T::zero(); m];
    for _ in 0..10_000 {
        let nx = x.iter().map(|&v| v * v).sum::<T>().sqrt();
        if nx == T::zero() {
            return T::zero();
        }
        for v in x.iter_mut() {
            *v /= nx;
        }
        for r in 0..m {
            ax[r] = a[r * n..(r + 1) * n].iter().zip(&x).map(|(&p, &q)| p * q).sum();
        }
        let mut y = vec![T::zero(); n];
        for r in 0..m {
            let row = &a[r * n..(r + 1) * n];
            for (yi, &ai) in y.iter_mut().zip(row) {
                *yi += ai * ax[r];
            }
        }
        let next: T = y.iter().zip(&x).map(|(&p, &q)| p * q).sum();
        x = y;
        let done = (next - lam).abs() <= T::epsilon() * T::of(4.0) * next;
        lam = next;
        if done {
            break;
        }
    }
    lam
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_small_system() {
        let a = [2.0f64, 1.0, 1.0, 3.0];
        let x = solve(&a, &[3.0, 5.0], 2).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn qr_matches_exact_fit() {
        // y = 2 + 3t sampled at t = 0..4
        let a: Vec<f64> = (0..5).flat_map(|t| [1.0, t as f64]).collect();
        let y: Vec<f64> = (0..5).map(|t| 2.0 + 3.0 * t as f64).collect();
        let x = qr_lstsq(&a, &y, 5, 2, 1e-12).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-13 && (x[1] - 3.0).abs() < 1e-13);
        let dup = [1.0f64, 1.0, 2.0, 2.0];
        assert!(qr_lstsq(&dup, &[1.0, 2.0], 2, 2, 1e-12).is_err());
    }

    #[test]
    fn singular_is_reported() {
        assert!(solve(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0], 2).is_err());
    }

    #[test]
    fn eig3_recovers_diagonal_and_rotated() {
        let (vals, vecs) = sym_eig3::<f64>([[1.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 2.0]]);
        assert_eq!(vals, [5.0, 2.0, 1.0]);
        assert!((vecs[0][1].abs() - 1.0).abs() < 1e-15);
        // outer product of (1,1,0)/√2 scaled by 4, plus identity
        let (vals, vecs) = sym_eig3::<f64>([[3.0, 2.0, 0.0], [2.0, 3.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!((vals[0] - 5.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs[0][0].abs() - h).abs() < 1e-12 && (vecs[0][1].abs() - h).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = [3.0f64, 0.0, 0.0, 0.0, 2.0, 0.0];
        assert!((spectral_norm_sq(&a, 2, 3) - 9.0).abs() < 1e-12);
    }
}
