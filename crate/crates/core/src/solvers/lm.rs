//! Box-constrained Levenberg–Marquardt with projected steps.

use crate::error::{Error, Result};
use crate::linalg::solve;
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    pub max_iters: usize,
    /// Relative cost decrease treated as stagnation.
    pub ftol: f64,
    /// Step length, relative to the parameter norm, treated as stagnation.
    pub xtol: f64,
    pub damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            ftol: 1e-15,
            xtol: 1e-13,
            damping: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmOutcome<T> {
    pub x: Vec<T>,
    pub cost: T,
    pub iters: usize,
    pub converged: bool,
}

/// Minimizes `½‖r(x)‖²` within `[lo, hi]`. `model(x, r, jac)` fills the `m`
/// residuals and, when asked, the row-major `m×n` Jacobian.
pub fn levenberg_marquardt<T, F>(model: F, x0: &[T], lo: &[T], hi: &[T], m: usize, cfg: &LmConfig) -> Result<LmOutcome<T>>
where
    T: Real,
    F: Fn(&[T], &mut [T], Option<&mut [T]>),
{
    let n = x0.len();
    if lo.len() != n || hi.len() != n {
        return Err(Error::Dimension("LM bounds do not match parameter count".into()));
    }
    let clamp = |x: &mut [T]| {
        for i in 0..n {
            x[i] = x[i].max(lo[i]).min(hi[i]);
        }
    };
    let cost_of = |r: &[T]| r.iter().map(|&v| v * v).sum::<T>() * T::of(0.5);

    let mut x = x0.to_vec();
    clamp(&mut x);
    let mut r = vec![T::zero(); m];
    let mut jac = vec![T::zero(); m * n];
    model(&x, &mut r, Some(&mut jac));
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(Error::Numerical("LM initial cost is not finite".into()));
    }
    let mut mu = T::of(cfg.damping);
    let mut trial_r = vec![T::zero(); m];
    for it in 0..cfg.max_iters {
        if cost == T::zero() {
            return Ok(LmOutcome { x, cost, iters: it, converged: true });
        }
        let mut jtj = vec![T::zero(); n * n];
        let mut g = vec![T::zero(); n];
        for k in 0..m {
            let row = &jac[k * n..(k + 1) * n];
            for i in 0..n {
                g[i] += row[i] * r[k];
                for j in 0..n {
                    jtj[i * n + j] += row[i] * row[j];
                }
            }
        }
        let dmax = (0..n).fold(T::zero(), |a, i| a.max(jtj[i * n + i]));
        let floor = dmax * T::of(1e-12) + T::min_positive_value();
        let mut accepted = false;
        while mu < T::of(1e16) {
            let mut a = jtj.clone();
            for i in 0..n {
                a[i * n + i] += mu * jtj[i * n + i].max(floor);
            }
            let neg: Vec<T> = g.iter().map(|&v| -v).collect();
            let Ok(delta) = solve(&a, &neg, n) else {
                mu *= T::of(10.0);
                continue;
            };
            let mut trial: Vec<T> = x.iter().zip(&delta).map(|(&a, &d)| a + d).collect();
            clamp(&mut trial);
            model(&trial, &mut trial_r, None);
            let tc = cost_of(&trial_r);
            if tc.is_finite() && tc < cost {
                let step = trial.iter().zip(&x).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
                let xn = x.iter().map(|&v| v * v).sum::<T>().sqrt();
                let small_f = (cost - tc) <= T::of(cfg.ftol) * cost;
                let small_x = step <= T::of(cfg.xtol) * (xn + T::of(cfg.xtol));
                x = trial;
                cost = tc;
                mu = (mu / T::of(3.0)).max(T::of(1e-12));
                model(&x, &mut r, Some(&mut jac));
                if small_f || small_x {
                    return Ok(LmOutcome { x, cost, iters: it + 1, converged: true });
                }
                accepted = true;
                break;
            }
            mu *= T::of(4.0);
        }
        if !accepted {
            // no descent direction left within the box
            return Ok(LmOutcome { x, cost, iters: it + 1, converged: true });
        }
    }
    Ok(LmOutcome { x, cost, iters: cfg.max_iters, converged: false })
}
