use crate::error::{Error, Result};
use crate::real::Real;

/// Product rule on the unit sphere in a frame whose z-axis is the Watson mean
/// direction: Gauss–Lobatto–Legendre in `t = cos θ` times the trapezoid rule in φ.
///
/// The Lobatto nodes include both poles, so a fully concentrated Watson
/// density (κ → ∞) is integrated exactly.
#[derive(Clone, Debug)]
pub struct SphericalQuadrature<T> {
    points: Vec<[T; 3]>,
    weights: Vec<T>,
}

pub const DEFAULT_N_T: usize = 64;
pub const DEFAULT_N_PHI: usize = 32;

impl<T: Real> Default for SphericalQuadrature<T> {
    fn default() -> Self {
        Self::product(DEFAULT_N_T, DEFAULT_N_PHI).expect("default quadrature is valid")
    }
}

impl<T: Real> SphericalQuadrature<T> {
    pub fn product(n_t: usize, n_phi: usize) -> Result<Self> {
        if n_t < 3 || n_phi < 4 {
            return Err(Error::Config(format!("quadrature {n_t}×{n_phi} is too coarse")));
        }
        let (nodes, wt) = gauss_lobatto(n_t);
        let dphi = std::f64::consts::TAU / n_phi as f64;
        let mut points = Vec::with_capacity(n_t * n_phi);
        let mut weights = Vec::with_capacity(n_t * n_phi);
        for (&t, &w) in nodes.iter().zip(&wt) {
            if (t.abs() - 1.0).abs() < 1e-15 {
                points.push([0.0, 0.0, t.signum()]);
                weights.push(w * std::f64::consts::TAU);
                continue;
            }
            let s = (1.0 - t * t).sqrt();
            for j in 0..n_phi {
                let phi = dphi * j as f64;
                points.push([s * phi.cos(), s * phi.sin(), t]);
                weights.push(w * dphi);
            }
        }
        Self::from_parts(
            points.into_iter().map(|p| p.map(T::of)).collect(),
            weights.into_iter().map(T::of).collect(),
        )
    }

    /// Arbitrary rule; weights must sum to 4π within 1e-8.
    pub fn from_parts(points: Vec<[T; 3]>, weights: Vec<T>) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(Error::Config("quadrature points and weights differ in length".into()));
        }
        let q = Self { points, weights };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.weights.iter().map(|w| w.as_f64()).sum();
        let four_pi = 4.0 * std::f64::consts::PI;
        if (total - four_pi).abs() > 1e-8 {
            return Err(Error::Config(format!(
                "quadrature weights sum to {total}, expected 4π"
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> &[[T; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss–Lobatto–Legendre nodes (ascending) and weights on [−1, 1].
pub fn gauss_lobatto(n: usize) -> (Vec<f64>, Vec<f64>) {
    let deg = n - 1;
    let mut x: Vec<f64> = (0..n)
        .map(|i| -(std::f64::consts::PI * i as f64 / deg as f64).cos())
        .collect();
    let mut pn = vec![0.0; n];
    for _ in 0..100 {
        let mut delta: f64 = 0.0;
        for (i, xi) in x.iter_mut().enumerate() {
            let (p_prev, p) = legendre_pair(*xi, deg);
            pn[i] = p;
            if i == 0 || i == deg {
                continue;
            }
            let step = (*xi * p - p_prev) / (n as f64 * p);
            *xi -= step;
            delta = delta.max(step.abs());
        }
        if delta < 1e-16 {
            break;
        }
    }
    for (i, xi) in x.iter().enumerate() {
        pn[i] = legendre_pair(*xi, deg).1;
    }
    let w = pn
        .iter()
        .map(|p| 2.0 / ((deg * n) as f64 * p * p))
        .collect();
    (x, w)
}

/// `(P_{n−1}(x), P_n(x))`
fn legendre_pair(x: f64, n: usize) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p0, p1)
}
