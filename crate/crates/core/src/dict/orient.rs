//! Per-voxel fibre orientation and the rotation-normalized signal layout the
//! network and the fixed NODDI dictionary operate on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::AcquisitionScheme;
use crate::linalg::{lstsq, sym_eig3};
use crate::real::Real;

/// Shell used for the orientation estimate: the one closest to this b.
pub const ORIENTATION_B: f64 = 1000.0;

/// Principal eigenvector of a log-linear diffusion-tensor fit on the shell
/// nearest b = 1000. `y` is normalized to its unweighted signal when the scheme
/// has no b=0 measurement.
pub fn principal_direction<T: Real>(y: &[T], scheme: &AcquisitionScheme<T>) -> Result<[T; 3]> {
    if y.len() != scheme.len() {
        return Err(Error::Dimension(format!("{} samples for {} measurements", y.len(), scheme.len())));
    }
    let shells = scheme.shells();
    let shell = shells
        .iter()
        .min_by(|a, b| {
            let da = (a.b - T::of(ORIENTATION_B)).abs();
            let db = (b.b - T::of(ORIENTATION_B)).abs();
            da.partial_cmp(&db).unwrap()
        })
        .ok_or_else(|| Error::Config("no diffusion-weighted shell".into()))?;
    if shell.indices.len() < 6 {
        return Err(Error::Config(format!(
            "orientation fit needs ≥ 6 directions, shell b={} has {}",
            shell.b,
            shell.indices.len()
        )));
    }
    let s0 = b0_mean(y, scheme).unwrap_or(T::one());
    let floor = T::of(1e-6);
    let mut a = Vec::with_capacity(shell.indices.len() * 6);
    let mut rhs = Vec::with_capacity(shell.indices.len());
    for &i in &shell.indices {
        let g = scheme.directions()[i];
        let b = scheme.bvalues()[i];
        let two = T::of(2.0);
        a.extend_from_slice(&[
            g[0] * g[0],
            g[1] * g[1],
            g[2] * g[2],
            two * g[0] * g[1],
            two * g[0] * g[2],
            two * g[1] * g[2],
        ]);
        rhs.push(-((y[i] / s0).max(floor)).ln() / b);
    }
    let d = lstsq(&a, &rhs, shell.indices.len(), 6, T::zero())?;
    let tensor = [[d[0], d[3], d[4]], [d[3], d[1], d[5]], [d[4], d[5], d[2]]];
    let (_, vecs) = sym_eig3(tensor);
    let mut v = vecs[0];
    // canonical sign: first nonzero component positive
    if let Some(&c) = v.iter().find(|c| c.abs() > T::of(1e-12)) {
        if c < T::zero() {
            v = v.map(|x| -x);
        }
    }
    Ok(v)
}

/// Mean of the unweighted measurements, if any.
pub fn b0_mean<T: Real>(y: &[T], scheme: &AcquisitionScheme<T>) -> Option<T> {
    let idx = scheme.b0_indices();
    if idx.is_empty() {
        return None;
    }
    Some(idx.iter().map(|&i| y[i]).sum::<T>() / T::of(idx.len() as f64))
}

/// Fixed measurement layout in the fibre frame: one unweighted channel, then for
/// each shell the axially symmetric part of the signal sampled at fixed
/// `u = (q·μ)²` nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalLayout {
    pub shells: Vec<f64>,
    pub nodes: Vec<f64>,
    /// Polynomial degree in `u` of the per-shell fit.
    pub degree: usize,
    pub ridge: f64,
}

impl CanonicalLayout {
    pub fn for_scheme<T: Real>(scheme: &AcquisitionScheme<T>, n_nodes: usize, degree: usize) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::Config("canonical layout needs ≥ 2 nodes per shell".into()));
        }
        let shells: Vec<f64> = scheme.shells().iter().map(|s| s.b.as_f64()).collect();
        if shells.is_empty() {
            return Err(Error::Config("no diffusion-weighted shells".into()));
        }
        Ok(Self {
            shells,
            nodes: (0..n_nodes).map(|i| i as f64 / (n_nodes - 1) as f64).collect(),
            degree,
            ridge: 1e-8,
        })
    }

    pub fn channels(&self) -> usize {
        1 + self.shells.len() * self.nodes.len()
    }

    /// The layout as a scheme in the frame where μ = z.
    pub fn scheme<T: Real>(&self) -> Result<AcquisitionScheme<T>> {
        let mut b = vec![T::zero()];
        let mut d = vec![[T::zero(), T::zero(), T::one()]];
        for &s in &self.shells {
            for &u in &self.nodes {
                b.push(T::of(s));
                d.push([T::of((1.0 - u).sqrt()), T::zero(), T::of(u.sqrt())]);
            }
        }
        AcquisitionScheme::new(b, d)
    }

    /// Resamples a voxel measured on `scheme` with fibre direction `mu`.
    pub fn resample<T: Real>(&self, y: &[T], scheme: &AcquisitionScheme<T>, mu: [T; 3]) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(self.channels());
        out.push(b0_mean(y, scheme).unwrap_or(T::one()));
        let shells = scheme.shells();
        if shells.len() != self.shells.len() {
            return Err(Error::Config(format!(
                "scheme has {} shells, layout expects {}",
                shells.len(),
                self.shells.len()
            )));
        }
        let p = self.degree + 1;
        for (shell, &b) in shells.iter().zip(&self.shells) {
            if (shell.b.as_f64() - b).abs() > 0.1 * b + 5.0 {
                return Err(Error::Config(format!("shell b={} does not match layout b={b}", shell.b)));
            }
            if shell.indices.len() < p {
                return Err(Error::Config(format!(
                    "shell b={b} has {} directions, degree {} fit needs {p}",
                    shell.indices.len(),
                    self.degree
                )));
            }
            let mut a = Vec::with_capacity(shell.indices.len() * p);
            let mut rhs = Vec::with_capacity(shell.indices.len());
            for &i in &shell.indices {
                let g = scheme.directions()[i];
                let c = g[0] * mu[0] + g[1] * mu[1] + g[2] * mu[2];
                let u = c * c;
                let mut pw = T::one();
                for _ in 0..p {
                    a.push(pw);
                    pw *= u;
                }
                rhs.push(y[i]);
            }
            let coef = lstsq(&a, &rhs, shell.indices.len(), p, T::of(self.ridge))?;
            for &u in &self.nodes {
                let u = T::of(u);
                let v = coef.iter().rev().fold(T::zero(), |acc, &c| acc * u + c);
                out.push(v);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{noddi_signal, NoddiParams, SphericalQuadrature};

    pub(crate) fn fibonacci_dirs(n: usize) -> Vec<[f64; 3]> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * i as f64;
                [r * t.cos(), r * t.sin(), z]
            })
            .collect()
    }

    fn scheme() -> AcquisitionScheme<f64> {
        let mut b = vec![0.0];
        let mut d = vec![[0.0, 0.0, 1.0]];
        for shell in [1000.0, 2000.0] {
            for v in fibonacci_dirs(30) {
                b.push(shell);
                d.push(v);
            }
        }
        AcquisitionScheme::new(b, d).unwrap()
    }

    #[test]
    fn direction_of_concentrated_fibres() {
        let s = scheme();
        let q = SphericalQuadrature::default();
        let mu = [0.48, 0.6, 0.64];
        let y = noddi_signal(&NoddiParams::new(0.6, 0.1, 8.0, mu), &s, &q).unwrap();
        let e = principal_direction(&y, &s).unwrap();
        let dot: f64 = (0..3).map(|i| e[i] * mu[i]).sum();
        assert!(dot.abs() > 0.999, "dot {dot}");
    }

    #[test]
    fn resampled_layout_matches_canonical_scheme() {
        let s = scheme();
        let q = SphericalQuadrature::default();
        let mu = [0.48, 0.6, 0.64];
        let p = NoddiParams::new(0.5, 0.1, 2.0, mu);
        let y = noddi_signal(&p, &s, &q).unwrap();
        let layout = CanonicalLayout::for_scheme(&s, 3, 3).unwrap();
        let r = layout.resample(&y, &s, mu).unwrap();
        let canon = layout.scheme::<f64>().unwrap();
        let truth = noddi_signal(&NoddiParams::new(0.5, 0.1, 2.0, [0.0, 0.0, 1.0]), &canon, &q).unwrap();
        assert_eq!(r.len(), layout.channels());
        for (a, b) in r.iter().zip(&truth) {
            assert!((a - b).abs() < 5e-3, "{a} vs {b}");
        }
    }
}
