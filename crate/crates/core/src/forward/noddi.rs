use serde::{Deserialize, Serialize};

use super::quadrature::SphericalQuadrature;
use super::AcquisitionScheme;
use crate::error::{Error, Result};
use crate::real::Real;

/// Intrinsic parallel diffusivity, mm²/s.
pub const D_PAR: f64 = 1.7e-3;
/// Free-water diffusivity, mm²/s.
pub const D_ISO: f64 = 3.0e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoddiParams<T> {
    pub v_ic: T,
    pub v_iso: T,
    pub kappa: T,
    pub mu: [T; 3],
    pub d_par: T,
    pub d_iso: T,
}

impl<T: Real> NoddiParams<T> {
    /// Parameters with the default diffusivities.
    pub fn new(v_ic: T, v_iso: T, kappa: T, mu: [T; 3]) -> Self {
        Self {
            v_ic,
            v_iso,
            kappa,
            mu,
            d_par: T::of(D_PAR),
            d_iso: T::of(D_ISO),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: T| x >= T::zero() && x <= T::one();
        let norm = (self.mu[0] * self.mu[0] + self.mu[1] * self.mu[1] + self.mu[2] * self.mu[2]).sqrt();
        let ok = unit(self.v_ic)
            && unit(self.v_iso)
            && self.kappa >= T::zero()
            && !self.kappa.is_nan()
            && (norm - T::one()).abs() <= T::of(1e-9)
            && self.d_par > T::zero()
            && self.d_iso > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid NODDI parameters {self:?}")))
        }
    }

    pub fn od(&self) -> T {
        orientation_dispersion(self.kappa)
    }
}

/// `OD = (2/π)·atan(1/κ)`, with OD(0) = 1.
pub fn orientation_dispersion<T: Real>(kappa: T) -> T {
    if kappa <= T::zero() {
        T::one()
    } else {
        T::FRAC_2_PI() * kappa.recip().atan()
    }
}

/// Inverse of [`orientation_dispersion`] on (0, 1].
pub fn kappa_from_od<T: Real>(od: T) -> T {
    (od * T::FRAC_PI_2()).tan().recip()
}

/// Watson density sampled on a quadrature in the μ-aligned frame, with its
/// scatter matrix `⟨n nᵀ⟩`.
pub struct Watson<'q, T> {
    quad: &'q SphericalQuadrature<T>,
    rho: Vec<T>,
    scatter: [[T; 3]; 3],
}

impl<'q, T: Real> Watson<'q, T> {
    /// Self-normalized weights `ρ_k ∝ w_k·e^{κ(t_k² − 1)}`; the shift by −κ
    /// keeps every exponent ≤ 0, so κ = 10⁶ is safe.
    pub fn new(kappa: T, quad: &'q SphericalQuadrature<T>) -> Self {
        let mut rho: Vec<T> = quad
            .points()
            .iter()
            .zip(quad.weights())
            .map(|(p, &w)| w * (kappa * (p[2] * p[2] - T::one())).exp())
            .collect();
        let total: T = rho.iter().copied().sum();
        for r in rho.iter_mut() {
            *r /= total;
        }
        let mut scatter = [[T::zero(); 3]; 3];
        for (p, &r) in quad.points().iter().zip(&rho) {
            if r == T::zero() {
                continue;
            }
            for i in 0..3 {
                for j in 0..3 {
                    scatter[i][j] += r * p[i] * p[j];
                }
            }
        }
        Self { quad, rho, scatter }
    }

    /// Intra-cellular stick signal `∫ W(n)·e^{−b·d·(q·n)²} dn` for `q` in the local frame.
    pub fn stick(&self, b: T, d: T, q: [T; 3]) -> T {
        let bd = b * d;
        let mut s = T::zero();
        for (p, &r) in self.quad.points().iter().zip(&self.rho) {
            if r == T::zero() {
                continue;
            }
            let c = q[0] * p[0] + q[1] * p[1] + q[2] * p[2];
            s += r * (-bd * c * c).exp();
        }
        s
    }

    /// Extra-cellular zeppelin signal `exp(−b·qᵀ⟨D(n)⟩q)`, using linearity of the tensor in `n nᵀ`.
    pub fn zeppelin(&self, b: T, d_par: T, d_perp: T, q: [T; 3]) -> T {
        let mut qsq = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                qsq += q[i] * self.scatter[i][j] * q[j];
            }
        }
        (-b * (d_perp + (d_par - d_perp) * qsq)).exp()
    }

    pub fn scatter(&self) -> [[T; 3]; 3] {
        self.scatter
    }

    /// Anisotropic (stick + zeppelin) signal of a μ-aligned voxel for gradient
    /// `q` with `(q·μ)² = u`.
    pub fn axial(&self, v_ic: T, d_par: T, b: T, u: T) -> T {
        if b == T::zero() {
            return T::one();
        }
        let u = u.max(T::zero()).min(T::one());
        let q = [(T::one() - u).sqrt(), T::zero(), u.sqrt()];
        let d_perp = d_par * (T::one() - v_ic);
        v_ic * self.stick(b, d_par, q) + (T::one() - v_ic) * self.zeppelin(b, d_par, d_perp, q)
    }
}

/// Orthonormal frame `[e1, e2, μ]` (rows) with μ as the third axis.
pub fn frame<T: Real>(mu: [T; 3]) -> [[T; 3]; 3] {
    let ax = (0..3)
        .min_by(|&i, &j| mu[i].abs().partial_cmp(&mu[j].abs()).unwrap())
        .unwrap();
    let mut a = [T::zero(); 3];
    a[ax] = T::one();
    let dot = a[0] * mu[0] + a[1] * mu[1] + a[2] * mu[2];
    let mut e1 = [a[0] - dot * mu[0], a[1] - dot * mu[1], a[2] - dot * mu[2]];
    let n = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1 = e1.map(|v| v / n);
    let e2 = cross(mu, e1);
    [e1, e2, mu]
}

pub fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn to_local<T: Real>(f: &[[T; 3]; 3], q: [T; 3]) -> [T; 3] {
    f.map(|e| e[0] * q[0] + e[1] * q[1] + e[2] * q[2])
}

/// Three-compartment NODDI signal normalized to the unweighted signal.
pub fn noddi_signal<T: Real>(
    p: &NoddiParams<T>,
    scheme: &AcquisitionScheme<T>,
    quad: &SphericalQuadrature<T>,
) -> Result<Vec<T>> {
    quad.validate()?;
    p.validate()?;
    let w = Watson::new(p.kappa, quad);
    let f = frame(p.mu);
    let d_perp = p.d_par * (T::one() - p.v_ic);
    Ok(scheme
        .bvalues()
        .iter()
        .zip(scheme.directions())
        .map(|(&b, &dir)| {
            if b == T::zero() {
                return T::one();
            }
            let q = to_local(&f, dir);
            let a_ic = w.stick(b, p.d_par, q);
            let a_ec = w.zeppelin(b, p.d_par, d_perp, q);
            let a_iso = (-b * p.d_iso).exp();
            (T::one() - p.v_iso) * (p.v_ic * a_ic + (T::one() - p.v_ic) * a_ec) + p.v_iso * a_iso
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme(b: f64, dirs: &[[f64; 3]]) -> AcquisitionScheme<f64> {
        AcquisitionScheme::new(vec![b; dirs.len()], dirs.to_vec()).unwrap()
    }

    #[test]
    fn pure_csf() {
        let q = SphericalQuadrature::default();
        let p = NoddiParams::new(0.4, 1.0, 2.0, [0.0, 0.0, 1.0]);
        let s = noddi_signal(&p, &scheme(1000.0, &[[1.0, 0.0, 0.0]]), &q).unwrap();
        assert!((s[0] - (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn stick_limit() {
        let q = SphericalQuadrature::default();
        let p = NoddiParams::new(1.0, 0.0, 1e6, [0.0, 0.0, 1.0]);
        let s = noddi_signal(&p, &scheme(1000.0, &[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]), &q).unwrap();
        assert!((s[0] - 0.18268352405273466).abs() < 1e-3);
        assert!((s[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn isotropic_watson_is_spherical_mean() {
        let q = SphericalQuadrature::default();
        let p = NoddiParams::new(1.0, 0.0, 0.0, [0.0, 0.0, 1.0]);
        let dirs = [[1.0, 0.0, 0.0], [0.0, 0.6, 0.8], [0.0, 0.0, 1.0]];
        let s = noddi_signal(&p, &scheme(1000.0, &dirs), &q).unwrap();
        for v in s {
            assert!((v - 0.6353906904021527).abs() < 1e-12);
        }
    }

    #[test]
    fn od_values() {
        assert_eq!(orientation_dispersion(0.0f64), 1.0);
        assert!((orientation_dispersion(1.0f64) - 0.5).abs() < 1e-15);
        assert!(orientation_dispersion(1e12f64) < 1e-11);
        assert!((kappa_from_od(0.5f64) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frame_is_orthonormal() {
        let mu = [0.48, 0.6, 0.64];
        let f = frame(mu);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| f[i][k] * f[j][k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }
}
