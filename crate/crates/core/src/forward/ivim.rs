use serde::{Deserialize, Serialize};

use super::AcquisitionScheme;
use crate::error::{Error, Result};
use crate::real::Real;

/// Bi-exponential IVIM parameters. Diffusivities in mm²/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvimParams<T> {
    pub f: T,
    pub d: T,
    pub dstar: T,
    pub s0: T,
}

impl<T: Real> IvimParams<T> {
    pub fn new(f: T, d: T, dstar: T, s0: T) -> Self {
        Self { f, d, dstar, s0 }
    }

    /// Checks the simulation box: `0 ≤ f ≤ 1`, `0 < D < D*`, `S0 > 0`.
    pub fn validate(&self) -> Result<()> {
        let ok = self.f >= T::zero()
            && self.f <= T::one()
            && self.d > T::zero()
            && self.dstar > self.d
            && self.s0 > T::zero()
            && self.dstar.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid IVIM parameters {self:?}")))
        }
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.f, self.d, self.dstar]
    }
}

/// `S0·[(1−f)·e^{−bD} + f·e^{−bD*}]` per measurement.
pub fn ivim_signal<T: Real>(p: &IvimParams<T>, scheme: &AcquisitionScheme<T>) -> Vec<T> {
    scheme
        .bvalues()
        .iter()
        .map(|&b| ivim_at(p, b))
        .collect()
}

#[inline]
pub fn ivim_at<T: Real>(p: &IvimParams<T>, b: T) -> T {
    p.s0 * ((T::one() - p.f) * (-b * p.d).exp() + p.f * (-b * p.dstar).exp())
}
