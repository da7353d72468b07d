use serde::{Deserialize, Serialize};

use crate::dict::{linspace, logspace};
use crate::error::{Error, Result};
use crate::forward::{AcquisitionScheme, IvimParams};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_f: usize,
    pub n_d: usize,
    pub n_dstar: usize,
    /// Linear spacing.
    pub f_range: (f64, f64),
    /// Log spacing.
    pub d_range: (f64, f64),
    /// Log spacing.
    pub dstar_range: (f64, f64),
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_f: 50,
            n_d: 50,
            n_dstar: 50,
            f_range: (0.0, 1.0),
            d_range: (1e-4, 3e-3),
            dstar_range: (3e-3, 0.3),
        }
    }
}

/// Lattice and per-b exponentials for the grid posterior on one scheme.
#[derive(Clone, Debug)]
pub struct BayesGrid<T> {
    pub f: Vec<T>,
    pub d: Vec<T>,
    pub dstar: Vec<T>,
    bvals: Vec<T>,
    b0: Vec<usize>,
    // e^{−bD} per (d, b) and e^{−bD*} per (dstar, b)
    ed: Vec<T>,
    es: Vec<T>,
}

impl<T: Real> BayesGrid<T> {
    pub fn new(scheme: &AcquisitionScheme<T>, spec: &GridSpec) -> Result<Self> {
        if spec.n_f == 0 || spec.n_d == 0 || spec.n_dstar == 0 {
            return Err(Error::Config("Bayesian lattice needs at least one point per axis".into()));
        }
        let ok = spec.f_range.0 >= 0.0
            && spec.f_range.1 <= 1.0
            && spec.f_range.0 <= spec.f_range.1
            && spec.d_range.0 > 0.0
            && spec.d_range.0 <= spec.d_range.1
            && spec.dstar_range.0 > 0.0
            && spec.dstar_range.0 <= spec.dstar_range.1;
        if !ok {
            return Err(Error::Config(format!("invalid Bayesian lattice {spec:?}")));
        }
        let to_t = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        let f = to_t(linspace(spec.f_range.0, spec.f_range.1, spec.n_f));
        let d = to_t(logspace(spec.d_range.0, spec.d_range.1, spec.n_d));
        let dstar = to_t(logspace(spec.dstar_range.0, spec.dstar_range.1, spec.n_dstar));
        let bvals = scheme.bvalues().to_vec();
        let table = |g: &[T]| -> Vec<T> { g.iter().flat_map(|&v| bvals.iter().map(move |&b| (-b * v).exp())).collect() };
        Ok(Self {
            ed: table(&d),
            es: table(&dstar),
            f,
            d,
            dstar,
            b0: scheme.b0_indices(),
            bvals,
        })
    }

    /// Posterior mean of `(f, D, D*)` under a Gaussian likelihood with
    /// `σ = S0/snr` and a uniform prior on the lattice restricted to `D < D*`.
    /// `S0` is the b=0 mean when the scheme has b=0 samples; otherwise it is
    /// profiled per lattice point and `max(y)` sets the noise scale.
    pub fn posterior_mean(&self, y: &[T], snr: T) -> Result<IvimParams<T>> {
        let nb = self.bvals.len();
        if y.len() != nb {
            return Err(Error::Dimension(format!("{} samples for {nb} b-values", y.len())));
        }
        if !(snr > T::zero()) {
            return Err(Error::Parameter(format!("SNR must be positive, got {snr}")));
        }
        let fixed_s0 = if self.b0.is_empty() {
            None
        } else {
            Some(self.b0.iter().map(|&i| y[i]).sum::<T>() / T::of(self.b0.len() as f64))
        };
        let scale = fixed_s0.unwrap_or_else(|| y.iter().fold(T::zero(), |a, &v| a.max(v)));
        if !(scale > T::zero()) {
            return Err(Error::Data("signal scale is not positive".into()));
        }
        let sigma = scale / snr;
        let inv = T::one() / (T::of(2.0) * sigma * sigma);

        // log-likelihoods, then one stabilized pass for the weighted sums
        let nf = self.f.len();
        let mut logl = Vec::with_capacity(nf * self.d.len() * self.dstar.len());
        let mut s0s = Vec::with_capacity(logl.capacity());
        let mut m = vec![T::zero(); nb];
        for (id, &dv) in self.d.iter().enumerate() {
            let ed = &self.ed[id * nb..(id + 1) * nb];
            for (is, &sv) in self.dstar.iter().enumerate() {
                let es = &self.es[is * nb..(is + 1) * nb];
                for &f in &self.f {
                    if !(sv > dv) {
                        logl.push(T::neg_infinity());
                        s0s.push(T::zero());
                        continue;
                    }
                    for k in 0..nb {
                        m[k] = (T::one() - f) * ed[k] + f * es[k];
                    }
                    let s0 = match fixed_s0 {
                        Some(s) => s,
                        None => {
                            let my: T = m.iter().zip(y).map(|(&a, &b)| a * b).sum();
                            let mm: T = m.iter().map(|&a| a * a).sum();
                            (my / mm).max(T::zero())
                        }
                    };
                    let rss: T = m.iter().zip(y).map(|(&a, &b)| (b - s0 * a) * (b - s0 * a)).sum();
                    logl.push(-rss * inv);
                    s0s.push(s0);
                }
            }
        }
        let peak = logl.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let (mut z, mut ef, mut edd, mut eds, mut es0) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
        let mut idx = 0;
        for &dv in &self.d {
            for &sv in &self.dstar {
                for &f in &self.f {
                    let w = (logl[idx] - peak).exp();
                    z += w;
                    ef += w * f;
                    edd += w * dv;
                    eds += w * sv;
                    es0 += w * s0s[idx];
                    idx += 1;
                }
            }
        }
        Ok(IvimParams::new(ef / z, edd / z, eds / z, es0 / z))
    }
}

pub fn bayesian_ivim_grid<T: Real>(y: &[T], scheme: &AcquisitionScheme<T>, snr: T, spec: &GridSpec) -> Result<IvimParams<T>> {
    BayesGrid::new(scheme, spec)?.posterior_mean(y, snr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{ivim_signal, IVIM_BVALUES};

    fn small() -> GridSpec {
        GridSpec {
            n_f: 11,
            n_d: 9,
            n_dstar: 9,
            ..Default::default()
        }
    }

    #[test]
    fn collapses_to_lattice_point() {
        let s = AcquisitionScheme::<f64>::from_bvalues(&IVIM_BVALUES).unwrap();
        let g = BayesGrid::new(&s, &small()).unwrap();
        let truth = IvimParams::new(g.f[3], g.d[4], g.dstar[6], 1.0);
        let p = g.posterior_mean(&ivim_signal(&truth, &s), 1e8).unwrap();
        assert!((p.f - truth.f).abs() < 1e-12);
        assert!((p.d - truth.d).abs() < 1e-15 && (p.dstar - truth.dstar).abs() < 1e-15);
    }

    #[test]
    fn midpoint_is_symmetric() {
        let s = AcquisitionScheme::<f64>::from_bvalues(&IVIM_BVALUES).unwrap();
        let spec = GridSpec {
            n_f: 2,
            n_d: 1,
            n_dstar: 1,
            f_range: (0.2, 0.4),
            d_range: (1e-3, 1e-3),
            dstar_range: (40e-3, 40e-3),
        };
        let y = ivim_signal(&IvimParams::new(0.3, 1e-3, 40e-3, 1.0), &s);
        let p = bayesian_ivim_grid(&y, &s, 50.0, &spec).unwrap();
        assert!((p.f - 0.3).abs() < 1e-12, "{}", p.f);
    }

    #[test]
    fn scale_equivariant_without_b0() {
        let s = AcquisitionScheme::<f64>::from_bvalues(&[20.0, 50.0, 150.0, 300.0, 500.0]).unwrap();
        let y = ivim_signal(&IvimParams::new(0.25, 1.3e-3, 25e-3, 1.0), &s);
        let a = bayesian_ivim_grid(&y, &s, 30.0, &small()).unwrap();
        let yc: Vec<f64> = y.iter().map(|v| v * 4.2).collect();
        let b = bayesian_ivim_grid(&yc, &s, 30.0, &small()).unwrap();
        assert!((a.f - b.f).abs() < 1e-12 && (a.d / b.d - 1.0).abs() < 1e-12);
        assert!((b.s0 / a.s0 - 4.2).abs() < 1e-12);
    }
}
