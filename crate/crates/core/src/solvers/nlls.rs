use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmConfig};
use crate::dict::logspace;
use crate::error::{Error, Result};
use crate::forward::{AcquisitionScheme, IvimParams};
use crate::linalg::lstsq;
use crate::real::Real;

/// Parameter box used by the least-squares fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvimBounds {
    pub f: (f64, f64),
    pub d: (f64, f64),
    pub dstar: (f64, f64),
}

impl Default for IvimBounds {
    fn default() -> Self {
        Self {
            f: (0.0, 1.0),
            d: (0.0, 5e-3),
            dstar: (1e-3, 0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllsConfig {
    pub b_threshold: f64,
    /// Final joint refinement of all four parameters from the two-step result.
    pub joint_refine: bool,
    pub bounds: IvimBounds,
}

impl Default for NllsConfig {
    fn default() -> Self {
        Self {
            b_threshold: 200.0,
            joint_refine: true,
            bounds: IvimBounds::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NllsFit<T> {
    pub params: IvimParams<T>,
    pub converged: bool,
}

// internal units keep the parameters O(1): S0/ref, f, D·1e3, D*·1e2
const D_UNIT: f64 = 1e3;
const DS_UNIT: f64 = 1e2;

/// Segmented IVIM fit: log-linear `D` from the high b-values, then
/// Levenberg–Marquardt on `(f, D*)` with `D` held fixed.
pub fn nlls_ivim_two_step<T: Real>(y: &[T], scheme: &AcquisitionScheme<T>, cfg: &NllsConfig) -> Result<NllsFit<T>> {
    let bvals = scheme.bvalues();
    if y.len() != bvals.len() {
        return Err(Error::Dimension(format!("{} samples for {} b-values", y.len(), bvals.len())));
    }
    let thr = T::of(cfg.b_threshold);
    let high: Vec<usize> = (0..y.len()).filter(|&i| bvals[i] >= thr).collect();
    let low = y.len() - high.len();
    if high.len() < 2 || low < 2 {
        return Err(Error::Config(format!(
            "two-step fit needs ≥ 2 b-values on each side of {}; got {} below and {} above",
            cfg.b_threshold,
            low,
            high.len()
        )));
    }
    let sref = y.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    if !(sref > T::zero()) || !sref.is_finite() {
        return Err(Error::Data("signal is zero or not finite".into()));
    }
    let yn: Vec<T> = y.iter().map(|&v| v / sref).collect();
    let bn = &cfg.bounds;
    let d_lo = T::of(bn.d.0 * D_UNIT);
    let d_hi = T::of(bn.d.1 * D_UNIT);
    let ds_lo = T::of(bn.dstar.0 * DS_UNIT);
    let ds_hi = T::of(bn.dstar.1 * DS_UNIT);
    let (f_lo, f_hi) = (T::of(bn.f.0), T::of(bn.f.1));
    let s_hi = T::of(1e3);

    // step 1: ln S = ln S_int − b·D on the high shells
    let floor = T::of(1e-12);
    let a: Vec<T> = high.iter().flat_map(|&i| [T::one(), -bvals[i]]).collect();
    let ly: Vec<T> = high.iter().map(|&i| yn[i].max(floor).ln()).collect();
    let c = lstsq(&a, &ly, high.len(), 2, T::zero())?;
    let s_int = c[0].exp();
    let d = (c[1] * T::of(D_UNIT)).max(d_lo).min(d_hi);

    // S0 reference: b=0 mean when available, else a linear two-compartment fit
    let b0 = scheme.b0_indices();
    let ed: Vec<T> = bvals.iter().map(|&b| (-b * d / T::of(D_UNIT)).exp()).collect();
    let mut best = (T::infinity(), T::one(), T::zero(), T::of(0.02 * DS_UNIT));
    for cand in logspace(bn.dstar.0.max(3e-3), bn.dstar.1.min(0.3), 24) {
        let ds = T::of(cand * DS_UNIT);
        let es: Vec<T> = bvals.iter().map(|&b| (-b * ds / T::of(DS_UNIT)).exp()).collect();
        let m: Vec<T> = ed.iter().zip(&es).flat_map(|(&p, &q)| [p, q]).collect();
        let Ok(ac) = lstsq(&m, &yn, yn.len(), 2, T::zero()) else { continue };
        let (pa, pc) = (ac[0].max(T::zero()), ac[1].max(T::zero()));
        let cost: T = (0..yn.len()).map(|i| (yn[i] - pa * ed[i] - pc * es[i]).powi(2)).sum();
        if cost < best.0 && pa + pc > T::zero() {
            best = (cost, pa + pc, pc / (pa + pc), ds);
        }
    }
    let s0 = if b0.is_empty() {
        best.1
    } else {
        b0.iter().map(|&i| yn[i]).sum::<T>() / T::of(b0.len() as f64)
    };
    let f0 = (T::one() - s_int / s0).max(f_lo).min(f_hi);
    let lm = LmConfig::default();
    let m = yn.len();

    // step 2: (S0, f, D*) with D fixed; S0 is held at the b=0 mean when there is one
    let fix_s0 = !b0.is_empty();
    let model2 = |p: &[T], r: &mut [T], jac: Option<&mut [T]>| {
        let (s, f, ds) = if fix_s0 { (s0, p[0], p[1]) } else { (p[0], p[1], p[2]) };
        for i in 0..m {
            let es = (-bvals[i] * ds / T::of(DS_UNIT)).exp();
            r[i] = s * ((T::one() - f) * ed[i] + f * es) - yn[i];
        }
        if let Some(j) = jac {
            let w = if fix_s0 { 2 } else { 3 };
            for i in 0..m {
                let es = (-bvals[i] * ds / T::of(DS_UNIT)).exp();
                let row = &mut j[i * w..(i + 1) * w];
                let off = if fix_s0 {
                    0
                } else {
                    row[0] = (T::one() - f) * ed[i] + f * es;
                    1
                };
                row[off] = s * (es - ed[i]);
                row[off + 1] = -s * f * es * bvals[i] / T::of(DS_UNIT);
            }
        }
    };
    let out2 = if fix_s0 {
        levenberg_marquardt(model2, &[f0, best.3], &[f_lo, ds_lo], &[f_hi, ds_hi], m, &lm)?
    } else {
        levenberg_marquardt(model2, &[s0, f0, best.3], &[T::zero(), f_lo, ds_lo], &[s_hi, f_hi, ds_hi], m, &lm)?
    };
    let (mut s, mut f, mut ds) = if fix_s0 {
        (s0, out2.x[0], out2.x[1])
    } else {
        (out2.x[0], out2.x[1], out2.x[2])
    };
    let mut d_fit = d;
    let mut converged = out2.converged;

    if cfg.joint_refine {
        let model4 = |p: &[T], r: &mut [T], jac: Option<&mut [T]>| {
            let (s, f, d, ds) = (p[0], p[1], p[2] / T::of(D_UNIT), p[3] / T::of(DS_UNIT));
            for i in 0..m {
                let (e1, e2) = ((-bvals[i] * d).exp(), (-bvals[i] * ds).exp());
                r[i] = s * ((T::one() - f) * e1 + f * e2) - yn[i];
            }
            if let Some(j) = jac {
                for i in 0..m {
                    let (e1, e2) = ((-bvals[i] * d).exp(), (-bvals[i] * ds).exp());
                    let row = &mut j[i * 4..(i + 1) * 4];
                    row[0] = (T::one() - f) * e1 + f * e2;
                    row[1] = s * (e2 - e1);
                    row[2] = -s * (T::one() - f) * e1 * bvals[i] / T::of(D_UNIT);
                    row[3] = -s * f * e2 * bvals[i] / T::of(DS_UNIT);
                }
            }
        };
        let out4 = levenberg_marquardt(
            model4,
            &[s, f, d_fit, ds],
            &[T::zero(), f_lo, d_lo, ds_lo],
            &[s_hi, f_hi, d_hi, ds_hi],
            m,
            &lm,
        )?;
        if out4.cost <= out2.cost {
            s = out4.x[0];
            f = out4.x[1];
            d_fit = out4.x[2];
            ds = out4.x[3];
            converged = out4.converged;
        }
    }
    Ok(NllsFit {
        params: IvimParams::new(f, d_fit / T::of(D_UNIT), ds / T::of(DS_UNIT), s * sref),
        converged,
    })
}
