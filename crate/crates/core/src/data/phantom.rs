//! Synthetic phantoms: Voronoi regions with smoothly modulated parameters,
//! forward-simulated and corrupted by Rician noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::volume::Volume;
use crate::error::{Error, Result};
use crate::forward::{ivim_signal, noddi_signal, rician_with, AcquisitionScheme, IvimParams, NoddiParams, SphericalQuadrature};
use crate::net::ModelKind;

/// How parameter maps are laid out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub regions: usize,
    /// Per free parameter `(lo, hi)`; IVIM: f, D, D*; NODDI: v_ic, v_iso, κ.
    pub boxes: Vec<(f64, f64)>,
    /// Amplitude of the in-region sinusoidal modulation, as a fraction of the box.
    pub modulation: f64,
    /// Parameters at these positions are spread log-uniformly.
    pub log_scale: Vec<bool>,
}

impl FieldSpec {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Ivim => Self {
                regions: 12,
                boxes: vec![(0.05, 0.45), (0.5e-3, 2.5e-3), (10e-3, 80e-3)],
                modulation: 0.15,
                log_scale: vec![false, false, true],
            },
            ModelKind::Noddi => Self {
                regions: 12,
                boxes: vec![(0.2, 0.85), (0.0, 0.3), (0.5, 32.0)],
                modulation: 0.15,
                log_scale: vec![false, false, true],
            },
        }
    }

    fn validate(&self, kind: ModelKind) -> Result<()> {
        if self.regions == 0 {
            return Err(Error::Config("phantom needs at least one region".into()));
        }
        if self.boxes.len() != 3 || self.log_scale.len() != 3 {
            return Err(Error::Config("phantom field needs three parameter boxes".into()));
        }
        if !(0.0..=1.0).contains(&self.modulation) {
            return Err(Error::Config(format!("modulation {} outside [0, 1]", self.modulation)));
        }
        let valid: [(f64, f64); 3] = match kind {
            ModelKind::Ivim => [(0.0, 1.0), (0.0, f64::INFINITY), (0.0, f64::INFINITY)],
            ModelKind::Noddi => [(0.0, 1.0), (0.0, 1.0), (0.0, f64::INFINITY)],
        };
        for (i, (&(lo, hi), &(vlo, vhi))) in self.boxes.iter().zip(&valid).enumerate() {
            let name = kind.outputs()[i];
            if !(lo <= hi && lo >= vlo && hi <= vhi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Parameter(format!("{name} box [{lo}, {hi}] outside [{vlo}, {vhi}]")));
            }
            if self.log_scale[i] && lo <= 0.0 {
                return Err(Error::Parameter(format!("{name} box must be positive for log spacing")));
            }
        }
        if kind == ModelKind::Ivim && self.boxes[1].1 >= self.boxes[2].0 {
            return Err(Error::Parameter("IVIM phantom needs every D below every D*".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: ModelKind,
    /// `H×W×S`
    pub dims: [usize; 3],
    /// `None` is noiseless.
    pub snr: Option<f64>,
    pub seed: u64,
    pub s0: f64,
    pub field: FieldSpec,
}

impl PhantomSpec {
    pub fn new(kind: ModelKind, dims: [usize; 3], snr: Option<f64>, seed: u64) -> Self {
        Self {
            kind,
            dims,
            snr,
            seed,
            s0: 1000.0,
            field: FieldSpec::default_for(kind),
        }
    }
}

/// Names of the truth-map channels.
pub fn truth_channels(kind: ModelKind) -> Vec<String> {
    let names: &[&str] = match kind {
        ModelKind::Ivim => &["f", "D", "Dstar", "S0"],
        ModelKind::Noddi => &["v_ic", "v_iso", "OD", "kappa", "mu_x", "mu_y", "mu_z"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub signal: Volume,
    /// Columns as [`truth_channels`]; the first three are the network targets.
    pub truth: Volume,
    pub region: Vec<usize>,
}

struct Region {
    centre: [f64; 3],
    base: [f64; 3],
    /// Per parameter: spatial frequency (cycles per volume) along h and w, and phase.
    wave: [[f64; 3]; 3],
    mu: [f64; 3],
}

fn random_axis<R: Rng>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Deterministic stream for voxel `v` of a phantom seeded by `seed`.
fn voxel_rng(seed: u64, v: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(v as u64 + 1);
    r
}

/// Simulates the phantom on `scheme`. Output depends only on the spec and the
/// scheme, never on thread count.
pub fn make_phantom(spec: &PhantomSpec, scheme: &AcquisitionScheme<f64>, quad: &SphericalQuadrature<f64>) -> Result<Phantom> {
    spec.field.validate(spec.kind)?;
    if let Some(snr) = spec.snr {
        if !(snr > 0.0) {
            return Err(Error::Parameter(format!("SNR must be positive, got {snr}")));
        }
    }
    if !(spec.s0 > 0.0) {
        return Err(Error::Parameter(format!("S0 must be positive, got {}", spec.s0)));
    }
    let [h, w, s] = spec.dims;
    if h * w * s == 0 {
        return Err(Error::Config(format!("empty phantom dims {:?}", spec.dims)));
    }
    let mut rng = voxel_rng(spec.seed, usize::MAX - 1);
    let regions: Vec<Region> = (0..spec.field.regions)
        .map(|_| Region {
            centre: [rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64), rng.gen_range(0.0..s as f64)],
            base: [rng.gen(), rng.gen(), rng.gen()],
            wave: std::array::from_fn(|_| [rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5), rng.gen_range(0.0..std::f64::consts::TAU)]),
            mu: random_axis(&mut rng),
        })
        .collect();
    let field = &spec.field;
    let n = h * w * s;
    let dims4 = [h, w, s, 1];
    let idx = Volume::zeros(dims4);
    let n_truth = truth_channels(spec.kind).len();
    let per_voxel: Vec<Result<(usize, Vec<f64>, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|v| {
            let [vh, vw, vs] = idx.coords(v);
            let pos = [vh as f64 + 0.5, vw as f64 + 0.5, vs as f64 + 0.5];
            let (ri, reg) = regions
                .iter()
                .enumerate()
                .min_by(|a, b| dist2(a.1.centre, pos).partial_cmp(&dist2(b.1.centre, pos)).unwrap())
                .expect("at least one region");
            let mut params = [0.0; 3];
            for k in 0..3 {
                let [fh, fw, ph] = reg.wave[k];
                let arg = std::f64::consts::TAU * (fh * pos[0] / h as f64 + fw * pos[1] / w as f64) + ph;
                let u = (reg.base[k] + field.modulation * arg.sin()).clamp(0.0, 1.0);
                let (lo, hi) = field.boxes[k];
                params[k] = if field.log_scale[k] {
                    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + u * (hi - lo)
                };
            }
            let (clean, truth) = match spec.kind {
                ModelKind::Ivim => {
                    let p = IvimParams::new(params[0], params[1], params[2], spec.s0);
                    (ivim_signal(&p, scheme), vec![params[0], params[1], params[2], spec.s0])
                }
                ModelKind::Noddi => {
                    let p = NoddiParams::new(params[0], params[1], params[2], reg.mu);
                    let sig: Vec<f64> = noddi_signal(&p, scheme, quad)?.into_iter().map(|x| x * spec.s0).collect();
                    let mut t = vec![params[0], params[1], p.od(), params[2]];
                    t.extend(reg.mu);
                    (sig, t)
                }
            };
            let noisy = match spec.snr {
                Some(snr) => rician_with(&clean, spec.s0 / snr, &mut voxel_rng(spec.seed, v))?,
                None => clean,
            };
            Ok((ri, noisy, truth))
        })
        .collect();
    let c = scheme.len();
    let mut signal = Volume::zeros([h, w, s, c]);
    let mut truth = Volume::zeros([h, w, s, n_truth]);
    let mut region = Vec::with_capacity(n);
    for (v, r) in per_voxel.into_iter().enumerate() {
        let (ri, y, t) = r?;
        signal.voxel_mut(v).copy_from_slice(&y);
        truth.voxel_mut(v).copy_from_slice(&t);
        region.push(ri);
    }
    Ok(Phantom { signal, truth, region })
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::IVIM_BVALUES;

    fn ivim_scheme() -> AcquisitionScheme<f64> {
        AcquisitionScheme::from_bvalues(&IVIM_BVALUES).unwrap()
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = PhantomSpec::new(ModelKind::Ivim, [6, 5, 2], Some(30.0), 7);
        let q = SphericalQuadrature::default();
        let a = make_phantom(&spec, &ivim_scheme(), &q).unwrap();
        let b = make_phantom(&spec, &ivim_scheme(), &q).unwrap();
        assert_eq!(a, b);
        let other = make_phantom(&PhantomSpec { seed: 8, ..spec }, &ivim_scheme(), &q).unwrap();
        assert_ne!(a.signal, other.signal);
    }

    #[test]
    fn truth_stays_in_box_and_noiseless_matches_model() {
        let spec = PhantomSpec::new(ModelKind::Ivim, [8, 8, 1], None, 1);
        let q = SphericalQuadrature::default();
        let ph = make_phantom(&spec, &ivim_scheme(), &q).unwrap();
        for v in 0..ph.truth.n_voxels() {
            let t = ph.truth.voxel(v);
            for (k, &(lo, hi)) in spec.field.boxes.iter().enumerate() {
                assert!(t[k] >= lo * (1.0 - 1e-12) && t[k] <= hi * (1.0 + 1e-12));
            }
            let p = IvimParams::new(t[0], t[1], t[2], t[3]);
            assert_eq!(ph.signal.voxel(v), ivim_signal(&p, &ivim_scheme()).as_slice());
        }
    }

    #[test]
    fn out_of_box_field_is_rejected() {
        let mut spec = PhantomSpec::new(ModelKind::Ivim, [2, 2, 1], None, 1);
        spec.field.boxes[0] = (0.1, 1.2);
        let q = SphericalQuadrature::default();
        assert!(matches!(make_phantom(&spec, &ivim_scheme(), &q), Err(Error::Parameter(_))));
    }

    #[test]
    fn regions_partition_the_volume() {
        let spec = PhantomSpec::new(ModelKind::Ivim, [10, 10, 1], None, 3);
        let q = SphericalQuadrature::default();
        let ph = make_phantom(&spec, &ivim_scheme(), &q).unwrap();
        let distinct: std::collections::BTreeSet<_> = ph.region.iter().collect();
        assert!(distinct.len() > 1);
    }
}
