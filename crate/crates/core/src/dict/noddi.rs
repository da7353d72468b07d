use serde::{Deserialize, Serialize};

use super::code::{barycenter, linspace, logspace, normalize_code, TAU};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::forward::{orientation_dispersion, AcquisitionScheme, SphericalQuadrature, Watson, D_ISO, D_PAR};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoddiDictConfig {
    pub j_vic: usize,
    pub vic_range: (f64, f64),
    pub j_kappa: usize,
    pub kappa_range: (f64, f64),
    /// Diffusivities of the isotropic atoms, mm²/s.
    pub iso: Vec<f64>,
    pub d_par: f64,
}

impl Default for NoddiDictConfig {
    fn default() -> Self {
        Self {
            j_vic: 12,
            vic_range: (0.05, 0.95),
            j_kappa: 12,
            kappa_range: (0.05, 64.0),
            iso: vec![D_ISO],
            d_par: D_PAR,
        }
    }
}

/// Chebyshev degree of the per-(κ, b) stick tables used for rotated atoms.
const CHEB_DEGREE: usize = 28;

/// `Φ = [Φ_t | Φ_i]`: anisotropic atoms over (v_ic, κ) pairs at a fixed
/// response orientation (z), then isotropic atoms.
#[derive(Clone, Debug)]
pub struct NoddiDictionary<T> {
    pub vic_grid: Vec<T>,
    pub kappa_grid: Vec<T>,
    pub iso_grid: Vec<T>,
    pub d_par: T,
    atoms: Tensor<T>,
    scheme_hash: String,
    warnings: Vec<String>,
    tables: AxialTables<T>,
}

/// Stick signal of each distinct κ as a Chebyshev series in `u = (q·μ)²`,
/// one series per distinct nonzero b of the scheme.
#[derive(Clone, Debug)]
struct AxialTables<T> {
    bvalues: Vec<T>,
    kappas: Vec<T>,
    /// `⟨t²⟩` of each κ's Watson density
    czz: Vec<T>,
    /// `[kappa][b] → coefficients`
    stick: Vec<Vec<Vec<T>>>,
}

impl<T: Real> NoddiDictionary<T> {
    pub fn build(scheme: &AcquisitionScheme<T>, cfg: &NoddiDictConfig, quad: &SphericalQuadrature<T>) -> Result<Self> {
        if cfg.j_vic == 0 || cfg.j_kappa == 0 {
            return Err(Error::Config("NODDI grids must be non-empty".into()));
        }
        let vics = linspace(cfg.vic_range.0, cfg.vic_range.1, cfg.j_vic);
        let kappas = logspace(cfg.kappa_range.0, cfg.kappa_range.1, cfg.j_kappa);
        let mut points = Vec::with_capacity(vics.len() * kappas.len());
        for &v in &vics {
            for &k in &kappas {
                points.push((T::of(v), T::of(k)));
            }
        }
        let iso = cfg.iso.iter().map(|&d| T::of(d)).collect();
        Self::from_points(scheme, &points, iso, T::of(cfg.d_par), quad)
    }

    /// Dictionary over explicit `(v_ic, κ)` atoms and isotropic diffusivities.
    pub fn from_points(
        scheme: &AcquisitionScheme<T>,
        points: &[(T, T)],
        iso_grid: Vec<T>,
        d_par: T,
        quad: &SphericalQuadrature<T>,
    ) -> Result<Self> {
        quad.validate()?;
        if points.is_empty() {
            return Err(Error::Config("NODDI dictionary needs anisotropic atoms".into()));
        }
        for &(v, k) in points {
            if !(v >= T::zero() && v <= T::one() && k >= T::zero()) {
                return Err(Error::Config(format!("invalid NODDI atom (v_ic={v}, κ={k})")));
            }
        }
        let mut warnings = Vec::new();
        if scheme.shells().len() < 2 {
            warnings.push("single-shell scheme: isotropic fraction is poorly conditioned".to_string());
        }
        let tables = AxialTables::build(scheme, points, d_par, quad);
        let n_aniso = points.len();
        let cols = n_aniso + iso_grid.len();
        let mut data = vec![T::zero(); scheme.len() * cols];
        // exact quadrature at the response orientation z
        let watsons: Vec<Watson<T>> = tables.kappas.iter().map(|&k| Watson::new(k, quad)).collect();
        for (m, (&b, dir)) in scheme.bvalues().iter().zip(scheme.directions()).enumerate() {
            let u = dir[2] * dir[2];
            let row = &mut data[m * cols..(m + 1) * cols];
            for (a, &(v, k)) in points.iter().enumerate() {
                let ki = tables.kappa_index(k);
                row[a] = watsons[ki].axial(v, d_par, b, u);
            }
            for (i, &d) in iso_grid.iter().enumerate() {
                row[n_aniso + i] = (-b * d).exp();
            }
        }
        Ok(Self {
            vic_grid: points.iter().map(|p| p.0).collect(),
            kappa_grid: points.iter().map(|p| p.1).collect(),
            iso_grid,
            d_par,
            atoms: Tensor::matrix(scheme.len(), cols, data)?,
            scheme_hash: scheme.hash(),
            warnings,
            tables,
        })
    }

    pub fn atoms(&self) -> &Tensor<T> {
        &self.atoms
    }

    pub fn n_aniso(&self) -> usize {
        self.vic_grid.len()
    }

    pub fn cols(&self) -> usize {
        self.atoms.cols()
    }

    pub fn scheme_hash(&self) -> &str {
        &self.scheme_hash
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Atoms for a voxel whose fibres point along `mu`, evaluated on `scheme`
    /// (which must share the b-values the dictionary was built on).
    pub fn rotated_atoms(&self, scheme: &AcquisitionScheme<T>, mu: [T; 3]) -> Result<Tensor<T>> {
        let cols = self.cols();
        let n_aniso = self.n_aniso();
        let mut data = vec![T::zero(); scheme.len() * cols];
        for (m, (&b, dir)) in scheme.bvalues().iter().zip(scheme.directions()).enumerate() {
            let row = &mut data[m * cols..(m + 1) * cols];
            for (i, &d) in self.iso_grid.iter().enumerate() {
                row[n_aniso + i] = (-b * d).exp();
            }
            if b == T::zero() {
                row[..n_aniso].fill(T::one());
                continue;
            }
            let bi = self.tables.b_index(b).ok_or_else(|| {
                Error::Config(format!("b-value {b} absent from the dictionary's scheme"))
            })?;
            let c = dir[0] * mu[0] + dir[1] * mu[1] + dir[2] * mu[2];
            let u = (c * c).min(T::one());
            let s = T::of(2.0) * u - T::one();
            let sticks: Vec<T> = self.tables.stick.iter().map(|t| clenshaw(&t[bi], s)).collect();
            for a in 0..n_aniso {
                let ki = self.tables.kappa_index(self.kappa_grid[a]);
                let v = self.vic_grid[a];
                let d_perp = self.d_par * (T::one() - v);
                let czz = self.tables.czz[ki];
                let qsq = (T::one() - czz) / T::of(2.0) * (T::one() - u) + czz * u;
                let zep = (-b * (d_perp + (self.d_par - d_perp) * qsq)).exp();
                row[a] = v * sticks[ki] + (T::one() - v) * zep;
            }
        }
        Tensor::matrix(scheme.len(), cols, data)
    }

    pub(crate) fn raw_parts(&self) -> (&[T], &[T], &[T]) {
        (&self.vic_grid, &self.kappa_grid, &self.iso_grid)
    }
}

impl<T: Real> AxialTables<T> {
    fn build(scheme: &AcquisitionScheme<T>, points: &[(T, T)], d_par: T, quad: &SphericalQuadrature<T>) -> Self {
        let mut bvalues: Vec<T> = Vec::new();
        for &b in scheme.bvalues() {
            if b > T::zero() && !bvalues.contains(&b) {
                bvalues.push(b);
            }
        }
        bvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut kappas: Vec<T> = Vec::new();
        for &(_, k) in points {
            if !kappas.contains(&k) {
                kappas.push(k);
            }
        }
        let n = CHEB_DEGREE + 1;
        let nodes: Vec<T> = (0..n)
            .map(|k| (T::PI() * (T::of(k as f64) + T::of(0.5)) / T::of(n as f64)).cos())
            .collect();
        let mut czz = Vec::with_capacity(kappas.len());
        let mut stick = Vec::with_capacity(kappas.len());
        for &k in &kappas {
            let w = Watson::new(k, quad);
            czz.push(w.scatter()[2][2]);
            let per_b = bvalues
                .iter()
                .map(|&b| {
                    let vals: Vec<T> = nodes
                        .iter()
                        .map(|&s| {
                            let u = (s + T::one()) / T::of(2.0);
                            w.stick(b, d_par, [(T::one() - u).sqrt(), T::zero(), u.sqrt()])
                        })
                        .collect();
                    chebyshev_coefficients(&vals)
                })
                .collect();
            stick.push(per_b);
        }
        Self {
            bvalues,
            kappas,
            czz,
            stick,
        }
    }

    fn kappa_index(&self, k: T) -> usize {
        self.kappas.iter().position(|&v| v == k).expect("kappa tabulated")
    }

    fn b_index(&self, b: T) -> Option<usize> {
        self.bvalues.iter().position(|&v| v == b)
    }
}

/// Coefficients of the interpolant through values at Chebyshev–Gauss nodes.
fn chebyshev_coefficients<T: Real>(vals: &[T]) -> Vec<T> {
    let n = vals.len();
    let nf = T::of(n as f64);
    (0..n)
        .map(|j| {
            let s: T = vals
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    v * (T::PI() * T::of(j as f64) * (T::of(k as f64) + T::of(0.5)) / nf).cos()
                })
                .sum();
            let c = T::of(2.0) * s / nf;
            if j == 0 {
                c / T::of(2.0)
            } else {
                c
            }
        })
        .collect()
}

fn clenshaw<T: Real>(coef: &[T], s: T) -> T {
    let (mut b1, mut b2) = (T::zero(), T::zero());
    for &c in coef.iter().skip(1).rev() {
        let b0 = T::of(2.0) * s * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    s * b1 - b2 + coef[0]
}

/// Extracted NODDI parameters; `od` follows from `kappa`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoddiEstimate<T> {
    pub v_ic: T,
    pub v_iso: T,
    pub kappa: T,
    pub od: T,
}

/// `v_iso = Σ x̂_i`; `v_ic` and `κ` are barycenters of the renormalized
/// anisotropic block; `OD = (2/π)·atan(1/κ)`.
pub fn extract_noddi<T: Real>(x: &[T], dict: &NoddiDictionary<T>) -> Result<NoddiEstimate<T>> {
    if x.len() != dict.cols() {
        return Err(Error::Dimension(format!(
            "code length {} vs {} atoms",
            x.len(),
            dict.cols()
        )));
    }
    let tau = T::of(TAU);
    let n = dict.n_aniso();
    let xn = normalize_code(x, tau);
    let v_iso: T = xn[n..].iter().copied().sum();
    let v_ic = barycenter(&xn[..n], &dict.vic_grid, tau);
    let kappa = barycenter(&xn[..n], &dict.kappa_grid, tau);
    Ok(NoddiEstimate {
        v_ic,
        v_iso,
        kappa,
        od: orientation_dispersion(kappa),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{noddi_signal, NoddiParams};

    fn two_shell() -> AcquisitionScheme<f64> {
        let dirs = [
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.6, 0.0, 0.8],
            [0.0, 0.8, 0.6],
        ];
        let mut b = vec![0.0];
        let mut d = vec![[0.0, 0.0, 1.0]];
        for shell in [1000.0, 2000.0] {
            for v in dirs {
                b.push(shell);
                d.push(v);
            }
        }
        AcquisitionScheme::new(b, d).unwrap()
    }

    #[test]
    fn atoms_match_forward_model() {
        let s = two_shell();
        let q = SphericalQuadrature::default();
        let d = NoddiDictionary::build(&s, &NoddiDictConfig::default(), &q).unwrap();
        assert_eq!(d.atoms().shape(), &[11, 145]);
        let a = 37;
        let p = NoddiParams::new(d.vic_grid[a], 0.0, d.kappa_grid[a], [0.0, 0.0, 1.0]);
        let y = noddi_signal(&p, &s, &q).unwrap();
        for (m, v) in y.iter().enumerate() {
            assert!((d.atoms().at(m, a) - v).abs() < 1e-14);
            assert!((d.atoms().at(m, 144) - (-s.bvalues()[m] * D_ISO).exp()).abs() < 1e-15);
        }
        for c in 0..145 {
            assert_eq!(d.atoms().at(0, c), 1.0);
        }
    }

    #[test]
    fn boundary_stick_atom() {
        let s = two_shell();
        let q = SphericalQuadrature::default();
        let d = NoddiDictionary::from_points(&s, &[(1.0, 1e6)], vec![D_ISO], D_PAR, &q).unwrap();
        assert!((d.atoms().at(1, 0) - 0.18268352405273466).abs() < 1e-3);
        assert!((d.atoms().at(1, 1) - (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rotated_atoms_follow_forward_model() {
        let s = two_shell();
        let q = SphericalQuadrature::default();
        let d = NoddiDictionary::build(&s, &NoddiDictConfig::default(), &q).unwrap();
        let mu = [0.48, 0.6, 0.64];
        let r = d.rotated_atoms(&s, mu).unwrap();
        for a in [0, 50, 143] {
            let p = NoddiParams::new(d.vic_grid[a], 0.0, d.kappa_grid[a], mu);
            let y = noddi_signal(&p, &s, &q).unwrap();
            for (m, v) in y.iter().enumerate() {
                assert!((r.at(m, a) - v).abs() < 1e-10, "atom {a} meas {m}");
            }
        }
        let z = d.rotated_atoms(&s, [0.0, 0.0, 1.0]).unwrap();
        for (a, b) in z.data().iter().zip(d.atoms().data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn extraction_examples() {
        let s = two_shell();
        let q = SphericalQuadrature::default();
        let d = NoddiDictionary::from_points(&s, &[(0.5, 1.0), (0.2, 4.0)], vec![D_ISO], D_PAR, &q).unwrap();
        let e = extract_noddi(&[0.0, 0.0, 1.0], &d).unwrap();
        assert!((e.v_iso - 1.0).abs() < 1e-9);
        let e = extract_noddi(&[1.0, 0.0, 0.0], &d).unwrap();
        assert!((e.v_ic - 0.5).abs() < 1e-9 && (e.od - 0.5).abs() < 1e-9);
    }
}
