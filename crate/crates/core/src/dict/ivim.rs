use serde::{Deserialize, Serialize};

use super::code::{barycenter, linspace, logspace, normalize_code, TAU};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::forward::{AcquisitionScheme, IvimParams};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvimDictConfig {
    /// Atoms per block; the dictionary has `2j` columns.
    pub j: usize,
    /// Tissue diffusivity range, mm²/s, linearly spaced.
    pub d_range: (f64, f64),
    /// Pseudo-diffusivity range, mm²/s, log spaced.
    pub dstar_range: (f64, f64),
}

impl Default for IvimDictConfig {
    fn default() -> Self {
        Self {
            j: 300,
            d_range: (0.1e-3, 2.9e-3),
            dstar_range: (3e-3, 100e-3),
        }
    }
}

/// `Φ = [Φ_D | Φ_D*]`, one column `e^{−b·g}` per grid value `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct IvimDictionary<T> {
    pub d_grid: Vec<T>,
    pub dstar_grid: Vec<T>,
    atoms: Tensor<T>,
    scheme_hash: String,
}

impl<T: Real> IvimDictionary<T> {
    pub fn build(scheme: &AcquisitionScheme<T>, cfg: &IvimDictConfig) -> Result<Self> {
        if cfg.j == 0 {
            return Err(Error::Config("IVIM dictionary needs j ≥ 1".into()));
        }
        let (dl, dh) = cfg.d_range;
        let (sl, sh) = cfg.dstar_range;
        if !(dl > 0.0 && dh >= dl && sl > 0.0 && sh >= sl) {
            return Err(Error::Config(format!("invalid IVIM grid ranges {cfg:?}")));
        }
        if dh >= sl {
            return Err(Error::Config(format!(
                "D range [{dl}, {dh}] overlaps D* range [{sl}, {sh}]"
            )));
        }
        let d = linspace(dl, dh, cfg.j).into_iter().map(T::of).collect();
        let s = logspace(sl, sh, cfg.j).into_iter().map(T::of).collect();
        Self::from_grids(scheme, d, s)
    }

    pub fn from_grids(scheme: &AcquisitionScheme<T>, d_grid: Vec<T>, dstar_grid: Vec<T>) -> Result<Self> {
        let inc = |g: &[T]| g.windows(2).all(|w| w[1] > w[0]) && g.iter().all(|&v| v > T::zero());
        if d_grid.is_empty() || dstar_grid.is_empty() || !inc(&d_grid) || !inc(&dstar_grid) {
            return Err(Error::Config("IVIM grids must be positive and strictly increasing".into()));
        }
        let cols = d_grid.len() + dstar_grid.len();
        let mut data = Vec::with_capacity(scheme.len() * cols);
        for &b in scheme.bvalues() {
            data.extend(d_grid.iter().chain(&dstar_grid).map(|&g| (-b * g).exp()));
        }
        Ok(Self {
            d_grid,
            dstar_grid,
            atoms: Tensor::matrix(scheme.len(), cols, data)?,
            scheme_hash: scheme.hash(),
        })
    }

    pub fn atoms(&self) -> &Tensor<T> {
        &self.atoms
    }

    pub fn j(&self) -> usize {
        self.d_grid.len()
    }

    pub fn cols(&self) -> usize {
        self.atoms.cols()
    }

    pub fn scheme_hash(&self) -> &str {
        &self.scheme_hash
    }

    pub(crate) fn from_stored(d_grid: Vec<T>, dstar_grid: Vec<T>, atoms: Tensor<T>, scheme_hash: String) -> Self {
        Self {
            d_grid,
            dstar_grid,
            atoms,
            scheme_hash,
        }
    }

    /// Grid spacing around `v` in `grid`: the wider of its neighbouring gaps.
    pub fn spacing_at(grid: &[T], v: T) -> T {
        let i = grid
            .iter()
            .enumerate()
            .min_by(|a, b| (*a.1 - v).abs().partial_cmp(&(*b.1 - v).abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        let lo = if i > 0 { grid[i] - grid[i - 1] } else { T::zero() };
        let hi = if i + 1 < grid.len() { grid[i + 1] - grid[i] } else { T::zero() };
        lo.max(hi)
    }
}

/// `f = Σ x̂_f`, `D` and `D*` as block barycenters of the normalized code.
pub fn extract_ivim<T: Real>(x: &[T], dict: &IvimDictionary<T>) -> Result<IvimParams<T>> {
    let j = dict.j();
    if x.len() != dict.cols() {
        return Err(Error::Dimension(format!(
            "code length {} vs {} atoms",
            x.len(),
            dict.cols()
        )));
    }
    let tau = T::of(TAU);
    let xn = normalize_code(x, tau);
    let f: T = xn[j..].iter().copied().sum();
    let d = barycenter(&xn[..j], &dict.d_grid, tau);
    let dstar = barycenter(&xn[j..], &dict.dstar_grid, tau);
    Ok(IvimParams::new(f, d, dstar, T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_b0_atoms_are_one() {
        let s = AcquisitionScheme::<f64>::from_bvalues(&[0.0]).unwrap();
        let cfg = IvimDictConfig {
            j: 1,
            ..Default::default()
        };
        let d = IvimDictionary::build(&s, &cfg).unwrap();
        assert_eq!(d.atoms().data(), &[1.0, 1.0]);
    }

    #[test]
    fn explicit_grid_column() {
        let s = AcquisitionScheme::<f64>::from_bvalues(&[0.0, 500.0]).unwrap();
        let d = IvimDictionary::from_grids(&s, vec![1e-3, 2e-3], vec![10e-3, 20e-3]).unwrap();
        assert_eq!(d.atoms().at(0, 0), 1.0);
        assert!((d.atoms().at(1, 0) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn default_shape_and_overlap() {
        let s = AcquisitionScheme::<f64>::from_bvalues(&[20.0, 50.0, 150.0, 300.0, 500.0]).unwrap();
        let d = IvimDictionary::build(&s, &IvimDictConfig::default()).unwrap();
        assert_eq!(d.atoms().shape(), &[5, 600]);
        let bad = IvimDictConfig {
            d_range: (1e-3, 5e-3),
            ..Default::default()
        };
        assert!(matches!(IvimDictionary::build(&s, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn extraction_limits() {
        let s = AcquisitionScheme::<f64>::from_bvalues(&[0.0, 100.0]).unwrap();
        let d = IvimDictionary::from_grids(&s, vec![1e-3, 1.5e-3], vec![20e-3, 50e-3]).unwrap();
        let p = extract_ivim(&[0.0, 0.0, 0.0, 1.0], &d).unwrap();
        assert!((p.f - 1.0).abs() < 1e-9 && (p.dstar - 50e-3).abs() < 1e-11);
        let p = extract_ivim(&[0.0, 0.7, 0.0, 0.3], &d).unwrap();
        assert!((p.f - 0.3).abs() < 1e-9);
        assert!((p.d / 1.5e-3 - 1.0).abs() < 1e-8 && (p.dstar / 50e-3 - 1.0).abs() < 1e-8);
    }
}
