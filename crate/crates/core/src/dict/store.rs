//! Dictionary files: `<stem>.bin` holds the atom matrix as column-major
//! little-endian f64, `<stem>.json` records grids, scheme hash and build parameters.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{IvimDictionary, NoddiDictionary};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::forward::{AcquisitionScheme, SphericalQuadrature};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DictionaryGrids {
    Ivim {
        d_grid: Vec<f64>,
        dstar_grid: Vec<f64>,
    },
    Noddi {
        vic_grid: Vec<f64>,
        kappa_grid: Vec<f64>,
        iso_grid: Vec<f64>,
        d_par: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictionarySidecar {
    pub rows: usize,
    pub cols: usize,
    pub scheme_hash: String,
    pub atoms_sha256: String,
    pub grids: DictionaryGrids,
}

pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

fn column_major_bytes<T: Real>(atoms: &Tensor<T>) -> Vec<u8> {
    let (r, c) = (atoms.rows(), atoms.cols());
    let mut out = Vec::with_capacity(r * c * 8);
    for j in 0..c {
        for i in 0..r {
            out.extend_from_slice(&atoms.at(i, j).as_f64().to_le_bytes());
        }
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of an atom matrix (over its column-major f64 encoding).
pub fn atoms_hash<T: Real>(atoms: &Tensor<T>) -> String {
    sha256_hex(&column_major_bytes(atoms))
}

fn write<T: Real>(stem: &Path, atoms: &Tensor<T>, scheme_hash: &str, grids: DictionaryGrids) -> Result<()> {
    let (bin, json) = paths(stem);
    let bytes = column_major_bytes(atoms);
    let side = DictionarySidecar {
        rows: atoms.rows(),
        cols: atoms.cols(),
        scheme_hash: scheme_hash.to_string(),
        atoms_sha256: sha256_hex(&bytes),
        grids,
    };
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    fs::write(&json, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

fn f64s<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

pub fn save_ivim<T: Real>(stem: &Path, d: &IvimDictionary<T>) -> Result<()> {
    let grids = DictionaryGrids::Ivim {
        d_grid: f64s(&d.d_grid),
        dstar_grid: f64s(&d.dstar_grid),
    };
    write(stem, d.atoms(), d.scheme_hash(), grids)
}

pub fn save_noddi<T: Real>(stem: &Path, d: &NoddiDictionary<T>) -> Result<()> {
    let (v, k, i) = d.raw_parts();
    let grids = DictionaryGrids::Noddi {
        vic_grid: f64s(v),
        kappa_grid: f64s(k),
        iso_grid: f64s(i),
        d_par: d.d_par.as_f64(),
    };
    write(stem, d.atoms(), d.scheme_hash(), grids)
}

pub fn read_sidecar(stem: &Path) -> Result<DictionarySidecar> {
    let (_, json) = paths(stem);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_atoms<T: Real>(stem: &Path, side: &DictionarySidecar) -> Result<Tensor<T>> {
    let (bin, _) = paths(stem);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != side.rows * side.cols * 8 {
        return Err(Error::Data(format!(
            "{}: {} bytes, sidecar says {}×{}",
            bin.display(),
            bytes.len(),
            side.rows,
            side.cols
        )));
    }
    let found = sha256_hex(&bytes);
    if found != side.atoms_sha256 {
        return Err(Error::HashMismatch {
            what: bin.display().to_string(),
            expected: side.atoms_sha256.clone(),
            found,
        });
    }
    let mut data = vec![T::zero(); side.rows * side.cols];
    for (k, chunk) in bytes.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        let (j, i) = (k / side.rows, k % side.rows);
        data[i * side.cols + j] = T::of(v);
    }
    Tensor::matrix(side.rows, side.cols, data)
}

pub fn load_ivim<T: Real>(stem: &Path) -> Result<IvimDictionary<T>> {
    let side = read_sidecar(stem)?;
    let DictionaryGrids::Ivim { d_grid, dstar_grid } = &side.grids else {
        return Err(Error::Data(format!("{} is not an IVIM dictionary", stem.display())));
    };
    let atoms = read_atoms(stem, &side)?;
    if d_grid.len() + dstar_grid.len() != side.cols {
        return Err(Error::Data("IVIM grid lengths disagree with column count".into()));
    }
    Ok(IvimDictionary::from_stored(
        d_grid.iter().map(|&v| T::of(v)).collect(),
        dstar_grid.iter().map(|&v| T::of(v)).collect(),
        atoms,
        side.scheme_hash.clone(),
    ))
}

/// Rebuilds a NODDI dictionary from its sidecar on `scheme` and checks that the
/// result reproduces the stored atoms bit for bit.
pub fn load_noddi<T: Real>(
    stem: &Path,
    scheme: &AcquisitionScheme<T>,
    quad: &SphericalQuadrature<T>,
) -> Result<NoddiDictionary<T>> {
    let side = read_sidecar(stem)?;
    let DictionaryGrids::Noddi {
        vic_grid,
        kappa_grid,
        iso_grid,
        d_par,
    } = &side.grids
    else {
        return Err(Error::Data(format!("{} is not a NODDI dictionary", stem.display())));
    };
    if scheme.hash() != side.scheme_hash {
        return Err(Error::HashMismatch {
            what: "dictionary scheme".into(),
            expected: side.scheme_hash.clone(),
            found: scheme.hash(),
        });
    }
    let stored: Tensor<T> = read_atoms(stem, &side)?;
    let points: Vec<(T, T)> = vic_grid
        .iter()
        .zip(kappa_grid)
        .map(|(&v, &k)| (T::of(v), T::of(k)))
        .collect();
    let d = NoddiDictionary::from_points(
        scheme,
        &points,
        iso_grid.iter().map(|&v| T::of(v)).collect(),
        T::of(*d_par),
        quad,
    )?;
    let found = atoms_hash(d.atoms());
    if found != atoms_hash(&stored) {
        return Err(Error::HashMismatch {
            what: "rebuilt NODDI atoms".into(),
            expected: side.atoms_sha256.clone(),
            found,
        });
    }
    Ok(d)
}
