//! Flag parsing and loading of volumes with their scheme and mask.

use std::fs;
use std::path::{Path, PathBuf};

use metsc_core::data::{load_scheme_stem, read_mask, read_volume, sibling, Selection, Sidecar, Volume};
use metsc_core::dict::store::sha256_hex;
use metsc_core::error::{Error, Result};
use metsc_core::forward::{AcquisitionScheme, IVIM_COMBINATIONS};
use metsc_core::net::ModelKind;

use crate::SelectArgs;

pub fn parse_dims(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>().map_err(|_| Error::Usage(format!("bad dims {s:?}; expected HxWxS"))))
        .collect::<Result<_>>()?;
    match nums[..] {
        [h, w] if h * w > 0 => Ok([h, w, 1]),
        [h, w, d] if h * w * d > 0 => Ok([h, w, d]),
        _ => Err(Error::Usage(format!("bad dims {s:?}; expected HxWxS with positive sizes"))),
    }
}

pub fn parse_snr(s: &str) -> Result<Option<f64>> {
    match s {
        "inf" | "none" | "noiseless" => Ok(None),
        _ => match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Some(v)),
            _ => Err(Error::Usage(format!("bad SNR {s:?}; expected a positive number or inf"))),
        },
    }
}

pub fn selection(a: &SelectArgs) -> Result<Option<Selection>> {
    if let Some(n) = a.per_shell {
        return Ok(Some(Selection::PerShell(n)));
    }
    let Some(b) = &a.bvals else { return Ok(None) };
    if let Some((_, v)) = IVIM_COMBINATIONS.iter().find(|(n, _)| *n == b.as_str()) {
        return Ok(Some(Selection::BValues(v.to_vec())));
    }
    let v: Vec<f64> = b
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad b-value {p:?} in --bvals"))))
        .collect::<Result<_>>()?;
    Ok(Some(Selection::BValues(v)))
}

/// A phantom directory stands for its `signal` volume.
pub fn volume_stem(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("signal")
    } else {
        p.to_path_buf()
    }
}

pub struct Input {
    pub stem: PathBuf,
    pub volume: Volume,
    pub sidecar: Sidecar,
    pub scheme: AcquisitionScheme<f64>,
    pub mask: Option<Vec<bool>>,
    pub mask_stem: Option<PathBuf>,
    /// SHA-256 of the raw payload.
    pub hash: String,
}

impl Input {
    pub fn load(p: &Path, scheme: Option<&Path>, mask: Option<&Path>) -> Result<Self> {
        let stem = volume_stem(p);
        let (volume, sidecar) = read_volume(&stem)?;
        let scheme_stem = match (scheme, &sidecar.scheme) {
            (Some(s), _) => s.to_path_buf(),
            (None, Some(rel)) => sibling(&stem, rel),
            (None, None) => return Err(Error::Usage(format!("{} names no scheme; pass --scheme", stem.display()))),
        };
        let scheme = load_scheme_stem(&scheme_stem)?;
        if scheme.len() != volume.channels() {
            return Err(Error::Data(format!(
                "{} has {} channels but scheme {} has {} measurements",
                stem.display(),
                volume.channels(),
                scheme_stem.display(),
                scheme.len()
            )));
        }
        let mask_stem = match (mask, &sidecar.mask) {
            (Some(m), _) => Some(m.to_path_buf()),
            (None, Some(rel)) => Some(sibling(&stem, rel)),
            (None, None) => None,
        };
        let [h, w, s, _] = volume.dims();
        let mask = mask_stem.as_deref().map(|m| read_mask(m, [h, w, s])).transpose()?;
        let raw = metsc_core::data::raw_path(&stem);
        let hash = sha256_hex(&fs::read(&raw).map_err(|e| Error::io(&raw, e))?);
        Ok(Self {
            stem,
            volume,
            sidecar,
            scheme,
            mask,
            mask_stem,
            hash,
        })
    }

    /// Model kind recorded by `simulate`, if any.
    pub fn kind(&self) -> Option<ModelKind> {
        self.sidecar.provenance.get("kind").and_then(|k| k.as_str()).and_then(|k| ModelKind::parse(k).ok())
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }
}

/// Truth stem beside a signal volume.
pub fn default_truth(stem: &Path) -> PathBuf {
    stem.parent().unwrap_or(Path::new(".")).join("truth")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_snr() {
        assert_eq!(parse_dims("32x32x4").unwrap(), [32, 32, 4]);
        assert_eq!(parse_dims("8x9").unwrap(), [8, 9, 1]);
        assert!(parse_dims("8x0x1").is_err());
        assert_eq!(parse_snr("inf").unwrap(), None);
        assert!(parse_snr("-3").is_err());
    }

    #[test]
    fn named_combination() {
        let s = selection(&SelectArgs {
            bvals: Some("comb1".into()),
            per_shell: None,
        })
        .unwrap();
        assert_eq!(s, Some(Selection::BValues(vec![20.0, 50.0, 150.0, 300.0, 500.0])));
    }
}
