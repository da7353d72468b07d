//! Raw volume files: `<stem>.raw` holds little-endian samples, row-major over
//! `H×W×S×C` with the channel index fastest; `<stem>.json` is the sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 4],
    pub dtype: Dtype,
    /// Stem of the `.bval`/`.bvec` pair, relative to the sidecar.
    #[serde(default)]
    pub scheme: Option<String>,
    /// Stem of the mask volume, relative to the sidecar.
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default)]
    pub units: String,
    /// Channel names for parameter maps.
    #[serde(default)]
    pub channels: Option<Vec<String>>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl Sidecar {
    pub fn new(dims: [usize; 4], dtype: Dtype) -> Self {
        Self {
            dims,
            dtype,
            scheme: None,
            mask: None,
            units: String::new(),
            channels: None,
            provenance: serde_json::Value::Null,
        }
    }
}

/// An `H×W×S×C` array held in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::Dimension(format!("{} samples for dims {dims:?}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.dims[3]
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn voxel_index(&self, h: usize, w: usize, s: usize) -> usize {
        (h * self.dims[1] + w) * self.dims[2] + s
    }

    /// `(h, w, s)` of a linear voxel index.
    pub fn coords(&self, v: usize) -> [usize; 3] {
        let s = v % self.dims[2];
        let w = (v / self.dims[2]) % self.dims[1];
        [v / (self.dims[1] * self.dims[2]), w, s]
    }

    pub fn voxel(&self, v: usize) -> &[f64] {
        let c = self.dims[3];
        &self.data[v * c..(v + 1) * c]
    }

    pub fn voxel_mut(&mut self, v: usize) -> &mut [f64] {
        let c = self.dims[3];
        &mut self.data[v * c..(v + 1) * c]
    }

    pub fn at(&self, h: usize, w: usize, s: usize) -> &[f64] {
        self.voxel(self.voxel_index(h, w, s))
    }
}

pub fn raw_path(stem: &Path) -> PathBuf {
    stem.with_extension("raw")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

/// Encoded payload, exactly what [`write_volume`] puts in the `.raw` file.
pub fn encode(vol: &Volume, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(vol.data.len() * dtype.size());
    for &v in &vol.data {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn write_volume(stem: &Path, vol: &Volume, sidecar: &Sidecar) -> Result<()> {
    if sidecar.dims != vol.dims {
        return Err(Error::Dimension(format!(
            "sidecar dims {:?} vs volume dims {:?}",
            sidecar.dims, vol.dims
        )));
    }
    let raw = raw_path(stem);
    let json = sidecar_path(stem);
    fs::write(&raw, encode(vol, sidecar.dtype)).map_err(|e| Error::io(&raw, e))?;
    fs::write(&json, serde_json::to_string_pretty(sidecar)?).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn read_sidecar(stem: &Path) -> Result<Sidecar> {
    let json = sidecar_path(stem);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_volume(stem: &Path) -> Result<(Volume, Sidecar)> {
    let sidecar = read_sidecar(stem)?;
    let raw = raw_path(stem);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let n: usize = sidecar.dims.iter().product();
    let size = sidecar.dtype.size();
    if bytes.len() != n * size {
        return Err(Error::Data(format!(
            "{}: {} bytes, dims {:?} need {}",
            raw.display(),
            bytes.len(),
            sidecar.dims,
            n * size
        )));
    }
    let data = match sidecar.dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    };
    Ok((Volume::new(sidecar.dims, data)?, sidecar))
}

/// Resolves a path recorded in a sidecar relative to the sidecar's directory.
pub fn sibling(stem: &Path, rel: &str) -> PathBuf {
    stem.parent().unwrap_or(Path::new(".")).join(rel)
}

/// Mask volume as one flag per voxel; a missing mask means every voxel.
pub fn read_mask(stem: &Path, expect: [usize; 3]) -> Result<Vec<bool>> {
    let (m, _) = read_volume(stem)?;
    let d = m.dims();
    if [d[0], d[1], d[2]] != expect || d[3] != 1 {
        return Err(Error::Dimension(format!("mask dims {d:?} vs volume {expect:?}×1")));
    }
    Ok(m.data().iter().map(|&v| v != 0.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("v");
        let data: Vec<f64> = (0..(2 * 3) * 4).map(|i| (i as f32 * 0.37).sin() as f64).collect();
        let vol = Volume::new([2, 3, 1, 4], data).unwrap();
        let mut sc = Sidecar::new(vol.dims(), Dtype::F32);
        sc.units = "a.u.".into();
        sc.provenance = serde_json::json!({"seed": 3});
        write_volume(&stem, &vol, &sc).unwrap();
        let (back, sc2) = read_volume(&stem).unwrap();
        assert_eq!(back, vol);
        assert_eq!(sc2, sc);
    }

    #[test]
    fn payload_size_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("v");
        let vol = Volume::zeros([2, 2, 1, 1]);
        write_volume(&stem, &vol, &Sidecar::new(vol.dims(), Dtype::F64)).unwrap();
        let mut sc = read_sidecar(&stem).unwrap();
        sc.dims = [2, 2, 2, 1];
        std::fs::write(sidecar_path(&stem), serde_json::to_string(&sc).unwrap()).unwrap();
        assert!(matches!(read_volume(&stem), Err(Error::Data(_))));
    }

    #[test]
    fn coordinates_invert_index() {
        let vol = Volume::zeros([3, 4, 5, 2]);
        for v in 0..vol.n_voxels() {
            let [h, w, s] = vol.coords(v);
            assert_eq!(vol.voxel_index(h, w, s), v);
        }
    }
}
