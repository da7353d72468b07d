//! Assembly of network samples from volumes.

use rayon::prelude::*;

use super::patches::{extract_patches, PatchOptions, PatchSet};
use super::volume::Volume;
use crate::dict::{principal_direction, CanonicalLayout};
use crate::error::{Error, Result};
use crate::forward::AcquisitionScheme;
use crate::net::Samples;
use crate::real::Real;

/// Copy of `vol` holding only channels `keep`, in that order.
pub fn select_channels(vol: &Volume, keep: &[usize]) -> Result<Volume> {
    let [h, w, s, c] = vol.dims();
    if let Some(&bad) = keep.iter().find(|&&k| k >= c) {
        return Err(Error::Dimension(format!("channel {bad} out of range {c}")));
    }
    let mut data = Vec::with_capacity(vol.n_voxels() * keep.len());
    for v in 0..vol.n_voxels() {
        let y = vol.voxel(v);
        data.extend(keep.iter().map(|&k| y[k]));
    }
    Volume::new([h, w, s, keep.len()], data)
}

/// Each voxel resampled onto `layout` in its own fibre frame (orientation from
/// a tensor fit). Channel 0 is the voxel's unweighted mean.
pub fn canonicalize(vol: &Volume, scheme: &AcquisitionScheme<f64>, layout: &CanonicalLayout) -> Result<Volume> {
    if scheme.len() != vol.channels() {
        return Err(Error::Dimension(format!(
            "scheme has {} measurements, volume {} channels",
            scheme.len(),
            vol.channels()
        )));
    }
    let rows: Vec<Result<Vec<f64>>> = (0..vol.n_voxels())
        .into_par_iter()
        .map(|v| {
            let y = vol.voxel(v);
            if y.iter().all(|&x| x == 0.0) {
                return Ok(vec![0.0; layout.channels()]);
            }
            let mu = principal_direction(y, scheme)?;
            layout.resample(y, scheme, mu)
        })
        .collect();
    let [h, w, s, _] = vol.dims();
    let mut data = Vec::with_capacity(vol.n_voxels() * layout.channels());
    for r in rows {
        data.extend(r?);
    }
    Volume::new([h, w, s, layout.channels()], data)
}

/// Network samples from patches of side `region`: inputs plus the first
/// `n_targets` truth channels.
pub fn samples_from_patches<T: Real>(set: &PatchSet, n_targets: usize) -> Result<Samples<T>> {
    let inputs = set.inputs::<T>()?;
    let mut tdata = Vec::with_capacity(set.len() * n_targets);
    for s in &set.samples {
        let t = s.truth.as_ref().ok_or_else(|| Error::Data(format!("no truth at {:?}", s.core)))?;
        if t.len() < n_targets {
            return Err(Error::Dimension(format!("truth has {} channels, {n_targets} needed", t.len())));
        }
        tdata.extend(t[..n_targets].iter().map(|&v| T::of(v)));
    }
    let targets = crate::autodiff::Tensor::matrix(set.len(), n_targets, tdata)?;
    Samples::new(inputs, targets)
}

/// IVIM samples: normalization by the full acquisition's unweighted mean,
/// then restriction to the measurements in `keep`.
pub fn ivim_patches(
    vol: &Volume,
    mask: Option<&[bool]>,
    full: &AcquisitionScheme<f64>,
    keep: &[usize],
    region: usize,
    truth: Option<&Volume>,
) -> Result<PatchSet> {
    extract_patches(
        vol,
        mask,
        full,
        &PatchOptions {
            size: region,
            channels: Some(keep),
            truth,
        },
    )
}

/// NODDI samples: measurements `keep` of `full`, canonicalized per voxel, then
/// patched and normalized on the canonical layout.
pub fn noddi_patches(
    vol: &Volume,
    mask: Option<&[bool]>,
    full: &AcquisitionScheme<f64>,
    keep: &[usize],
    layout: &CanonicalLayout,
    region: usize,
    truth: Option<&Volume>,
) -> Result<PatchSet> {
    let sub = full.subset(keep)?;
    let canon = canonicalize(&select_channels(vol, keep)?, &sub, layout)?;
    extract_patches(
        &canon,
        mask,
        &layout.scheme()?,
        &PatchOptions {
            size: region,
            channels: None,
            truth,
        },
    )
}
