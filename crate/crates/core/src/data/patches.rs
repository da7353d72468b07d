use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::forward::AcquisitionScheme;
use crate::real::Real;

use super::volume::Volume;

/// One in-plane patch centred on a masked voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    /// `p×p×C`, row-major with channels fastest; zeros outside the volume.
    pub patch: Vec<f64>,
    /// `(h, w, s)` of the core voxel.
    pub core: [usize; 3],
    pub truth: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatchSet {
    pub samples: Vec<PatchSample>,
    /// Masked voxels dropped because their unweighted signal was not positive.
    pub skipped: usize,
    pub skipped_at: Vec<[usize; 3]>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Patches stacked into `[n × p²C]`.
    pub fn inputs<T: Real>(&self) -> Result<Tensor<T>> {
        let cols = self.samples.first().map_or(0, |s| s.patch.len());
        let data = self.samples.iter().flat_map(|s| s.patch.iter().map(|&v| T::of(v))).collect();
        Tensor::matrix(self.samples.len(), cols, data)
    }

    /// Truth rows stacked into `[n × P]`; errors if any sample lacks them.
    pub fn targets<T: Real>(&self) -> Result<Tensor<T>> {
        let mut data = Vec::new();
        let mut cols = 0;
        for s in &self.samples {
            let t = s.truth.as_ref().ok_or_else(|| Error::Data(format!("no truth at {:?}", s.core)))?;
            cols = t.len();
            data.extend(t.iter().map(|&v| T::of(v)));
        }
        Tensor::matrix(self.samples.len(), cols, data)
    }
}

#[derive(Clone, Debug)]
pub struct PatchOptions<'a> {
    pub size: usize,
    /// Channels kept after normalization (in this order); `None` keeps all.
    pub channels: Option<&'a [usize]>,
    /// Per-voxel truth rows to attach, `[voxels × P]`.
    pub truth: Option<&'a Volume>,
}

/// Every voxel divided by its own unweighted mean; voxels without a positive
/// one become `None`.
pub fn normalize_voxels(vol: &Volume, scheme: &AcquisitionScheme<f64>) -> Result<Vec<Option<Vec<f64>>>> {
    if scheme.len() != vol.channels() {
        return Err(Error::Dimension(format!(
            "scheme has {} measurements, volume {} channels",
            scheme.len(),
            vol.channels()
        )));
    }
    let b0 = scheme.b0_indices();
    if b0.is_empty() {
        return Err(Error::Data("scheme has no unweighted measurement to normalize by".into()));
    }
    Ok((0..vol.n_voxels())
        .map(|v| {
            let y = vol.voxel(v);
            let m = b0.iter().map(|&i| y[i]).sum::<f64>() / b0.len() as f64;
            (m > 0.0 && m.is_finite()).then(|| y.iter().map(|&s| s / m).collect())
        })
        .collect())
}

/// One sample per masked voxel with a positive unweighted signal. Patches lie
/// within the core voxel's slice; each voxel of a patch is normalized by the
/// core voxel's unweighted mean, then restricted to `opts.channels`.
pub fn extract_patches(vol: &Volume, mask: Option<&[bool]>, scheme: &AcquisitionScheme<f64>, opts: &PatchOptions) -> Result<PatchSet> {
    let p = opts.size;
    if p.is_multiple_of(2) {
        return Err(Error::Config(format!("patch size must be odd, got {p}")));
    }
    if let Some(m) = mask {
        if m.len() != vol.n_voxels() {
            return Err(Error::Dimension(format!("mask has {} voxels, volume {}", m.len(), vol.n_voxels())));
        }
    }
    if scheme.len() != vol.channels() {
        return Err(Error::Dimension(format!(
            "scheme has {} measurements, volume {} channels",
            scheme.len(),
            vol.channels()
        )));
    }
    let b0 = scheme.b0_indices();
    if b0.is_empty() {
        return Err(Error::Data("scheme has no unweighted measurement to normalize by".into()));
    }
    let all: Vec<usize> = (0..vol.channels()).collect();
    let keep = opts.channels.unwrap_or(&all);
    if let Some(&bad) = keep.iter().find(|&&c| c >= vol.channels()) {
        return Err(Error::Dimension(format!("channel {bad} out of range {}", vol.channels())));
    }
    let [h, w, _, _] = vol.dims();
    let half = (p / 2) as isize;
    let c = keep.len();
    let mut set = PatchSet::default();
    for v in 0..vol.n_voxels() {
        if mask.is_some_and(|m| !m[v]) {
            continue;
        }
        let [ch, cw, cs] = vol.coords(v);
        let y = vol.voxel(v);
        let m = b0.iter().map(|&i| y[i]).sum::<f64>() / b0.len() as f64;
        if !(m > 0.0 && m.is_finite()) {
            set.skipped += 1;
            set.skipped_at.push([ch, cw, cs]);
            continue;
        }
        let mut patch = vec![0.0; p * p * c];
        for a in 0..p {
            let hh = ch as isize + a as isize - half;
            if hh < 0 || hh >= h as isize {
                continue;
            }
            for b in 0..p {
                let ww = cw as isize + b as isize - half;
                if ww < 0 || ww >= w as isize {
                    continue;
                }
                let src = vol.at(hh as usize, ww as usize, cs);
                let dst = &mut patch[(a * p + b) * c..(a * p + b + 1) * c];
                for (d, &k) in dst.iter_mut().zip(keep) {
                    *d = src[k] / m;
                }
            }
        }
        let truth = opts.truth.map(|t| t.voxel(v).to_vec());
        set.samples.push(PatchSample {
            patch,
            core: [ch, cw, cs],
            truth,
        });
    }
    Ok(set)
}

/// The core voxel's signal inside a flattened patch.
pub fn patch_centre(patch: &[f64], size: usize, channels: usize) -> &[f64] {
    let mid = ((size / 2) * size + size / 2) * channels;
    &patch[mid..mid + channels]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> AcquisitionScheme<f64> {
        AcquisitionScheme::from_bvalues(&[0.0, 0.0, 100.0, 500.0]).unwrap()
    }

    fn opts(size: usize) -> PatchOptions<'static> {
        PatchOptions {
            size,
            channels: None,
            truth: None,
        }
    }

    #[test]
    fn one_sample_per_voxel() {
        let vol = Volume::new([4, 4, 1, 4], vec![2.0; 64]).unwrap();
        let set = extract_patches(&vol, None, &scheme(), &opts(3)).unwrap();
        assert_eq!(set.len(), 16);
        assert_eq!(set.skipped, 0);
    }

    #[test]
    fn corner_has_five_padded_positions_and_constant_is_one() {
        let vol = Volume::new([4, 4, 1, 4], vec![2.0; 64]).unwrap();
        let set = extract_patches(&vol, None, &scheme(), &opts(3)).unwrap();
        let corner = &set.samples[0];
        assert_eq!(corner.core, [0, 0, 0]);
        let padded = corner.patch.chunks(4).filter(|px| px.iter().all(|&v| v == 0.0)).count();
        assert_eq!(padded, 5);
        for s in &set.samples {
            assert!(s.patch.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn normalization_uses_mean_of_all_b0() {
        let mut vol = Volume::zeros([1, 1, 1, 4]);
        vol.voxel_mut(0).copy_from_slice(&[3.0, 5.0, 2.0, 1.0]);
        let set = extract_patches(&vol, None, &scheme(), &opts(1)).unwrap();
        assert_eq!(set.samples[0].patch, vec![0.75, 1.25, 0.5, 0.25]);
    }

    #[test]
    fn non_positive_b0_is_skipped_and_counted() {
        let mut vol = Volume::new([2, 2, 1, 4], vec![1.0; 16]).unwrap();
        vol.voxel_mut(3)[0] = -1.0;
        vol.voxel_mut(3)[1] = 0.0;
        let set = extract_patches(&vol, None, &scheme(), &opts(3)).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.skipped, 1);
        assert_eq!(set.skipped_at, vec![[1, 1, 0]]);
    }

    #[test]
    fn channel_subset_after_normalization() {
        let mut vol = Volume::zeros([1, 1, 1, 4]);
        vol.voxel_mut(0).copy_from_slice(&[2.0, 2.0, 1.0, 0.5]);
        let keep = [3, 2];
        let o = PatchOptions {
            channels: Some(&keep),
            ..opts(1)
        };
        let set = extract_patches(&vol, None, &scheme(), &o).unwrap();
        assert_eq!(set.samples[0].patch, vec![0.25, 0.5]);
    }

    #[test]
    fn mask_selects_voxels() {
        let vol = Volume::new([2, 2, 1, 4], vec![1.0; 16]).unwrap();
        let mask = [true, false, false, true];
        let set = extract_patches(&vol, Some(&mask), &scheme(), &opts(3)).unwrap();
        let cores: Vec<_> = set.samples.iter().map(|s| s.core).collect();
        assert_eq!(cores, vec![[0, 0, 0], [1, 1, 0]]);
    }
}
