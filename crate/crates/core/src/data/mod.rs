//! Volumes, acquisition-scheme files, patch extraction, synthetic phantoms
//! and dataset splitting.

mod dataset;
mod patches;
mod phantom;
mod scheme_io;
mod split;
mod volume;

pub use dataset::{canonicalize, ivim_patches, noddi_patches, samples_from_patches, select_channels};
pub use patches::{extract_patches, normalize_voxels, patch_centre, PatchOptions, PatchSample, PatchSet};
pub use phantom::{make_phantom, truth_channels, FieldSpec, Phantom, PhantomSpec};
pub use scheme_io::{
    farthest_point, load_scheme, load_scheme_stem, min_angle, multi_shell, random_subset, save_scheme, scheme_paths,
    spiral_directions, subsample_scheme, Selection, Subsampled, UNIT_TOL,
};
pub use split::{split_dataset, split_indices};
pub use volume::{encode, raw_path, read_mask, read_sidecar, read_volume, sibling, sidecar_path, write_volume, Dtype, Sidecar, Volume};
