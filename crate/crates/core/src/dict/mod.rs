//! Dictionaries that linearize the signal models, and code-to-parameter extraction.

mod code;
mod ivim;
mod noddi;
mod orient;
pub mod store;

pub use code::{barycenter, linspace, logspace, normalize_code, zero_fraction, TAU};
pub use ivim::{extract_ivim, IvimDictConfig, IvimDictionary};
pub use noddi::{extract_noddi, NoddiDictConfig, NoddiDictionary, NoddiEstimate};
pub use orient::{b0_mean, principal_direction, CanonicalLayout, ORIENTATION_B};
