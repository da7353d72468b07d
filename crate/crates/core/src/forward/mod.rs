//! Forward signal models and the noise simulator.

mod hyp1f1;
mod ivim;
mod noddi;
mod noise;
mod quadrature;
mod scheme;

pub use hyp1f1::{dawson, hyp1f1_half, hyp1f1_half_scaled, SERIES_LIMIT};
pub mod hypergeometric {
    pub use super::hyp1f1::{closed, series};
}
pub use ivim::{ivim_at, ivim_signal, IvimParams};
pub use noddi::{
    cross, frame, kappa_from_od, noddi_signal, orientation_dispersion, NoddiParams, Watson, D_ISO,
    D_PAR,
};
pub use noise::{add_rician_noise, rician_with, sigma};
pub use quadrature::{gauss_lobatto, SphericalQuadrature, DEFAULT_N_PHI, DEFAULT_N_T};
pub use scheme::{AcquisitionScheme, Shell, B0_THRESHOLD, IVIM_BVALUES, IVIM_COMBINATIONS};
