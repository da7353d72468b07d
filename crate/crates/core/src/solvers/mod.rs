//! Non-learned per-voxel fitting: IHT and NNLS over dictionaries, segmented
//! IVIM least squares, and a lattice posterior for IVIM.

mod bayes;
mod iht;
mod lm;
mod nlls;
mod nnls;

pub use bayes::{bayesian_ivim_grid, BayesGrid, GridSpec};
pub use iht::{iht_solve, residual_sq, IhtConfig, IhtOperator, SparseCode, StepRule};
pub use lm::{levenberg_marquardt, LmConfig, LmOutcome};
pub use nlls::{nlls_ivim_two_step, IvimBounds, NllsConfig, NllsFit};
pub use nnls::{kkt_residual, nnls_fit, KKT_TOL};
