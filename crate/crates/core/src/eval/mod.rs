//! Volume fitting, accuracy metrics, statistical tests, reports, synthetic
//! experiments and ablations.

mod ablate;
mod audit;
mod experiment;
mod fit;
mod metrics;
mod report;

pub use ablate::{parse_grid, plateau_variation, resolve, run_ablation, run_cell, std_map, AblationBase, AblationOutput, Axis, Cell, CellOutput};
pub use audit::{abnormal_input_check, output_box, sparsity_audit, AbnormalCheck, HistBin, SparsityAudit};
pub use experiment::{desk_model, desk_training, prepare, DictSpec, Evaluation, Prepared, Scenario, SchemeSpec, DESK_IVIM_J};
pub use fit::{fit_volume, input_volume, training_samples, Dictionary, FitOptions, FitOutput, Method, Pipeline, Resources, LAYOUT_DEGREE, LAYOUT_NODES};
pub use metrics::{paired_t_test, param_metrics, ParamMetrics, TTest};
pub use report::{config_hash, read_report, svg_plot, write_report, MethodResult, NamedTest, Report, Series, REPORT_VERSION};
