//! One-factor ablations over a synthetic scenario.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::audit::{abnormal_input_check, AbnormalCheck};
use super::experiment::{desk_model, prepare, DictSpec, Prepared, Scenario};
use super::fit::{FitOptions, Method};
use super::report::{svg_plot, Report, Series};
use crate::data::{Selection, Volume};
use crate::dict::store::sha256_hex;
use crate::error::{Error, Result};
use crate::forward::{SphericalQuadrature, IVIM_COMBINATIONS};
use crate::net::{DecoderKind, EncoderKind, Model, ModelConfig, ModelKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Bvals,
    Nbvals,
    Dictsize,
    Patchsize,
    Datasize,
    Decoder,
    Encoder,
    Snr,
    Bootstrap,
}

impl Axis {
    pub const ALL: [Axis; 9] = [
        Axis::Bvals,
        Axis::Nbvals,
        Axis::Dictsize,
        Axis::Patchsize,
        Axis::Datasize,
        Axis::Decoder,
        Axis::Encoder,
        Axis::Snr,
        Axis::Bootstrap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Bvals => "bvals",
            Axis::Nbvals => "nbvals",
            Axis::Dictsize => "dictsize",
            Axis::Patchsize => "patchsize",
            Axis::Datasize => "datasize",
            Axis::Decoder => "decoder",
            Axis::Encoder => "encoder",
            Axis::Snr => "snr",
            Axis::Bootstrap => "bootstrap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown ablation axis {s:?}; expected one of {}", Self::ALL.map(|a| a.name()).join(", "))))
    }

    pub fn default_grid(self) -> Vec<String> {
        let v: &[&str] = match self {
            Axis::Bvals => &["comb1", "comb2", "comb3", "comb4", "comb5"],
            Axis::Nbvals => &["3", "5", "7", "10"],
            Axis::Dictsize => &["25", "50", "100"],
            Axis::Patchsize => &["1", "3", "5"],
            Axis::Datasize => &["0.25", "0.5", "1"],
            Axis::Decoder => &["unrolled", "model_free"],
            Axis::Encoder => &["transformer", "conv", "none"],
            Axis::Snr => &["10", "20", "30", "40", "50", "60", "70"],
            Axis::Bootstrap => &["0", "1", "2"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Scenario kind the axis runs on by default.
    pub fn default_kind(self) -> ModelKind {
        match self {
            Axis::Bootstrap => ModelKind::Noddi,
            _ => ModelKind::Ivim,
        }
    }
}

/// `lo:hi:step` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<String>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad grid bound {p:?}")));
        let (lo, hi, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || hi < lo {
            return Err(Error::Usage(format!("grid {s:?} needs lo ≤ hi and a positive step")));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| format!("{}", lo + i as f64 * step)).collect());
    }
    let v: Vec<String> = s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect();
    if v.is_empty() {
        return Err(Error::Usage("empty ablation grid".into()));
    }
    Ok(v)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationBase {
    pub scenario: Scenario,
    /// `None` uses [`desk_model`] for the scenario's channel count.
    pub net: Option<ModelConfig>,
    pub train: TrainConfig,
    /// Classic methods also evaluated in every cell.
    pub baselines: Vec<Method>,
    /// Directions per shell of the bootstrap subsets.
    pub bootstrap_per_shell: usize,
    pub fit: FitOptions,
}

impl AblationBase {
    pub fn new(scenario: Scenario, train: TrainConfig) -> Self {
        Self {
            scenario,
            net: None,
            train,
            baselines: Vec::new(),
            bootstrap_per_shell: 30,
            fit: FitOptions::default(),
        }
    }
}

/// One grid point, fully resolved.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cell {
    pub label: String,
    pub scenario: Scenario,
    /// Channel count filled in once the scenario is prepared.
    pub net: Option<ModelConfig>,
    pub train: TrainConfig,
    pub fraction: f64,
}

fn num<T: std::str::FromStr>(axis: Axis, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Usage(format!("bad {} grid value {v:?}", axis.name())))
}

pub fn resolve(axis: Axis, value: &str, base: &AblationBase) -> Result<Cell> {
    let mut sc = base.scenario.clone();
    let mut net = base.net.clone();
    let mut fraction = 1.0;
    let ivim_only = |sc: &Scenario| {
        if sc.kind != ModelKind::Ivim {
            return Err(Error::Usage(format!("the {} axis is defined for IVIM scenarios", axis.name())));
        }
        Ok(())
    };
    let net_mut = |net: &mut Option<ModelConfig>, sc: &Scenario| -> Result<ModelConfig> {
        Ok(net.take().unwrap_or_else(|| desk_model(sc.kind, 0)))
    };
    match axis {
        Axis::Bvals => {
            ivim_only(&sc)?;
            let (_, b) = IVIM_COMBINATIONS
                .iter()
                .find(|(n, _)| *n == value)
                .ok_or_else(|| Error::Usage(format!("unknown b-value combination {value:?}")))?;
            sc.selection = Selection::BValues(b.to_vec());
        }
        Axis::Nbvals => {
            ivim_only(&sc)?;
            sc.selection = match num::<usize>(axis, value)? {
                3 => Selection::BValues(IVIM_COMBINATIONS[5].1.to_vec()),
                5 => Selection::BValues(IVIM_COMBINATIONS[0].1.to_vec()),
                7 => Selection::BValues(IVIM_COMBINATIONS[6].1.to_vec()),
                10 => Selection::Full,
                n => return Err(Error::Usage(format!("no {n}-b-value combination; use 3, 5, 7 or 10"))),
            };
        }
        Axis::Dictsize => {
            let j: usize = num(axis, value)?;
            match &mut sc.dict {
                DictSpec::Ivim(c) => c.j = j,
                DictSpec::Noddi(c) => {
                    c.j_vic = j;
                    c.j_kappa = j;
                }
            }
        }
        Axis::Patchsize => {
            let mut m = net_mut(&mut net, &sc)?;
            m.encoder.patch_size = num(axis, value)?;
            net = Some(m);
        }
        Axis::Datasize => fraction = num(axis, value)?,
        Axis::Decoder => {
            let mut m = net_mut(&mut net, &sc)?;
            m.decoder.kind = match value {
                "unrolled" => DecoderKind::Unrolled,
                "model_free" | "model-free" => DecoderKind::ModelFree,
                _ => return Err(Error::Usage(format!("unknown decoder {value:?}"))),
            };
            net = Some(m);
        }
        Axis::Encoder => {
            let mut m = net_mut(&mut net, &sc)?;
            match value {
                "transformer" => m.encoder.kind = EncoderKind::Transformer,
                "conv" => m.encoder.kind = EncoderKind::Conv,
                "none" => m.encoder.depth = 0,
                _ => return Err(Error::Usage(format!("unknown encoder {value:?}"))),
            }
            net = Some(m);
        }
        Axis::Snr => sc.snr = Some(num(axis, value)?),
        Axis::Bootstrap => {
            sc.selection = Selection::RandomPerShell {
                n: base.bootstrap_per_shell,
                seed: num(axis, value)?,
            };
        }
    }
    Ok(Cell {
        label: value.to_string(),
        scenario: sc,
        net,
        train: base.train.clone(),
        fraction,
    })
}

pub struct CellOutput {
    pub report: Report,
    pub model: Model<f64>,
    pub prep: Prepared,
    /// METSC maps per test subject.
    pub maps: Vec<Volume>,
}

pub fn run_cell(axis: Axis, cell: &Cell, base: &AblationBase, quad: &SphericalQuadrature<f64>) -> Result<CellOutput> {
    let prep = prepare(&cell.scenario, quad)?;
    let mut net = cell.net.clone().unwrap_or_else(|| desk_model(cell.scenario.kind, 0));
    let desk = desk_model(cell.scenario.kind, prep.pipe.channels());
    if net.encoder.embed_dim < prep.pipe.channels() {
        net.encoder.embed_dim = desk.encoder.embed_dim;
        net.encoder.ffn_dim = desk.encoder.ffn_dim;
    }
    let (model, history) = prep.train_model(&net, &cell.train, cell.fraction)?;
    let config = json!({
        "axis": axis.name(),
        "cell": cell,
        "net": model.cfg,
        "baselines": base.baselines,
        "fit": base.fit,
    });
    let mut report = Report::new(format!("{}_{}", axis.name(), sanitize(&cell.label)), config, prep.dataset_hash.clone());
    let ev = prep.evaluate(Method::Metsc, "metsc", cell.train.seed, &base.fit, Some(&model))?;
    report.results.push(ev.result);
    for &m in &base.baselines {
        report.results.push(prep.evaluate(m, m.name(), cell.train.seed, &base.fit, None)?.result);
    }
    report.extra = json!({ "history": history, "train_fraction": cell.fraction });
    Ok(CellOutput {
        report,
        model,
        prep,
        maps: ev.maps,
    })
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

pub struct AblationOutput {
    pub cells: Vec<Report>,
    pub summary: Report,
    /// Relative error against the swept value (snr axis).
    pub svg: Option<String>,
    /// Per-voxel standard deviation across bootstrap cells, one map per test subject.
    pub std_maps: Vec<Volume>,
    pub abnormal: Vec<AbnormalCheck>,
}

/// Relative spread `(max − min) / mean` of the `y` values at `x ≥ from`.
pub fn plateau_variation(points: &[(f64, f64)], from: f64) -> f64 {
    let ys: Vec<f64> = points.iter().filter(|p| p.0 >= from).map(|p| p.1).collect();
    if ys.is_empty() {
        return f64::NAN;
    }
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    (hi - lo) / mean
}

/// Sample standard deviation across maps, voxel by voxel.
pub fn std_map(maps: &[&Volume]) -> Result<Volume> {
    let first = maps.first().ok_or_else(|| Error::Data("no maps to combine".into()))?;
    if maps.iter().any(|m| m.dims() != first.dims()) {
        return Err(Error::Dimension("maps of different shapes".into()));
    }
    let n = maps.len() as f64;
    let data = (0..first.data().len())
        .map(|i| {
            let mean = maps.iter().map(|m| m.data()[i]).sum::<f64>() / n;
            if maps.len() < 2 {
                return 0.0;
            }
            (maps.iter().map(|m| (m.data()[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();
    Volume::new(first.dims(), data)
}

/// Runs every grid value of `axis`, then summarizes across cells.
pub fn run_ablation(axis: Axis, grid: &[String], base: &AblationBase, quad: &SphericalQuadrature<f64>, mut progress: impl FnMut(&str)) -> Result<AblationOutput> {
    if grid.is_empty() {
        return Err(Error::Usage("empty ablation grid".into()));
    }
    let cells: Vec<Cell> = grid.iter().map(|v| resolve(axis, v, base)).collect::<Result<_>>()?;
    let mut reports = Vec::new();
    let mut maps: Vec<Vec<Volume>> = Vec::new();
    let mut abnormal = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        progress(&format!("{} {} ({}/{})", axis.name(), cell.label, i + 1, cells.len()));
        let out = run_cell(axis, cell, base, quad)?;
        if axis == Axis::Bootstrap && i == 0 {
            let set = out.prep.pipe.patches(&out.prep.test[0].signal, None, out.model.cfg.encoder.region(), None)?;
            abnormal = abnormal_input_check(&out.model, &set.inputs()?, 0.3, cell.train.seed)?;
        }
        maps.push(out.maps);
        reports.push(out.report);
    }
    let kind = base.scenario.kind;
    let names = kind.outputs();
    let mut summary = Report::new(
        format!("{}_summary", axis.name()),
        json!({ "axis": axis.name(), "grid": grid, "base": base }),
        sha256_hex(reports.iter().map(|r| r.dataset_hash.as_str()).collect::<Vec<_>>().join(",").as_bytes()),
    );
    for r in &reports {
        let mut m = r.result("metsc").cloned().expect("every cell evaluates metsc");
        m.method = format!("metsc@{}", r.name.trim_start_matches(&format!("{}_", axis.name())));
        summary.results.push(m);
    }
    let mut svg = None;
    let mut std_maps = Vec::new();
    match axis {
        Axis::Snr => {
            let xs: Vec<f64> = cells.iter().map(|c| c.scenario.snr.unwrap_or(f64::INFINITY)).collect();
            let curves: Vec<Vec<(f64, f64)>> = (0..3)
                .map(|k| xs.iter().zip(&reports).map(|(&x, r)| (x, r.result("metsc").expect("metsc").metrics[k].rel_error)).collect())
                .collect();
            let f = &curves[0];
            summary.extra = json!({
                "snr": xs,
                "rel_error": names.iter().zip(&curves).map(|(n, c)| (n.to_string(), json!(c.iter().map(|p| p.1).collect::<Vec<_>>()))).collect::<serde_json::Map<_, _>>(),
                "first_exceeds_last": f.first().map(|a| a.1) > f.last().map(|b| b.1),
                "plateau_variation_from_40": plateau_variation(f, 40.0),
            });
            let series: Vec<Series> = names.iter().zip(&curves).map(|(n, c)| Series { label: n, points: c }).collect();
            svg = Some(svg_plot("relative error vs SNR", "SNR", "relative error", &series));
        }
        Axis::Bootstrap => {
            for s in 0..maps[0].len() {
                let per: Vec<&Volume> = maps.iter().map(|m| &m[s]).collect();
                std_maps.push(std_map(&per)?);
            }
            let mean_std: Vec<f64> = (0..3)
                .map(|k| {
                    let v: Vec<f64> = std_maps.iter().flat_map(|m| m.data().chunks(3).map(move |c| c[k])).collect();
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .collect();
            summary.extra = json!({
                "mean_std": names.iter().zip(&mean_std).map(|(n, s)| (n.to_string(), json!(s))).collect::<serde_json::Map<_, _>>(),
                "all_finite": std_maps.iter().all(|m| m.data().iter().all(|v| v.is_finite())),
                "abnormal": abnormal,
            });
        }
        _ => {}
    }
    Ok(AblationOutput {
        cells: reports,
        summary,
        svg,
        std_maps,
        abnormal,
    })
}
