//! Synthetic experiments: simulated subjects, training, and per-method
//! evaluation on held-out subjects.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::fit::{fit_volume, Dictionary, FitOptions, Method, Pipeline, Resources};
use super::metrics::param_metrics;
use super::report::MethodResult;
use crate::data::{make_phantom, multi_shell, samples_from_patches, split_indices, subsample_scheme, Dtype, FieldSpec, Phantom, PhantomSpec, Selection};
use crate::dict::{IvimDictConfig, NoddiDictConfig};
use crate::error::{Error, Result};
use crate::forward::{AcquisitionScheme, SphericalQuadrature, IVIM_BVALUES, IVIM_COMBINATIONS};
use crate::net::{train, DecoderConfig, EncoderConfig, History, InitOptions, Model, ModelConfig, ModelKind, Samples, TrainConfig};

/// How the fully sampled acquisition is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SchemeSpec {
    /// The ten-b-value IVIM list.
    Ivim10,
    MultiShell { shells: Vec<f64>, dirs: usize, b0: usize },
}

impl SchemeSpec {
    pub fn build(&self) -> Result<AcquisitionScheme<f64>> {
        match self {
            SchemeSpec::Ivim10 => AcquisitionScheme::from_bvalues(&IVIM_BVALUES),
            SchemeSpec::MultiShell { shells, dirs, b0 } => multi_shell(shells, *dirs, *b0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DictSpec {
    Ivim(IvimDictConfig),
    Noddi(NoddiDictConfig),
}

/// A family of simulated subjects sharing an acquisition, a field layout
/// and a noise level. Subjects differ only in their phantom seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ModelKind,
    pub scheme: SchemeSpec,
    /// Measurements the methods see.
    pub selection: Selection,
    /// Per subject, `H×W×S`.
    pub dims: [usize; 3],
    pub train_subjects: usize,
    pub test_subjects: usize,
    /// Voxel-level validation share of the training subjects.
    pub val_frac: f64,
    pub snr: Option<f64>,
    pub seed: u64,
    pub field: FieldSpec,
    pub dict: DictSpec,
}

/// IVIM dictionary atoms per block in desk-scale runs.
pub const DESK_IVIM_J: usize = 50;

impl Scenario {
    /// Comb1 IVIM at SNR 30: three 64×64 training slices, one test slice.
    pub fn ivim(seed: u64) -> Self {
        Self {
            kind: ModelKind::Ivim,
            scheme: SchemeSpec::Ivim10,
            selection: Selection::BValues(IVIM_COMBINATIONS[0].1.to_vec()),
            dims: [64, 64, 1],
            train_subjects: 3,
            test_subjects: 1,
            val_frac: 0.1,
            snr: Some(30.0),
            seed,
            field: FieldSpec::default_for(ModelKind::Ivim),
            dict: DictSpec::Ivim(IvimDictConfig {
                j: DESK_IVIM_J,
                ..Default::default()
            }),
        }
    }

    /// Two shells of 30 directions plus three unweighted measurements.
    pub fn noddi(seed: u64) -> Self {
        Self {
            kind: ModelKind::Noddi,
            scheme: SchemeSpec::MultiShell {
                shells: vec![1000.0, 2000.0],
                dirs: 30,
                b0: 3,
            },
            selection: Selection::Full,
            dims: [32, 32, 1],
            train_subjects: 3,
            test_subjects: 1,
            val_frac: 0.1,
            snr: Some(30.0),
            seed,
            field: FieldSpec::default_for(ModelKind::Noddi),
            dict: DictSpec::Noddi(NoddiDictConfig::default()),
        }
    }

    /// Phantom seed of subject `i` (training subjects first).
    pub fn subject_seed(&self, i: usize) -> u64 {
        splitmix(self.seed ^ splitmix(i as u64 + 1))
    }

    fn phantom_spec(&self, i: usize) -> PhantomSpec {
        PhantomSpec {
            field: self.field.clone(),
            ..PhantomSpec::new(self.kind, self.dims, self.snr, self.subject_seed(i))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_subjects == 0 || self.test_subjects == 0 {
            return Err(Error::Config("scenario needs training and test subjects".into()));
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return Err(Error::Config(format!("validation fraction {} outside [0, 1)", self.val_frac)));
        }
        let ok = matches!((self.kind, &self.dict), (ModelKind::Ivim, DictSpec::Ivim(_)) | (ModelKind::Noddi, DictSpec::Noddi(_)));
        if !ok {
            return Err(Error::Config(format!("{} scenario with a mismatched dictionary", self.kind.name())));
        }
        Ok(())
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Simulated subjects plus everything derived from the scenario alone.
pub struct Prepared {
    pub scenario: Scenario,
    pub pipe: Pipeline,
    pub dict: Dictionary,
    pub train: Vec<Phantom>,
    pub test: Vec<Phantom>,
    /// SHA-256 over every subject's signal and truth.
    pub dataset_hash: String,
}

pub fn prepare(sc: &Scenario, quad: &SphericalQuadrature<f64>) -> Result<Prepared> {
    sc.validate()?;
    let full = sc.scheme.build()?;
    let keep = subsample_scheme(&full, &sc.selection)?.index;
    let (pipe, dict) = match &sc.dict {
        DictSpec::Ivim(cfg) => {
            let p = Pipeline::ivim(full.clone(), keep);
            let d = Dictionary::build_ivim(&p, cfg)?;
            (p, d)
        }
        DictSpec::Noddi(cfg) => {
            let p = Pipeline::noddi(full.clone(), keep)?;
            let d = Dictionary::build_noddi(&p, cfg, quad)?;
            (p, d)
        }
    };
    let n = sc.train_subjects + sc.test_subjects;
    let mut subjects = Vec::with_capacity(n);
    let mut h = Sha256::new();
    for i in 0..n {
        let ph = make_phantom(&sc.phantom_spec(i), &full, quad)?;
        h.update(crate::data::encode(&ph.signal, Dtype::F64));
        h.update(crate::data::encode(&ph.truth, Dtype::F64));
        subjects.push(ph);
    }
    let test = subjects.split_off(sc.train_subjects);
    Ok(Prepared {
        scenario: sc.clone(),
        pipe,
        dict,
        train: subjects,
        test,
        dataset_hash: hex::encode(h.finalize()),
    })
}

impl Prepared {
    /// Training and validation samples of side `region`; the validation rows
    /// are a seeded voxel-level share of the pooled training subjects.
    /// `fraction` < 1 keeps a seeded subset of the training rows.
    pub fn train_val(&self, region: usize, fraction: f64) -> Result<(Samples<f64>, Samples<f64>)> {
        let all = self.pooled(&self.train, region)?;
        let sc = &self.scenario;
        let parts = if sc.val_frac > 0.0 {
            split_indices(all.len(), &[1.0 - sc.val_frac, sc.val_frac], sc.seed ^ 0x5eed)?
        } else {
            vec![(0..all.len()).collect(), Vec::new()]
        };
        let mut tr = parts[0].clone();
        if fraction < 1.0 {
            if !(fraction > 0.0) {
                return Err(Error::Config(format!("training fraction {fraction} must be positive")));
            }
            let keep = split_indices(tr.len(), &[fraction, 1.0 - fraction], sc.seed ^ 0xda7a)?;
            tr = keep[0].iter().map(|&k| tr[k]).collect();
        }
        let val = if parts[1].is_empty() { all.rows(&tr)? } else { all.rows(&parts[1])? };
        Ok((all.rows(&tr)?, val))
    }

    fn pooled(&self, subjects: &[Phantom], region: usize) -> Result<Samples<f64>> {
        let parts: Vec<Samples<f64>> = subjects
            .iter()
            .map(|ph| samples_from_patches(&self.pipe.patches(&ph.signal, None, region, Some(&ph.truth))?, 3))
            .collect::<Result<_>>()?;
        Samples::concat(&parts)
    }

    pub fn input_hash(&self) -> Result<String> {
        Ok(self.pipe.input_scheme()?.hash())
    }

    /// Fresh model bound to this scenario's dictionary.
    pub fn model(&self, cfg: ModelConfig, seed: u64) -> Result<Model<f64>> {
        Model::new(
            cfg,
            self.dict.binding(),
            &self.input_hash()?,
            &InitOptions {
                seed,
                ..Default::default()
            },
        )
    }

    /// Model from `net` and trained with `tcfg` on `fraction` of the training rows.
    pub fn train_model(&self, net: &ModelConfig, tcfg: &TrainConfig, fraction: f64) -> Result<(Model<f64>, History)> {
        let mut cfg = net.clone();
        cfg.kind = self.scenario.kind;
        cfg.channels = self.pipe.channels();
        let mut model = self.model(cfg, tcfg.seed)?;
        let (tr, val) = self.train_val(model.cfg.encoder.region(), fraction)?;
        let hist = train(&mut model, &tr, &val, tcfg)?;
        Ok((model, hist))
    }

    /// Metrics of `method` over all test subjects. Returns the result plus
    /// the stacked `[n × 3]` predictions and truths (fitted voxels only).
    pub fn evaluate(&self, method: Method, label: &str, seed: u64, opts: &FitOptions, model: Option<&Model<f64>>) -> Result<Evaluation> {
        let region = model.map(|m| m.cfg.encoder.region()).unwrap_or(1);
        let res = Resources {
            dict: Some(&self.dict),
            model,
            region,
        };
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        let mut maps = Vec::new();
        let mut codes = Vec::new();
        let mut runtime = 0.0;
        for ph in &self.test {
            let out = fit_volume(&self.pipe, method, &ph.signal, None, opts, &res)?;
            runtime += out.runtime_s;
            for v in 0..ph.signal.n_voxels() {
                pred.extend_from_slice(out.maps.voxel(v));
                truth.extend_from_slice(&ph.truth.voxel(v)[..3]);
            }
            if let Some(c) = out.codes {
                codes.extend(c.into_iter().map(|(_, x)| x));
            }
            maps.push(out.maps);
        }
        let metrics = param_metrics(&pred, &truth, self.scenario.kind.outputs())?;
        Ok(Evaluation {
            result: MethodResult {
                method: label.to_string(),
                seed,
                metrics,
                runtime_s: runtime,
            },
            pred,
            truth,
            maps,
            codes,
        })
    }
}

pub struct Evaluation {
    pub result: MethodResult,
    /// Row-major `[voxels × 3]` over all test subjects, NaN where unfitted.
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
    /// One `H×W×S×3` map per test subject.
    pub maps: Vec<crate::data::Volume>,
    /// Sparse codes of fitted voxels, when the method produces them.
    pub codes: Vec<Vec<f64>>,
}

/// Small network for desk-scale runs: one transformer block of width 16
/// (or the next multiple of 4 covering the channel count), two heads.
pub fn desk_model(kind: ModelKind, channels: usize) -> ModelConfig {
    let embed = channels.max(16).div_ceil(4) * 4;
    ModelConfig {
        kind,
        channels,
        encoder: EncoderConfig {
            embed_dim: embed,
            heads: 2,
            depth: 1,
            ffn_dim: 2 * embed,
            dropout: 0.0,
            ..Default::default()
        },
        decoder: DecoderConfig::default(),
        skip: true,
    }
}

/// Short schedule for desk-scale runs.
pub fn desk_training(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 256,
        lr: 1e-3,
        warmup_epochs: (epochs / 10).max(1).min(epochs),
        seed,
        patience: None,
        adam: Default::default(),
    }
}
