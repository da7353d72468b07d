//! Whole-volume parameter estimation with any of the supported methods.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ivim_patches, noddi_patches, select_channels, canonicalize, PatchSet, Volume};
use crate::dict::{extract_ivim, extract_noddi, CanonicalLayout, IvimDictConfig, IvimDictionary, NoddiDictConfig, NoddiDictionary};
use crate::error::{Error, Result};
use crate::forward::{AcquisitionScheme, SphericalQuadrature};
use crate::net::{predict_all, DictBinding, Model, ModelKind, Samples};
use crate::solvers::{nlls_ivim_two_step, nnls_fit, BayesGrid, GridSpec, IhtConfig, IhtOperator, NllsConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nlls,
    Bayes,
    Iht,
    Nnls,
    Metsc,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Nlls, Method::Bayes, Method::Iht, Method::Nnls, Method::Metsc];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nlls" => Ok(Method::Nlls),
            "bayes" => Ok(Method::Bayes),
            "iht" => Ok(Method::Iht),
            "nnls" => Ok(Method::Nnls),
            "metsc" => Ok(Method::Metsc),
            _ => Err(Error::Usage(format!("unknown method {s:?}; expected nlls, bayes, iht, nnls or metsc"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Nlls => "nlls",
            Method::Bayes => "bayes",
            Method::Iht => "iht",
            Method::Nnls => "nnls",
            Method::Metsc => "metsc",
        }
    }
}

/// Which measurements of an acquisition a method sees, and for NODDI the
/// rotation-normalized layout they are resampled onto.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub kind: ModelKind,
    pub full: AcquisitionScheme<f64>,
    pub keep: Vec<usize>,
    pub layout: Option<CanonicalLayout>,
}

/// Nodes per shell and polynomial degree of the default NODDI layout.
pub const LAYOUT_NODES: usize = 6;
pub const LAYOUT_DEGREE: usize = 3;

impl Pipeline {
    pub fn ivim(full: AcquisitionScheme<f64>, keep: Vec<usize>) -> Self {
        Self {
            kind: ModelKind::Ivim,
            full,
            keep,
            layout: None,
        }
    }

    pub fn noddi(full: AcquisitionScheme<f64>, keep: Vec<usize>) -> Result<Self> {
        let sub = full.subset(&keep)?;
        let layout = CanonicalLayout::for_scheme(&sub, LAYOUT_NODES, LAYOUT_DEGREE)?;
        Ok(Self {
            kind: ModelKind::Noddi,
            full,
            keep,
            layout: Some(layout),
        })
    }

    pub fn subset(&self) -> Result<AcquisitionScheme<f64>> {
        self.full.subset(&self.keep)
    }

    /// Scheme of the channels the dictionary and the network see.
    pub fn input_scheme(&self) -> Result<AcquisitionScheme<f64>> {
        match &self.layout {
            Some(l) => l.scheme(),
            None => self.subset(),
        }
    }

    pub fn channels(&self) -> usize {
        match &self.layout {
            Some(l) => l.channels(),
            None => self.keep.len(),
        }
    }

    pub fn patches(&self, vol: &Volume, mask: Option<&[bool]>, region: usize, truth: Option<&Volume>) -> Result<PatchSet> {
        match &self.layout {
            Some(l) => noddi_patches(vol, mask, &self.full, &self.keep, l, region, truth),
            None => ivim_patches(vol, mask, &self.full, &self.keep, region, truth),
        }
    }

    /// Per-voxel inputs of the classic methods (normalized, `None` when the
    /// unweighted signal is not positive), in voxel order.
    fn voxel_inputs(&self, vol: &Volume) -> Result<Vec<Option<Vec<f64>>>> {
        let set = self.patches(vol, None, 1, None)?;
        let mut out = vec![None; vol.n_voxels()];
        for s in set.samples {
            let v = vol.voxel_index(s.core[0], s.core[1], s.core[2]);
            out[v] = Some(s.patch);
        }
        Ok(out)
    }
}

/// A dictionary matched to a pipeline.
#[derive(Clone, Debug)]
pub enum Dictionary {
    Ivim(IvimDictionary<f64>),
    Noddi(NoddiDictionary<f64>),
}

impl Dictionary {
    pub fn build_ivim(pipe: &Pipeline, cfg: &IvimDictConfig) -> Result<Self> {
        Ok(Dictionary::Ivim(IvimDictionary::build(&pipe.input_scheme()?, cfg)?))
    }

    pub fn build_noddi(pipe: &Pipeline, cfg: &NoddiDictConfig, quad: &SphericalQuadrature<f64>) -> Result<Self> {
        Ok(Dictionary::Noddi(NoddiDictionary::build(&pipe.input_scheme()?, cfg, quad)?))
    }

    pub fn binding(&self) -> DictBinding<'_, f64> {
        match self {
            Dictionary::Ivim(d) => DictBinding::Ivim(d),
            Dictionary::Noddi(d) => DictBinding::Noddi(d),
        }
    }

    pub fn atoms(&self) -> &crate::autodiff::Tensor<f64> {
        match self {
            Dictionary::Ivim(d) => d.atoms(),
            Dictionary::Noddi(d) => d.atoms(),
        }
    }

    /// Model outputs of a code.
    pub fn extract(&self, x: &[f64]) -> Result<[f64; 3]> {
        match self {
            Dictionary::Ivim(d) => Ok(extract_ivim(x, d)?.to_array()),
            Dictionary::Noddi(d) => {
                let e = extract_noddi(x, d)?;
                Ok([e.v_ic, e.v_iso, e.od])
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitOptions {
    /// Noise level assumed by the Bayesian estimator.
    pub snr: f64,
    pub iht: IhtConfig,
    pub nlls: NllsConfig,
    pub bayes: GridSpec,
    /// Network inference chunk.
    pub batch: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            snr: 30.0,
            iht: IhtConfig::default(),
            nlls: NllsConfig::default(),
            bayes: GridSpec::default(),
            batch: 1024,
        }
    }
}

/// What a method needs beyond the volume.
pub struct Resources<'a> {
    pub dict: Option<&'a Dictionary>,
    pub model: Option<&'a Model<f64>>,
    /// Patch side for the network input.
    pub region: usize,
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    /// `H×W×S×3`: zero outside the mask, NaN where a masked voxel could not be fitted.
    pub maps: Volume,
    /// Sparse codes of fitted voxels for the dictionary and unrolled methods.
    pub codes: Option<Vec<(usize, Vec<f64>)>>,
    pub fitted: usize,
    pub failed: usize,
    pub runtime_s: f64,
}

/// Fits every masked voxel of `vol` (acquired on `pipe.full`).
pub fn fit_volume(pipe: &Pipeline, method: Method, vol: &Volume, mask: Option<&[bool]>, opts: &FitOptions, res: &Resources) -> Result<FitOutput> {
    let t0 = Instant::now();
    let [h, w, s, _] = vol.dims();
    let mut maps = Volume::new([h, w, s, 3], vec![f64::NAN; vol.n_voxels() * 3])?;
    let in_mask = |v: usize| mask.is_none_or(|m| m[v]);
    let mut codes = None;
    let mut failed = 0;
    let mut fitted = 0;
    match method {
        Method::Metsc => {
            let model = res.model.ok_or_else(|| Error::Usage("method metsc needs trained weights (--weights)".into()))?;
            if model.cfg.kind != pipe.kind {
                return Err(Error::Config(format!("{} weights for a {} volume", model.cfg.kind.name(), pipe.kind.name())));
            }
            let set = pipe.patches(vol, mask, res.region, None)?;
            let inputs = set.inputs::<f64>()?;
            let (out, code) = predict_all(model, &inputs, opts.batch)?;
            let mut cs = Vec::new();
            for (i, smp) in set.samples.iter().enumerate() {
                let v = vol.voxel_index(smp.core[0], smp.core[1], smp.core[2]);
                maps.voxel_mut(v).copy_from_slice(out.row_slice(i));
                if let Some(c) = &code {
                    cs.push((v, c.row_slice(i).to_vec()));
                }
            }
            fitted = set.len();
            failed = set.skipped;
            if code.is_some() {
                codes = Some(cs);
            }
        }
        _ => {
            let inputs = pipe.voxel_inputs(vol)?;
            let scheme = pipe.input_scheme()?;
            let grid = match method {
                Method::Bayes => {
                    if pipe.kind != ModelKind::Ivim {
                        return Err(Error::Usage("the Bayesian estimator is IVIM only".into()));
                    }
                    Some(BayesGrid::new(&scheme, &opts.bayes)?)
                }
                Method::Nlls if pipe.kind != ModelKind::Ivim => return Err(Error::Usage("NLLS fitting is IVIM only".into())),
                _ => None,
            };
            let dict = match method {
                Method::Iht | Method::Nnls => Some(res.dict.ok_or_else(|| Error::Usage(format!("method {} needs a dictionary (--dict)", method.name())))?),
                _ => None,
            };
            if let Some(d) = dict {
                if d.atoms().rows() != scheme.len() {
                    return Err(Error::Dimension(format!("dictionary has {} rows, pipeline {} channels", d.atoms().rows(), scheme.len())));
                }
            }
            let op = match (method, dict) {
                (Method::Iht, Some(d)) => Some(IhtOperator::new(d.atoms(), opts.iht.step)?),
                _ => None,
            };
            let results: Vec<Option<Result<([f64; 3], Option<Vec<f64>>)>>> = (0..vol.n_voxels())
                .into_par_iter()
                .map(|v| {
                    if !in_mask(v) {
                        return None;
                    }
                    let y = inputs[v].as_ref()?;
                    Some(match method {
                        Method::Nlls => nlls_ivim_two_step(y, &scheme, &opts.nlls).map(|f| (f.params.to_array(), None)),
                        Method::Bayes => grid.as_ref().expect("grid built").posterior_mean(y, opts.snr).map(|p| (p.to_array(), None)),
                        Method::Iht => op
                            .as_ref()
                            .expect("operator built")
                            .solve(y, &opts.iht)
                            .and_then(|c| Ok((dict.expect("dictionary").extract(&c.x)?, Some(c.x)))),
                        Method::Nnls => nnls_fit(y, dict.expect("dictionary").atoms()).and_then(|c| Ok((dict.expect("dictionary").extract(&c.x)?, Some(c.x)))),
                        Method::Metsc => unreachable!("handled above"),
                    })
                })
                .collect();
            let mut cs = Vec::new();
            for (v, r) in results.into_iter().enumerate() {
                match r {
                    None => {
                        if in_mask(v) {
                            failed += 1;
                        }
                    }
                    Some(Err(Error::Numerical(_))) => failed += 1,
                    Some(Err(e)) => return Err(e),
                    Some(Ok((p, code))) => {
                        maps.voxel_mut(v).copy_from_slice(&p);
                        fitted += 1;
                        if let Some(c) = code {
                            cs.push((v, c));
                        }
                    }
                }
            }
            if matches!(method, Method::Iht | Method::Nnls) {
                codes = Some(cs);
            }
        }
    }
    if let Some(m) = mask {
        for (v, &keep) in m.iter().enumerate() {
            if !keep {
                maps.voxel_mut(v).fill(0.0);
            }
        }
    }
    Ok(FitOutput {
        maps,
        codes,
        fitted,
        failed,
        runtime_s: t0.elapsed().as_secs_f64(),
    })
}

/// Network samples with targets from the first three truth channels.
pub fn training_samples(pipe: &Pipeline, vol: &Volume, mask: Option<&[bool]>, truth: &Volume, region: usize) -> Result<Samples<f64>> {
    let set = pipe.patches(vol, mask, region, Some(truth))?;
    crate::data::samples_from_patches(&set, 3)
}

/// Canonicalized, channel-selected volume (NODDI) or the channel subset (IVIM);
/// exposed for inspection tools.
pub fn input_volume(pipe: &Pipeline, vol: &Volume) -> Result<Volume> {
    let sub = select_channels(vol, &pipe.keep)?;
    match &pipe.layout {
        Some(l) => canonicalize(&sub, &pipe.subset()?, l),
        None => Ok(sub),
    }
}
