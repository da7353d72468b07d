use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use metsc_core::data::{
    make_phantom, read_volume, samples_from_patches, save_scheme, load_scheme_stem, split_dataset, split_indices, subsample_scheme,
    truth_channels, write_volume, Dtype, PhantomSpec, Selection, Sidecar, Volume,
};
use metsc_core::dict::store::{load_ivim, load_noddi, save_ivim, save_noddi, sha256_hex};
use metsc_core::dict::{IvimDictConfig, NoddiDictConfig};
use metsc_core::error::{Error, Result};
use metsc_core::eval::{
    config_hash, desk_model, desk_training, fit_volume, paired_t_test, param_metrics, parse_grid, run_ablation, sparsity_audit, write_report,
    AblationBase, Axis, Dictionary, FitOptions, Method, MethodResult, NamedTest, Pipeline, Report, Resources, Scenario, SchemeSpec,
};
use metsc_core::forward::SphericalQuadrature;
use metsc_core::net::checkpoint::{load, read_manifest, save_with, Expect, Manifest};
use metsc_core::net::{predict_all, train as fit_network, DecoderKind, EncoderKind, InitOptions, Model, ModelConfig, ModelKind, Samples, TrainConfig};
use serde_json::{json, Value};

use crate::inputs::{default_truth, parse_dims, parse_snr, selection, volume_stem, Input};
use crate::outdir::OutDir;
use crate::{AblateArgs, AuditArgs, EvaluateArgs, FitArgs, NetArgs, SimulateArgs, TrainArgs};

pub struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn say(&self, msg: impl std::fmt::Display) {
        if !self.quiet {
            eprintln!("metsc: {msg}");
        }
    }
}

fn default_scheme(kind: ModelKind) -> SchemeSpec {
    match kind {
        ModelKind::Ivim => SchemeSpec::Ivim10,
        ModelKind::Noddi => Scenario::noddi(0).scheme,
    }
}

fn units(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Ivim => "f: fraction; D, Dstar: mm^2/s; S0: a.u.",
        ModelKind::Noddi => "v_ic, v_iso, OD: fraction; kappa: 1; mu: unit vector",
    }
}

pub fn simulate(a: &SimulateArgs, log: &Log) -> Result<()> {
    let kind = ModelKind::parse(&a.kind)?;
    let dims = parse_dims(&a.dims)?;
    let snr = parse_snr(&a.snr)?;
    let scheme = match &a.scheme {
        Some(s) => load_scheme_stem(s)?,
        None => default_scheme(kind).build()?,
    };
    let mut spec = PhantomSpec::new(kind, dims, snr, a.seed);
    if let Some(r) = a.regions {
        spec.field.regions = r;
    }
    let out = OutDir::claim(&a.out, "simulate", json!({ "spec": spec, "scheme_hash": scheme.hash() }), a.force)?;
    log.say(format_args!("simulating {} phantom {:?} ({} voxels, {} measurements)", kind.name(), dims, dims.iter().product::<usize>(), scheme.len()));
    let ph = make_phantom(&spec, &scheme, &SphericalQuadrature::default())?;
    save_scheme(&out.file("scheme"), &scheme)?;
    let [h, w, s] = dims;
    let provenance = json!({ "command": "simulate", "kind": kind.name(), "seed": a.seed, "snr": snr, "s0": spec.s0 });
    let mut side = Sidecar::new(ph.signal.dims(), Dtype::F32);
    side.scheme = Some("scheme".into());
    side.mask = Some("mask".into());
    side.units = "a.u.".into();
    side.provenance = provenance.clone();
    write_volume(&out.file("signal"), &ph.signal, &side)?;
    let mut tside = Sidecar::new(ph.truth.dims(), Dtype::F64);
    tside.mask = Some("mask".into());
    tside.units = units(kind).into();
    tside.channels = Some(truth_channels(kind));
    tside.provenance = provenance.clone();
    write_volume(&out.file("truth"), &ph.truth, &tside)?;
    let mask = Volume::new([h, w, s, 1], vec![1.0; h * w * s])?;
    let mut mside = Sidecar::new(mask.dims(), Dtype::F32);
    mside.provenance = provenance.clone();
    write_volume(&out.file("mask"), &mask, &mside)?;
    let regions = Volume::new([h, w, s, 1], ph.region.iter().map(|&r| r as f64).collect())?;
    let mut rside = Sidecar::new(regions.dims(), Dtype::F32);
    rside.units = "region label".into();
    rside.provenance = provenance;
    write_volume(&out.file("regions"), &regions, &rside)?;
    log.say(format_args!("wrote {}", out.path.display()));
    out.finish(&["signal", "truth", "mask", "regions", "scheme"])
}

/// Selection from flags, else the one recorded with the weights, else everything.
fn resolve_selection(flags: Option<Selection>, manifest: Option<&Manifest>) -> Result<Selection> {
    if let Some(s) = flags {
        return Ok(s);
    }
    match manifest.and_then(|m| m.extra.get("selection")) {
        Some(v) => Ok(serde_json::from_value(v.clone())?),
        None => Ok(Selection::Full),
    }
}

fn pipeline(kind: ModelKind, input: &Input, sel: &Selection) -> Result<Pipeline> {
    let keep = subsample_scheme(&input.scheme, sel)?.index;
    match kind {
        ModelKind::Ivim => Ok(Pipeline::ivim(input.scheme.clone(), keep)),
        ModelKind::Noddi => Pipeline::noddi(input.scheme.clone(), keep),
    }
}

/// Loads `stem` or builds a dictionary for the pipeline; `size` is IVIM atoms
/// per block or NODDI grid points per axis.
fn dictionary(pipe: &Pipeline, stem: Option<&Path>, size: Option<usize>, quad: &SphericalQuadrature<f64>) -> Result<Dictionary> {
    let scheme = pipe.input_scheme()?;
    match (pipe.kind, stem) {
        (ModelKind::Ivim, Some(s)) => {
            let d = load_ivim(s)?;
            if d.scheme_hash() != scheme.hash() {
                return Err(Error::HashMismatch {
                    what: format!("dictionary {} scheme", s.display()),
                    expected: d.scheme_hash().to_string(),
                    found: scheme.hash(),
                });
            }
            Ok(Dictionary::Ivim(d))
        }
        (ModelKind::Noddi, Some(s)) => Ok(Dictionary::Noddi(load_noddi(s, &scheme, quad)?)),
        (ModelKind::Ivim, None) => {
            let mut cfg = IvimDictConfig::default();
            if let Some(j) = size {
                cfg.j = j;
            }
            Dictionary::build_ivim(pipe, &cfg)
        }
        (ModelKind::Noddi, None) => {
            let mut cfg = NoddiDictConfig::default();
            if let Some(n) = size {
                cfg.j_vic = n;
                cfg.j_kappa = n;
            }
            Dictionary::build_noddi(pipe, &cfg, quad)
        }
    }
}

fn save_dictionary(stem: &Path, d: &Dictionary) -> Result<()> {
    match d {
        Dictionary::Ivim(d) => save_ivim(stem, d),
        Dictionary::Noddi(d) => save_noddi(stem, d),
    }
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

pub fn fit(a: &FitArgs, log: &Log) -> Result<()> {
    let method = Method::parse(&a.method)?;
    if method == Method::Metsc && a.weights.is_none() {
        return Err(Error::Usage("method metsc needs a trained checkpoint (--weights)".into()));
    }
    let input = Input::load(&a.volume, a.scheme.as_deref(), a.mask.as_deref())?;
    let manifest = match (&a.weights, method) {
        (Some(w), Method::Metsc) => Some(read_manifest(w)?),
        _ => None,
    };
    let kind = match (&a.kind, &manifest, input.kind()) {
        (Some(k), _, _) => ModelKind::parse(k)?,
        (None, Some(m), _) => m.config.kind,
        (None, None, Some(k)) => k,
        _ => return Err(Error::Usage("cannot tell the model kind; pass --kind".into())),
    };
    let sel = resolve_selection(selection(&a.select)?, manifest.as_ref())?;
    let pipe = pipeline(kind, &input, &sel)?;
    let config = json!({
        "method": method,
        "kind": kind,
        "volume_sha256": input.hash,
        "scheme_hash": input.scheme.hash(),
        "mask": input.mask_stem,
        "selection": sel,
        "dict": a.dict,
        "dict_size": a.dict_size,
        "weights": manifest.as_ref().map(|m| m.weights_sha256.clone()),
        "snr": a.snr,
        "lambda": a.lambda,
    });
    let out = OutDir::claim(&a.out, "fit", config, a.force)?;
    let quad = SphericalQuadrature::default();
    let dict = match method {
        Method::Iht | Method::Nnls => {
            let d = dictionary(&pipe, a.dict.as_deref(), a.dict_size, &quad)?;
            save_dictionary(&out.file("dict"), &d)?;
            Some(d)
        }
        _ => None,
    };
    let model = match &a.weights {
        Some(w) if method == Method::Metsc => {
            let hash = pipe.input_scheme()?.hash();
            let (m, _) = load::<f64>(
                w,
                &Expect {
                    scheme_hash: Some(&hash),
                    dict_hash: None,
                    force: a.force_weights,
                },
            )?;
            Some(m)
        }
        _ => None,
    };
    let mut opts = FitOptions {
        snr: a.snr,
        ..Default::default()
    };
    if let Some(l) = a.lambda {
        opts.iht.lambda = l;
    }
    let res = Resources {
        dict: dict.as_ref(),
        model: model.as_ref(),
        region: model.as_ref().map(|m| m.cfg.encoder.region()).unwrap_or(1),
    };
    let masked = input.mask().map(|m| m.iter().filter(|&&b| b).count()).unwrap_or(input.volume.n_voxels());
    log.say(format_args!("fitting {masked} voxels with {}", method.name()));
    let fitted = fit_volume(&pipe, method, &input.volume, input.mask(), &opts, &res)?;
    log.say(format_args!("{} fitted, {} failed in {:.2}s", fitted.fitted, fitted.failed, fitted.runtime_s));
    let mut side = Sidecar::new(fitted.maps.dims(), Dtype::F64);
    side.channels = Some(kind.outputs().iter().map(|s| s.to_string()).collect());
    side.units = match kind {
        ModelKind::Ivim => "f: fraction; D, Dstar: mm^2/s",
        ModelKind::Noddi => "v_ic, v_iso, OD: fraction",
    }
    .into();
    side.mask = input.mask_stem.as_ref().map(|m| fs::canonicalize(metsc_core::data::sidecar_path(m)).map(|p| p.with_extension("").display().to_string()).unwrap_or_else(|_| m.display().to_string()));
    side.provenance = json!({
        "command": "fit",
        "method": method.name(),
        "kind": kind.name(),
        "volume": input.stem,
        "volume_sha256": input.hash,
        "weights_sha256": manifest.as_ref().map(|m| m.weights_sha256.clone()),
        "fitted": fitted.fitted,
        "failed": fitted.failed,
    });
    write_volume(&out.file("maps"), &fitted.maps, &side)?;
    let mut outputs = vec!["maps"];
    if dict.is_some() {
        outputs.push("dict");
    }
    out.finish(&outputs)
}

fn net_config(a: &NetArgs, kind: ModelKind, channels: usize) -> Result<ModelConfig> {
    let mut cfg = match &a.net_config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None if a.desk => desk_model(kind, channels),
        None => ModelConfig::new(kind, channels),
    };
    cfg.kind = kind;
    cfg.channels = channels;
    let e = &mut cfg.encoder;
    macro_rules! set {
        ($field:expr, $opt:expr) => {
            if let Some(v) = $opt {
                $field = v;
            }
        };
    }
    set!(e.embed_dim, a.embed_dim);
    set!(e.heads, a.heads);
    set!(e.depth, a.depth);
    set!(e.ffn_dim, a.ffn_dim);
    set!(e.dropout, a.dropout);
    set!(e.patch_size, a.patch);
    set!(e.window, a.window);
    e.positional |= a.positional;
    if let Some(k) = &a.encoder {
        e.kind = match k.as_str() {
            "transformer" => EncoderKind::Transformer,
            "conv" => EncoderKind::Conv,
            _ => return Err(Error::Usage(format!("unknown encoder {k:?}; expected transformer or conv"))),
        };
    }
    let d = &mut cfg.decoder;
    set!(d.n_layers, a.layers);
    set!(d.lambda_init, a.lambda_init);
    if a.unshared {
        d.weights_shared = false;
    }
    if let Some(k) = &a.decoder {
        d.kind = match k.as_str() {
            "unrolled" => DecoderKind::Unrolled,
            "model_free" | "model-free" => DecoderKind::ModelFree,
            _ => return Err(Error::Usage(format!("unknown decoder {k:?}; expected unrolled or model_free"))),
        };
    }
    if a.no_skip {
        cfg.skip = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs, log: &Log) -> Result<()> {
    let kind = ModelKind::parse(&a.kind)?;
    if !a.truth.is_empty() && a.truth.len() != a.data.len() {
        return Err(Error::Usage(format!("{} --truth stems for {} --data volumes", a.truth.len(), a.data.len())));
    }
    if !(0.0..1.0).contains(&a.val_frac) {
        return Err(Error::Usage(format!("--val-frac {} outside [0, 1)", a.val_frac)));
    }
    let mut subjects = Vec::new();
    for (i, d) in a.data.iter().enumerate() {
        let input = Input::load(d, None, None)?;
        let tstem = a.truth.get(i).cloned().unwrap_or_else(|| default_truth(&volume_stem(d)));
        let (truth, _) = read_volume(&tstem)?;
        let [h, w, s, c] = truth.dims();
        if [h, w, s] != input.volume.dims()[..3] || c < 3 {
            return Err(Error::Data(format!("truth {} of dims {:?} does not fit {}", tstem.display(), truth.dims(), input.stem.display())));
        }
        if let Some(first) = subjects.first().map(|(f, _): &(Input, Volume)| f.scheme.hash()) {
            if first != input.scheme.hash() {
                return Err(Error::Data(format!("{} was acquired with another scheme", input.stem.display())));
            }
        }
        subjects.push((input, truth));
    }
    let sel = selection(&a.select)?.unwrap_or(Selection::Full);
    let pipe = pipeline(kind, &subjects[0].0, &sel)?;
    let mut tcfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        warmup_epochs: a.warmup.min(a.epochs),
        seed: a.seed,
        patience: a.patience,
        ..Default::default()
    };
    tcfg.adam = Default::default();
    let cfg = net_config(&a.net, kind, pipe.channels())?;
    let config = json!({
        "kind": kind,
        "data": subjects.iter().map(|(i, _)| i.hash.clone()).collect::<Vec<_>>(),
        "truth": subjects.iter().map(|(_, t)| sha256_hex(&metsc_core::data::encode(t, Dtype::F64))).collect::<Vec<_>>(),
        "selection": sel,
        "val_frac": a.val_frac,
        "train": tcfg,
        "net": cfg,
        "dict": a.dict,
        "dict_size": a.dict_size,
    });
    let out = OutDir::claim(&a.out, "train", config.clone(), a.force)?;
    let quad = SphericalQuadrature::default();
    let dict = dictionary(&pipe, a.dict.as_deref(), a.dict_size, &quad)?;
    let mut model = Model::new(
        cfg,
        dict.binding(),
        &pipe.input_scheme()?.hash(),
        &InitOptions {
            seed: a.seed,
            ..Default::default()
        },
    )?;
    let region = model.cfg.encoder.region();
    let mut parts = Vec::new();
    let mut labels = Vec::new();
    for (k, (input, truth)) in subjects.iter().enumerate() {
        let set = pipe.patches(&input.volume, input.mask(), region, Some(truth))?;
        if set.skipped > 0 {
            log.say(format_args!("{}: skipped {} voxels without positive unweighted signal", input.stem.display(), set.skipped));
        }
        let s: Samples<f64> = samples_from_patches(&set, 3)?;
        labels.extend(std::iter::repeat_n(k, s.len()));
        parts.push(s);
    }
    let all = Samples::concat(&parts)?;
    let (tr, val) = if a.val_frac == 0.0 {
        (all.clone(), all)
    } else {
        let fr = [1.0 - a.val_frac, a.val_frac];
        let split = if subjects.len() >= 2 {
            split_dataset(&labels, &fr, a.seed)?
        } else {
            log.say("one subject: validation voxels are drawn from it");
            split_indices(all.len(), &fr, a.seed)?
        };
        (all.rows(&split[0])?, all.rows(&split[1])?)
    };
    log.say(format_args!(
        "training {} model ({} parameters) on {} samples, validating on {}",
        kind.name(),
        model.params.count(),
        tr.len(),
        val.len()
    ));
    let history = fit_network(&mut model, &tr, &val, &tcfg)?;
    if let Some(last) = history.epochs.last() {
        log.say(format_args!("epoch {}: train {:.5} val {:.5}", last.epoch + 1, last.train_loss, last.val_loss));
    }
    let extra = json!({
        "kind": kind,
        "selection": sel,
        "region": region,
        "full_scheme_hash": subjects[0].0.scheme.hash(),
        "config_hash": config_hash(&config),
    });
    save_with(&out.file("model"), &model, a.seed, Some(&tcfg), &history, extra)?;
    save_dictionary(&out.file("dict"), &dict)?;
    let mut csv = String::from("epoch,train_loss,val_loss,lr\n");
    for e in &history.epochs {
        let _ = writeln!(csv, "{},{:?},{:?},{:?}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
    let hist = out.file("history.csv");
    fs::write(&hist, csv).map_err(|e| Error::io(&hist, e))?;
    log.say(format_args!("wrote {}", out.path.display()));
    out.finish(&["model", "dict", "history.csv"])
}

struct Maps {
    label: String,
    seed: u64,
    rows: Vec<Vec<f64>>,
}

/// Rows of prediction and truth over the voxels of `mask` (or everywhere).
fn paired_rows(pred: &Path, truth: &Path, mask: Option<&Path>) -> Result<(Maps, Vec<f64>, Vec<f64>, Vec<String>, String)> {
    let (p, pside) = read_volume(pred)?;
    let (t, _) = read_volume(truth)?;
    let (pd, td) = (p.dims(), t.dims());
    if pd[..3] != td[..3] || td[3] < pd[3] {
        return Err(Error::Dimension(format!("prediction {pd:?} and truth {td:?} do not match")));
    }
    let mask_stem = mask.map(Path::to_path_buf).or_else(|| pside.mask.as_ref().map(|m| metsc_core::data::sibling(pred, m)));
    let m = mask_stem.as_deref().map(|m| metsc_core::data::read_mask(m, [pd[0], pd[1], pd[2]])).transpose()?;
    let c = pd[3];
    let mut pr = Vec::new();
    let mut tr = Vec::new();
    for v in 0..p.n_voxels() {
        if m.as_ref().is_none_or(|m| m[v]) {
            pr.extend_from_slice(p.voxel(v));
            tr.extend_from_slice(&t.voxel(v)[..c]);
        }
    }
    let names = pside.channels.clone().unwrap_or_else(|| (0..c).map(|k| format!("p{k}")).collect());
    let label = pside.provenance.get("method").and_then(Value::as_str).unwrap_or("pred").to_string();
    let seed = pside.provenance.get("seed").and_then(Value::as_u64).unwrap_or(0);
    let th = sha256_hex(&metsc_core::data::encode(&t, Dtype::F64));
    Ok((Maps { label, seed, rows: Vec::new() }, pr, tr, names, th))
}

fn per_subject(preds: &[std::path::PathBuf], truths: &[std::path::PathBuf], mask: Option<&Path>) -> Result<(MethodResult, Vec<Vec<f64>>, Vec<String>, String)> {
    let mut all_p = Vec::new();
    let mut all_t = Vec::new();
    let mut mse = Vec::new();
    let mut names = Vec::new();
    let mut hashes = Vec::new();
    let mut info = None;
    for (p, t) in preds.iter().zip(truths) {
        let (m, pr, tr, n, th) = paired_rows(p, t, mask)?;
        let refs: Vec<&str> = n.iter().map(String::as_str).collect();
        mse.push(param_metrics(&pr, &tr, &refs)?.iter().map(|x| x.mse).collect());
        all_p.extend(pr);
        all_t.extend(tr);
        names = n;
        hashes.push(th);
        info.get_or_insert(m);
    }
    let info = info.expect("at least one prediction");
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let metrics = param_metrics(&all_p, &all_t, &refs)?;
    let _ = info.rows;
    Ok((
        MethodResult {
            method: info.label,
            seed: info.seed,
            metrics,
            runtime_s: 0.0,
        },
        mse,
        names,
        sha256_hex(hashes.join(",").as_bytes()),
    ))
}

pub fn evaluate(a: &EvaluateArgs, log: &Log) -> Result<()> {
    if a.pred.len() != a.truth.len() {
        return Err(Error::Usage(format!("{} --pred stems for {} --truth stems", a.pred.len(), a.truth.len())));
    }
    if !a.compare.is_empty() && a.compare.len() != a.pred.len() {
        return Err(Error::Usage(format!("{} --compare stems for {} --pred stems", a.compare.len(), a.pred.len())));
    }
    let hashes = |v: &[std::path::PathBuf]| -> Result<Vec<String>> { v.iter().map(|p| file_hash(&metsc_core::data::raw_path(p))).collect() };
    let config = json!({
        "pred": hashes(&a.pred)?,
        "compare": hashes(&a.compare)?,
        "mask": a.mask.as_ref().map(|m| file_hash(&metsc_core::data::raw_path(m))).transpose()?,
    });
    let (ra, mse_a, names, dataset_hash) = per_subject(&a.pred, &a.truth, a.mask.as_deref())?;
    let mut report = Report::new(a.name.clone(), config.clone(), dataset_hash);
    let label_a = ra.method.clone();
    report.results.push(ra);
    if !a.compare.is_empty() {
        let (mut rb, mse_b, _, _) = per_subject(&a.compare, &a.truth, a.mask.as_deref())?;
        if rb.method == label_a {
            rb.method = format!("{}_b", rb.method);
        }
        if a.pred.len() < 2 {
            log.say("paired t-test skipped: it needs at least two subjects");
        }
        for (k, n) in names.iter().enumerate().filter(|_| a.pred.len() >= 2) {
            let xa: Vec<f64> = mse_a.iter().map(|r| r[k]).collect();
            let xb: Vec<f64> = mse_b.iter().map(|r| r[k]).collect();
            report.tests.push(NamedTest {
                parameter: n.clone(),
                a: label_a.clone(),
                b: rb.method.clone(),
                test: paired_t_test(&xa, &xb)?,
            });
        }
        report.results.push(rb);
    }
    let out = OutDir::claim(&a.out, "evaluate", config, a.force)?;
    write_report(&out.path, &report, a.force)?;
    if !log.quiet {
        eprint!("{}", report.to_text());
    }
    out.finish(&[&format!("{}.json", a.name), &format!("{}.txt", a.name), &format!("{}.csv", a.name)])
}

pub fn ablate(a: &AblateArgs, log: &Log) -> Result<()> {
    let axis = Axis::parse(&a.axis)?;
    let kind = a.kind.as_deref().map(ModelKind::parse).transpose()?.unwrap_or(axis.default_kind());
    let mut sc = match kind {
        ModelKind::Ivim => Scenario::ivim(a.seed),
        ModelKind::Noddi => Scenario::noddi(a.seed),
    };
    if axis == Axis::Bootstrap {
        if let SchemeSpec::MultiShell { dirs, .. } = &mut sc.scheme {
            *dirs = (*dirs).max(2 * a.per_shell);
        }
    }
    if let Some(d) = &a.dims {
        sc.dims = parse_dims(d)?;
    }
    if let Some(n) = a.train_subjects {
        sc.train_subjects = n;
    }
    if let Some(n) = a.test_subjects {
        sc.test_subjects = n;
    }
    sc.snr = parse_snr(&a.snr)?;
    let mut tcfg = desk_training(a.epochs, a.seed);
    tcfg.batch = a.batch;
    tcfg.lr = a.lr;
    let mut base = AblationBase::new(sc, tcfg);
    base.bootstrap_per_shell = a.per_shell;
    base.baselines = a.baselines.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?;
    if base.baselines.contains(&Method::Metsc) {
        return Err(Error::Usage("metsc is always evaluated; list only classic baselines".into()));
    }
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => axis.default_grid(),
    };
    let config = json!({ "axis": axis, "grid": grid, "base": base });
    let out = OutDir::claim(&a.out, "ablate", config, a.force)?;
    let quad = SphericalQuadrature::default();
    let res = run_ablation(axis, &grid, &base, &quad, |m| log.say(m))?;
    let mut outputs = Vec::new();
    for r in res.cells.iter().chain(std::iter::once(&res.summary)) {
        write_report(&out.path, r, a.force)?;
        outputs.push(format!("{}.json", r.name));
    }
    if let Some(svg) = &res.svg {
        let p = out.file("snr_curve.svg");
        fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
        let mut csv = format!("snr,{}\n", kind.outputs().join(","));
        let ex = &res.summary.extra;
        let snr = ex["snr"].as_array().cloned().unwrap_or_default();
        for (i, s) in snr.iter().enumerate() {
            let vals: Vec<String> = kind.outputs().iter().map(|n| ex["rel_error"][*n][i].to_string()).collect();
            let _ = writeln!(csv, "{s},{}", vals.join(","));
        }
        let p = out.file("snr_curve.csv");
        fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
        outputs.extend(["snr_curve.svg".to_string(), "snr_curve.csv".to_string()]);
    }
    for (i, m) in res.std_maps.iter().enumerate() {
        let mut side = Sidecar::new(m.dims(), Dtype::F64);
        side.channels = Some(kind.outputs().iter().map(|s| s.to_string()).collect());
        side.provenance = json!({ "command": "ablate", "axis": axis, "grid": grid, "statistic": "sample standard deviation across bootstrap cells" });
        let name = format!("bootstrap_std_{i}");
        write_volume(&out.file(&name), m, &side)?;
        outputs.push(name);
    }
    if !log.quiet {
        eprint!("{}", res.summary.to_text());
    }
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    out.finish(&refs)
}

pub fn audit_sparsity(a: &AuditArgs, log: &Log) -> Result<()> {
    let manifest = read_manifest(&a.weights)?;
    if manifest.config.decoder.kind != DecoderKind::Unrolled {
        return Err(Error::Usage("the model-free head has no sparse code to audit".into()));
    }
    let kind = manifest.config.kind;
    let sel = resolve_selection(None, Some(&manifest))?;
    let mut codes = Vec::new();
    let mut hashes = Vec::new();
    let mut model: Option<Model<f64>> = None;
    for d in &a.data {
        let input = Input::load(d, None, a.mask.as_deref())?;
        let pipe = pipeline(kind, &input, &sel)?;
        if model.is_none() {
            let hash = pipe.input_scheme()?.hash();
            model = Some(
                load::<f64>(
                    &a.weights,
                    &Expect {
                        scheme_hash: Some(&hash),
                        ..Default::default()
                    },
                )?
                .0,
            );
        }
        let m = model.as_ref().expect("loaded above");
        let set = pipe.patches(&input.volume, input.mask(), m.cfg.encoder.region(), None)?;
        let (_, code) = predict_all(m, &set.inputs()?, 1024)?;
        let code = code.expect("unrolled decoder yields codes");
        codes.extend((0..code.rows()).map(|r| code.row_slice(r).to_vec()));
        hashes.push(input.hash);
    }
    let audit = sparsity_audit(&codes, a.bins)?;
    let config = json!({ "weights": manifest.weights_sha256, "data": hashes, "bins": a.bins });
    let out = OutDir::claim(&a.out, "audit-sparsity", config.clone(), a.force)?;
    let mut report = Report::new("sparsity", config, sha256_hex(hashes.join(",").as_bytes()));
    report.extra = serde_json::to_value(&audit)?;
    write_report(&out.path, &report, a.force)?;
    let mut csv = String::from("nonzero_lo,nonzero_hi,count\n");
    for b in &audit.histogram {
        let _ = writeln!(csv, "{},{},{}", b.lo, b.hi, b.count);
    }
    let p = out.file("sparsity_hist.csv");
    fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    log.say(format_args!(
        "{} codes of {} atoms: zero fraction {:.4}, mean support {:.2}",
        audit.samples, audit.atoms, audit.zero_fraction, audit.mean_support
    ));
    out.finish(&["sparsity.json", "sparsity_hist.csv"])
}
