use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor, Unary};
use crate::dict::{extract_ivim, IvimDictConfig, IvimDictionary};
use crate::forward::{ivim_signal, AcquisitionScheme, IvimParams};
use crate::solvers::{IhtConfig, IhtOperator, StepRule};

fn scheme() -> AcquisitionScheme<f64> {
    AcquisitionScheme::from_bvalues(&[0.0, 20.0, 50.0, 100.0, 200.0, 400.0, 800.0]).unwrap()
}

fn dict(s: &AcquisitionScheme<f64>) -> IvimDictionary<f64> {
    let cfg = IvimDictConfig {
        j: 8,
        ..Default::default()
    };
    IvimDictionary::build(s, &cfg).unwrap()
}

fn small_cfg(channels: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(ModelKind::Ivim, channels);
    cfg.encoder.embed_dim = 8;
    cfg.encoder.heads = 2;
    cfg.encoder.depth = 1;
    cfg.encoder.ffn_dim = 12;
    cfg.encoder.dropout = 0.0;
    cfg.decoder.n_layers = 4;
    cfg.decoder.lambda_init = 1e-3;
    cfg
}

/// Regions whose every voxel carries the same IVIM signal, plus targets.
fn uniform_regions(cfg: &ModelConfig, s: &AcquisitionScheme<f64>, n: usize, seed: u64) -> Samples<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.encoder.region();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..n {
        let p = IvimParams::new(rng.gen_range(0.05..0.4), rng.gen_range(0.5e-3..2.5e-3), rng.gen_range(10e-3..60e-3), 1.0);
        let y = ivim_signal(&p, s);
        for _ in 0..r * r {
            inputs.extend(y.iter().map(|v| v + rng.gen_range(-0.01..0.01)));
        }
        targets.extend(p.to_array());
    }
    Samples::new(
        Tensor::matrix(n, r * r * s.len(), inputs).unwrap(),
        Tensor::matrix(n, 3, targets).unwrap(),
    )
    .unwrap()
}

fn centre(sample: &[f64], cfg: &ModelConfig) -> Vec<f64> {
    let r = cfg.encoder.region();
    let c = cfg.channels;
    let mid = ((r / 2) * r + r / 2) * c;
    sample[mid..mid + c].to_vec()
}

#[test]
fn initial_model_reproduces_iht_and_extraction() {
    let s = scheme();
    let d = dict(&s);
    let cfg = small_cfg(s.len());
    let init = InitOptions {
        seed: 3,
        encoder_noise: 0.05,
    };
    let model = Model::new(cfg.clone(), DictBinding::Ivim(&d), &s.hash(), &init).unwrap();
    let data = uniform_regions(&cfg, &s, 6, 1);
    let (out, code) = model.predict(&data.inputs).unwrap();
    let code = code.unwrap();
    let op = IhtOperator::new(d.atoms(), StepRule::Auto).unwrap();
    let iht = IhtConfig {
        lambda: model.thresholds()[0],
        max_iters: cfg.decoder.n_layers,
        tol: 0.0,
        ..Default::default()
    };
    for i in 0..data.len() {
        let y = centre(data.inputs.row_slice(i), &cfg);
        let x = op.solve(&y, &iht).unwrap().x;
        for (a, b) in x.iter().zip(code.row_slice(i)) {
            assert!((a - b).abs() < 1e-12, "code {a} vs {b}");
        }
        let p = extract_ivim(&x, &d).unwrap().to_array();
        for (k, v) in p.iter().enumerate() {
            assert!((v - out.at(i, k)).abs() < 1e-12 * v.abs().max(1.0));
        }
    }
}

#[test]
fn untrained_is_deterministic_and_zero_epochs_keep_weights() {
    let s = scheme();
    let d = dict(&s);
    let cfg = small_cfg(s.len());
    let a = Model::new(cfg.clone(), DictBinding::Ivim(&d), &s.hash(), &InitOptions::default()).unwrap();
    let mut b = Model::new(cfg.clone(), DictBinding::Ivim(&d), &s.hash(), &InitOptions::default()).unwrap();
    assert_eq!(a.params, b.params);
    let data = uniform_regions(&cfg, &s, 8, 2);
    let tc = TrainConfig {
        epochs: 0,
        ..Default::default()
    };
    let h = train(&mut b, &data, &data, &tc).unwrap();
    assert!(h.epochs.is_empty());
    assert_eq!(a.params, b.params);
    assert_eq!(a.predict(&data.inputs).unwrap().0, b.predict(&data.inputs).unwrap().0);
}

#[test]
fn training_is_reproducible_and_reduces_loss() {
    let s = scheme();
    let d = dict(&s);
    let cfg = small_cfg(s.len());
    let data = uniform_regions(&cfg, &s, 64, 4);
    let tc = TrainConfig {
        epochs: 6,
        batch: 16,
        lr: 3e-3,
        warmup_epochs: 1,
        ..Default::default()
    };
    let run = || {
        let mut m = Model::new(cfg.clone(), DictBinding::Ivim(&d), &s.hash(), &InitOptions::default()).unwrap();
        let h = train(&mut m, &data, &data, &tc).unwrap();
        (m, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(m1.params, m2.params);
    assert_eq!(h1, h2);
    let last = h1.epochs.last().unwrap().val_loss;
    assert!(last < h1.initial_val_loss, "{} -> {last}", h1.initial_val_loss);
}

#[test]
fn checkpoint_round_trip_and_hash_guard() {
    let s = scheme();
    let d = dict(&s);
    let cfg = small_cfg(s.len());
    let model = Model::new(cfg.clone(), DictBinding::Ivim(&d), &s.hash(), &InitOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("m");
    checkpoint::save(&stem, &model, 0, None, &History::default()).unwrap();
    let (back, manifest) = checkpoint::load::<f64>(&stem, &checkpoint::Expect::default()).unwrap();
    assert_eq!(back.params, model.params);
    assert_eq!(manifest.meta, model.meta);
    let data = uniform_regions(&cfg, &s, 3, 5);
    assert_eq!(back.predict(&data.inputs).unwrap().0, model.predict(&data.inputs).unwrap().0);

    let wrong = checkpoint::Expect {
        scheme_hash: Some("deadbeef"),
        ..Default::default()
    };
    assert!(matches!(
        checkpoint::load::<f64>(&stem, &wrong),
        Err(crate::Error::HashMismatch { .. })
    ));
    let forced = checkpoint::Expect {
        force: true,
        ..wrong
    };
    assert!(checkpoint::load::<f64>(&stem, &forced).is_ok());

    let mut bytes = std::fs::read(stem.with_extension("bin")).unwrap();
    bytes[0] ^= 1;
    std::fs::write(stem.with_extension("bin"), bytes).unwrap();
    assert!(checkpoint::load::<f64>(&stem, &checkpoint::Expect::default()).is_err());
}

/// `Σ out·weights`, a generic smooth readout for gradient checks.
fn readout(model: &Model<f64>, input: &Tensor<f64>, weights: &Tensor<f64>) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = model.forward(&mut tape, input, &mut rng).unwrap();
    let w = tape.constant(weights.clone());
    let prod = tape.mul(f.out, w).unwrap();
    let loss = tape.sum(prod);
    let g = tape.backward(loss).unwrap();
    let grads = f.params.iter().map(|&v| g.get(v)).collect();
    (tape.value(loss).data()[0], grads)
}

fn gradient_check(cfg: ModelConfig, skip_prefixes: &[&str]) {
    let s = scheme();
    let d = dict(&s);
    let mut model = Model::new(cfg.clone(), DictBinding::Ivim(&d), &s.hash(), &InitOptions::default()).unwrap();
    model.meta.target_std = vec![0.1, 1e-3, 1e-2];
    model.meta.target_mean = vec![0.2, 1e-3, 3e-2];
    let data = uniform_regions(&cfg, &s, 3, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let weights = Tensor::matrix(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let (_, grads) = readout(&model, &data.inputs, &weights);
    let names = model.params.names().to_vec();
    let mut checked = 0;
    for (pi, name) in names.iter().enumerate() {
        if skip_prefixes.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let len = model.params.get(pi).len();
        for _ in 0..3 {
            // grid ends sit on their clamp bounds, where the loss has a kink
            let e = if name.starts_with("map.") { rng.gen_range(1..len - 1) } else { rng.gen_range(0..len) };
            let orig = model.params.get(pi).data()[e];
            let h = 1e-6 * orig.abs().max(1e-2);
            model.params.tensors_mut()[pi].data_mut()[e] = orig + h;
            let (up, _) = readout(&model, &data.inputs, &weights);
            model.params.tensors_mut()[pi].data_mut()[e] = orig - h;
            let (dn, _) = readout(&model, &data.inputs, &weights);
            model.params.tensors_mut()[pi].data_mut()[e] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = grads[pi].data()[e];
            let scale = fd.abs().max(an.abs());
            assert!((fd - an).abs() < 1e-4 * scale + 1e-7, "{name}[{e}]: fd {fd} vs analytic {an}");
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn gradients_match_finite_differences_transformer() {
    // thresholds are not differentiated (straight-through mask on a constant λ)
    gradient_check(small_cfg(7), &["dec.log_lambda"]);
}

#[test]
fn gradients_match_finite_differences_conv_unshared() {
    let mut cfg = small_cfg(7);
    cfg.encoder.kind = EncoderKind::Conv;
    cfg.encoder.positional = true;
    cfg.decoder.weights_shared = false;
    cfg.decoder.n_layers = 3;
    gradient_check(cfg, &["dec.log_lambda"]);
}

#[test]
fn gradients_match_finite_differences_model_free() {
    let mut cfg = small_cfg(7);
    cfg.decoder.kind = DecoderKind::ModelFree;
    cfg.decoder.hidden = 10;
    cfg.skip = false;
    gradient_check(cfg, &[]);
}

#[test]
fn orientation_dispersion_of_unit_kappa_is_half() {
    let mut tape = Tape::<f64>::new();
    let k = tape.param(Tensor::scalar(1.0));
    let od = tape.unary(k, Unary::OrientationDispersion);
    assert!((tape.value(od).data()[0] - 0.5).abs() < 1e-15);
}

#[test]
fn mismatched_dictionary_and_channels_are_rejected() {
    let s = scheme();
    let d = dict(&s);
    let cfg = small_cfg(s.len() + 1);
    assert!(Model::new(cfg, DictBinding::Ivim(&d), &s.hash(), &InitOptions::default()).is_err());
    let mut cfg = small_cfg(s.len());
    cfg.kind = ModelKind::Noddi;
    assert!(Model::new(cfg, DictBinding::Ivim(&d), &s.hash(), &InitOptions::default()).is_err());
}
