use metsc_core::autodiff::Tensor;
use metsc_core::data::{multi_shell, Volume};
use metsc_core::dict::{IvimDictConfig, NoddiDictConfig};
use metsc_core::eval::{desk_model, fit_volume, output_box, Dictionary, FitOptions, Method, Pipeline, Resources};
use metsc_core::forward::{add_rician_noise, ivim_signal, AcquisitionScheme, IvimParams, SphericalQuadrature, IVIM_BVALUES};
use metsc_core::net::{InitOptions, Model, ModelKind};
use metsc_core::solvers::IhtConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

struct Fixture {
    pipe: Pipeline,
    dict: Dictionary,
}

fn ivim_fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let s = AcquisitionScheme::from_bvalues(&IVIM_BVALUES).unwrap();
        let pipe = Pipeline::ivim(s.clone(), (0..s.len()).collect());
        let dict = Dictionary::build_ivim(&pipe, &IvimDictConfig { j: 30, ..Default::default() }).unwrap();
        Fixture { pipe, dict }
    })
}

fn noddi_fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let s = multi_shell(&[1000.0, 2000.0], 12, 2).unwrap();
        let pipe = Pipeline::noddi(s.clone(), (0..s.len()).collect()).unwrap();
        let cfg = NoddiDictConfig { j_vic: 5, j_kappa: 5, ..Default::default() };
        let dict = Dictionary::build_noddi(&pipe, &cfg, &SphericalQuadrature::default()).unwrap();
        Fixture { pipe, dict }
    })
}

/// A model whose every weight has been pushed away from its initial value,
/// standing in for an arbitrary trained state.
fn perturbed(f: &Fixture, kind: ModelKind, seed: u64, scale: f64) -> Model<f64> {
    let cfg = desk_model(kind, f.pipe.channels());
    let hash = f.pipe.input_scheme().unwrap().hash();
    let mut m = Model::new(cfg, f.dict.binding(), &hash, &InitOptions { seed, encoder_noise: 0.1 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in m.params.tensors_mut() {
        for v in t.data_mut() {
            *v += scale * rng.gen_range(-1.0..1.0) * v.abs().max(1e-3);
        }
    }
    m
}

fn check_box(model: &Model<f64>, input: Vec<f64>) -> Result<(), TestCaseError> {
    let rows = input.len() / model.cfg.input_len();
    let x = Tensor::matrix(rows, model.cfg.input_len(), input).unwrap();
    let (out, _) = model.predict(&x).unwrap();
    let bx = output_box(model);
    for i in 0..rows {
        for (k, &(lo, hi)) in bx.iter().enumerate() {
            let v = out.at(i, k);
            prop_assert!(v.is_finite() && v >= lo && v <= hi, "output {k} = {v} outside [{lo}, {hi}]");
        }
    }
    Ok(())
}

fn inputs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-5.0f64..5.0, 0.0f64..1.5, Just(0.0), -1e3f64..1e3], len * 2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ivim_outputs_stay_in_the_box(seed in any::<u64>(), scale in 0.0f64..2.0, x in inputs(25 * 10)) {
        let f = ivim_fixture();
        let m = perturbed(f, ModelKind::Ivim, seed, scale);
        prop_assert_eq!(m.cfg.input_len(), 25 * 10);
        check_box(&m, x)?;
    }

    #[test]
    fn noddi_outputs_stay_in_the_box(seed in any::<u64>(), scale in 0.0f64..2.0, x in inputs(25 * 13)) {
        let f = noddi_fixture();
        let m = perturbed(f, ModelKind::Noddi, seed, scale);
        prop_assert_eq!(m.cfg.input_len(), 25 * f.pipe.channels());
        check_box(&m, x)?;
    }
}

fn random_ivim_volume(dims: [usize; 3], s: &AcquisitionScheme<f64>, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product::<usize>();
    let mut data = Vec::with_capacity(n * s.len());
    for _ in 0..n {
        let p = IvimParams::new(rng.gen_range(0.05..0.5), rng.gen_range(0.5e-3..2.5e-3), rng.gen_range(10e-3..80e-3), rng.gen_range(200.0..900.0));
        data.extend(add_rician_noise(&ivim_signal(&p, s), 30.0, p.s0, rng.gen()).unwrap());
    }
    Volume::new([dims[0], dims[1], dims[2], s.len()], data).unwrap()
}

#[test]
fn initial_network_equals_iht_on_a_volume() {
    let f = ivim_fixture();
    let vol = random_ivim_volume([12, 10, 2], &f.pipe.full, 3);
    let mut cfg = desk_model(ModelKind::Ivim, f.pipe.channels());
    cfg.encoder.depth = 0;
    let hash = f.pipe.input_scheme().unwrap().hash();
    let model = Model::new(cfg.clone(), f.dict.binding(), &hash, &InitOptions::default()).unwrap();
    let res = Resources { dict: Some(&f.dict), model: Some(&model), region: cfg.encoder.region() };
    let opts = FitOptions {
        iht: IhtConfig { lambda: model.thresholds()[0], max_iters: cfg.decoder.n_layers, tol: 0.0, ..Default::default() },
        ..Default::default()
    };
    let net = fit_volume(&f.pipe, Method::Metsc, &vol, None, &opts, &res).unwrap();
    let iht = fit_volume(&f.pipe, Method::Iht, &vol, None, &opts, &res).unwrap();
    assert_eq!(net.fitted, vol.n_voxels());
    for (a, b) in net.maps.data().iter().zip(iht.maps.data()) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-3), "{a} vs {b}");
    }
}

#[test]
fn constant_volume_gives_constant_maps() {
    let f = ivim_fixture();
    let p = IvimParams::new(0.2, 1.2e-3, 30e-3, 500.0);
    let y = ivim_signal(&p, &f.pipe.full);
    let dims = [7, 6, 1, y.len()];
    let vol = Volume::new(dims, (0..42).flat_map(|_| y.clone()).collect()).unwrap();
    let model = perturbed(f, ModelKind::Ivim, 9, 0.3);
    let res = Resources { dict: Some(&f.dict), model: Some(&model), region: model.cfg.encoder.region() };
    let out = fit_volume(&f.pipe, Method::Metsc, &vol, None, &FitOptions::default(), &res).unwrap();
    // border patches see zero padding, so only voxels whose region lies inside compare
    let r = model.cfg.encoder.region() / 2;
    let inner: Vec<&[f64]> = (r..7 - r).flat_map(|h| (r..6 - r).map(move |w| (h, w))).map(|(h, w)| out.maps.at(h, w, 0)).collect();
    assert!(!inner.is_empty());
    for v in &inner {
        assert_eq!(*v, inner[0]);
    }
}
