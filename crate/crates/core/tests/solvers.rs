use metsc_core::autodiff::Tensor;
use metsc_core::dict::{IvimDictConfig, IvimDictionary};
use metsc_core::forward::{add_rician_noise, ivim_signal, AcquisitionScheme, IvimParams, IVIM_BVALUES};
use metsc_core::solvers::{kkt_residual, nnls_fit, residual_sq, IhtConfig, IhtOperator, StepRule};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ivim_dict() -> IvimDictionary<f64> {
    let s = AcquisitionScheme::from_bvalues(&IVIM_BVALUES).unwrap();
    IvimDictionary::build(&s, &IvimDictConfig { j: 50, ..Default::default() }).unwrap()
}

fn noisy_voxel(rng: &mut ChaCha8Rng, s: &AcquisitionScheme<f64>) -> Vec<f64> {
    let p = IvimParams::new(rng.gen_range(0.05..0.5), rng.gen_range(0.5e-3..2.5e-3), rng.gen_range(10e-3..80e-3), 1.0);
    add_rician_noise(&ivim_signal(&p, s), 30.0, 1.0, rng.gen()).unwrap()
}

#[test]
fn iht_residual_never_increases() {
    let d = ivim_dict();
    let s = AcquisitionScheme::from_bvalues(&IVIM_BVALUES).unwrap();
    let op = IhtOperator::new(d.atoms(), StepRule::Auto).unwrap();
    assert!(op.step * op.norm_sq <= 1.0);
    let cfg = IhtConfig { max_iters: 200, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for v in 0..1000 {
        let y = noisy_voxel(&mut rng, &s);
        let mut prev = residual_sq(&y, d.atoms(), &vec![0.0; d.cols()]);
        op.solve_observed(&y, &cfg, |x| {
            let r = residual_sq(&y, d.atoms(), x);
            assert!(r <= prev + 1e-12, "voxel {v}: {prev} -> {r}");
            prev = r;
        })
        .unwrap();
    }
}

#[test]
fn iht_support_stays_within_first_iterate_survivors() {
    let d = ivim_dict();
    let s = AcquisitionScheme::from_bvalues(&IVIM_BVALUES).unwrap();
    let op = IhtOperator::new(d.atoms(), StepRule::Auto).unwrap();
    let cfg = IhtConfig { lambda: 1e-3, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    for _ in 0..500 {
        let y = noisy_voxel(&mut rng, &s);
        let mut first = None;
        let code = op
            .solve_observed(&y, &cfg, |x| {
                if first.is_none() {
                    first = Some(x.iter().filter(|&&v| v >= cfg.lambda).count());
                }
            })
            .unwrap();
        let support = code.x.iter().filter(|&&v| v != 0.0).count();
        if support > first.unwrap() {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}

fn random_dictionary(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for j in 0..cols {
        let n = (0..rows).map(|i| a[i * cols + j].powi(2)).sum::<f64>().sqrt();
        for i in 0..rows {
            a[i * cols + j] /= n;
        }
    }
    Tensor::matrix(rows, cols, a).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nnls_satisfies_kkt(seed in any::<u64>(), y in prop::collection::vec(-1.0f64..2.0, 8)) {
        let a = random_dictionary(8, 15, seed);
        let out = nnls_fit(&y, &a).unwrap();
        prop_assert!(out.converged);
        prop_assert!(out.x.iter().all(|&v| v >= 0.0));
        prop_assert!(kkt_residual(&y, &a, &out.x) < 1e-8);
    }

    #[test]
    fn iht_codes_are_nonnegative_and_thresholded(seed in any::<u64>(), lambda in 1e-3f64..0.3) {
        let a = random_dictionary(10, 25, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let y: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let op = IhtOperator::new(&a, StepRule::Auto).unwrap();
        let x = op.solve(&y, &IhtConfig { lambda, max_iters: 300, ..Default::default() }).unwrap().x;
        prop_assert!(x.iter().all(|&v| v == 0.0 || v >= lambda));
    }
}
