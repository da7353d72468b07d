use metsc_core::data::multi_shell;
use metsc_core::dict::{barycenter, extract_ivim, extract_noddi, IvimDictConfig, IvimDictionary, NoddiDictConfig, NoddiDictionary, TAU};
use metsc_core::forward::{AcquisitionScheme, SphericalQuadrature, D_PAR, IVIM_BVALUES};
use proptest::prelude::*;
use std::sync::OnceLock;

fn ivim() -> &'static IvimDictionary<f64> {
    static D: OnceLock<IvimDictionary<f64>> = OnceLock::new();
    D.get_or_init(|| {
        let s = AcquisitionScheme::from_bvalues(&IVIM_BVALUES).unwrap();
        IvimDictionary::build(&s, &IvimDictConfig { j: 20, ..Default::default() }).unwrap()
    })
}

fn small_noddi_cfg() -> NoddiDictConfig {
    NoddiDictConfig { j_vic: 4, j_kappa: 5, ..Default::default() }
}

fn noddi() -> &'static NoddiDictionary<f64> {
    static D: OnceLock<NoddiDictionary<f64>> = OnceLock::new();
    D.get_or_init(|| {
        let s = multi_shell(&[1000.0, 2000.0], 12, 2).unwrap();
        NoddiDictionary::build(&s, &small_noddi_cfg(), &SphericalQuadrature::default()).unwrap()
    })
}

/// Nonnegative codes with a mix of exact zeros and wide magnitudes.
fn code(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1e-6, 0.0f64..10.0], n)
}

fn range(g: &[f64]) -> (f64, f64) {
    (g.iter().copied().fold(f64::INFINITY, f64::min), g.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

proptest! {
    #[test]
    fn ivim_extraction_is_a_valid_parameter_set(x in code(40)) {
        let d = ivim();
        let p = extract_ivim(&x, d).unwrap();
        let (dl, dh) = range(&d.d_grid);
        let (sl, sh) = range(&d.dstar_grid);
        let eps = 1e-15;
        prop_assert!((0.0..=1.0).contains(&p.f));
        prop_assert!(p.d > 0.0 && p.d >= dl * (1.0 - eps) && p.d <= dh * (1.0 + eps));
        prop_assert!(p.dstar >= sl * (1.0 - eps) && p.dstar <= sh * (1.0 + eps));
    }

    #[test]
    fn noddi_extraction_is_a_valid_parameter_set(x in code(21)) {
        let e = extract_noddi(&x, noddi()).unwrap();
        prop_assert!((0.0..=1.0).contains(&e.v_ic));
        prop_assert!((0.0..=1.0).contains(&e.v_iso));
        prop_assert!(e.kappa >= 0.0);
        prop_assert!(e.od > 0.0 && e.od <= 1.0);
    }

    #[test]
    fn permuting_atoms_with_their_grid_keeps_barycenters(x in code(12), perm in Just((0..12).collect::<Vec<usize>>()).prop_shuffle()) {
        let grid: Vec<f64> = (0..12).map(|i| 1e-3 * (1.0 + i as f64)).collect();
        let a = barycenter(&x, &grid, TAU);
        let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let pg: Vec<f64> = perm.iter().map(|&i| grid[i]).collect();
        let b = barycenter(&px, &pg, TAU);
        prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-3));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn permuting_noddi_atoms_keeps_extraction(x in code(21), perm in Just((0..20).collect::<Vec<usize>>()).prop_shuffle()) {
        let d = noddi();
        let s = multi_shell(&[1000.0, 2000.0], 12, 2).unwrap();
        let points: Vec<(f64, f64)> = perm.iter().map(|&i| (d.vic_grid[i], d.kappa_grid[i])).collect();
        let pd = NoddiDictionary::from_points(&s, &points, d.iso_grid.clone(), D_PAR, &SphericalQuadrature::default()).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for r in 0..s.len() {
                prop_assert_eq!(pd.atoms().at(r, k), d.atoms().at(r, i));
            }
        }
        let mut px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        px.push(x[20]);
        let (a, b) = (extract_noddi(&x, d).unwrap(), extract_noddi(&px, &pd).unwrap());
        prop_assert!((a.v_ic - b.v_ic).abs() < 1e-14);
        prop_assert!((a.v_iso - b.v_iso).abs() < 1e-14);
        prop_assert!((a.od - b.od).abs() < 1e-14);
    }
}

#[test]
fn rebuilding_gives_identical_atoms() {
    let s = AcquisitionScheme::<f64>::from_bvalues(&IVIM_BVALUES).unwrap();
    let cfg = IvimDictConfig::default();
    assert_eq!(IvimDictionary::build(&s, &cfg).unwrap(), IvimDictionary::build(&s, &cfg).unwrap());
    let s = multi_shell(&[1000.0, 2000.0], 12, 2).unwrap();
    let quad = SphericalQuadrature::default();
    let a = NoddiDictionary::build(&s, &small_noddi_cfg(), &quad).unwrap();
    let b = NoddiDictionary::build(&s, &small_noddi_cfg(), &quad).unwrap();
    assert_eq!(a.atoms(), b.atoms());
}

#[test]
fn ivim_atoms_are_in_unit_interval_with_increasing_grids() {
    let d = ivim();
    assert!(d.atoms().data().iter().all(|&v| v > 0.0 && v <= 1.0));
    assert!(d.d_grid.windows(2).all(|w| w[1] > w[0]));
    assert!(d.dstar_grid.windows(2).all(|w| w[1] > w[0]));
}
