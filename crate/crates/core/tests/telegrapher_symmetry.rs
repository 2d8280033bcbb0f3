//! Invariance of an exact damped plane wave, `e^{-t} cos(2x - √3 t) + 2`,
//! which solves `P_tt + 2P_t = P_xx`.

use std::collections::BTreeMap;

use walklab::solvers::PdeKind;
use walklab::symmetry::{builtin_algebra, invariance_residual_with, parse_rational, MapOrder, SymmetryGenerator, Verdict};
use walklab::{FieldHistory, SpaceTimeGrid};

const EPS: [f64; 3] = [0.02, 0.01, 0.005];

fn plane_wave(h: f64) -> FieldHistory {
    let g = SpaceTimeGrid::new(-3.0, 3.0, (6.0 / h).round() as usize + 1, 0.5 * h, (2.0 / h).round() as usize + 1, 0.0).unwrap();
    FieldHistory::from_fn(g, 1, |_, x, t| (-t).exp() * (2.0 * x - 3f64.sqrt() * t).cos() + 2.0).unwrap()
}

fn algebra() -> Vec<SymmetryGenerator> {
    let params: BTreeMap<String, _> = [("v", "1"), ("a", "1")].map(|(k, v)| (k.to_string(), parse_rational(v).unwrap())).into();
    builtin_algebra("telegrapher", &params).unwrap().generators
}

#[test]
fn all_generators_map_the_wave_to_solutions() {
    let kind = PdeKind::Telegrapher { v: 1.0, a: 1.0 };
    let f = plane_wave(0.01);
    for g in algebra() {
        let fit = invariance_residual_with(&kind, &f, &g, &EPS, MapOrder::Exact).unwrap();
        assert_eq!(fit.verdict, Verdict::Exact, "{}: {fit:?}", g.label);
    }
}

#[test]
fn linearized_damped_boost_leaves_second_order_excess() {
    let kind = PdeKind::Telegrapher { v: 1.0, a: 1.0 };
    let boost = algebra().into_iter().find(|g| g.label == "v4").unwrap();
    for h in [0.02, 0.01] {
        let fit = invariance_residual_with(&kind, &plane_wave(h), &boost, &EPS, MapOrder::FirstOrder).unwrap();
        assert!((fit.fitted_order - 2.0).abs() < 0.1, "h {h}: {fit:?}");
        assert!(fit.is_symmetry());
    }
}

#[test]
fn galilean_shear_is_rejected() {
    let kind = PdeKind::Telegrapher { v: 1.0, a: 1.0 };
    let control = SymmetryGenerator::parse("control", "t", "0", "0", &BTreeMap::new()).unwrap();
    let fit = invariance_residual_with(&kind, &plane_wave(0.01), &control, &EPS, MapOrder::Exact).unwrap();
    assert_eq!(fit.verdict, Verdict::NotSymmetric);
    assert!(!fit.is_symmetry());
}
