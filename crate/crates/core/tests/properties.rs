use harmap::atlas::find_case;
use harmap::domain::{Chart, DomainPoint};
use harmap::pullback::{Dir, FieldGerm, MapGerm};
use harmap::report::{Expectation, Part, Status, Worst};
use harmap::JetOrder;
use num_complex::Complex64;
use proptest::prelude::*;

const CASES: [&str; 4] = ["identity-s2", "veronese-s4", "cubic-cp2", "veronese-seq-cp2"];

fn germ(case: &str, re: f64, im: f64) -> MapGerm {
    let c = find_case(case).unwrap();
    let p = DomainPoint::new(Chart::North, Complex64::new(re, im));
    c.map.germ(p, JetOrder::of(3, 3, 0), 0.0, None).unwrap()
}

/// A few sections along the map: its derivatives and a covariant second derivative.
fn sections(p: &MapGerm) -> Vec<FieldGerm> {
    let a = p.d_z().unwrap();
    let b = p.d_zbar().unwrap();
    let c = p.cov_d(Dir::Z, &a).unwrap();
    let d = p.cov_d(Dir::Zbar, &b).unwrap().add(&c.scale(Complex64::new(0.3, -0.7)));
    vec![a, b, c, d]
}

fn gap(x: &FieldGerm, y: &FieldGerm) -> f64 {
    x.sub(y).max_abs()
}

fn worst() -> Worst {
    Worst {
        node: None,
        chart: None,
        coord: None,
        theta: None,
        phi: None,
        item: "x".into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bilinear_pairing_is_symmetric(case in 0..CASES.len(), re in -1.5..1.5f64, im in -1.5..1.5f64) {
        let p = germ(CASES[case], re, im);
        let s = sections(&p);
        for a in &s {
            for b in &s {
                prop_assert_eq!(p.pair(a, b).value(), p.pair(b, a).value());
            }
        }
    }

    #[test]
    fn hermitian_norm_is_real_and_nonnegative(case in 0..CASES.len(), re in -1.5..1.5f64, im in -1.5..1.5f64) {
        let p = germ(CASES[case], re, im);
        for v in sections(&p) {
            let h = p.herm(&v, &v).value();
            prop_assert!(h.re >= -1e-14);
            prop_assert!(h.im.abs() <= 1e-12 * (1.0 + h.re));
        }
    }

    #[test]
    fn curvature_is_antisymmetric_and_cyclic(case in 0..CASES.len(), re in -1.5..1.5f64, im in -1.5..1.5f64) {
        let p = germ(CASES[case], re, im).truncate(JetOrder::of(0, 0, 0));
        let s: Vec<FieldGerm> = sections(&germ(CASES[case], re, im))
            .iter()
            .map(|v| v.truncate(JetOrder::of(0, 0, 0)))
            .collect();
        let (x, y, z) = (&s[0], &s[2], &s[3]);
        let scale = 1.0 + s.iter().map(FieldGerm::max_abs).fold(0.0, f64::max).powi(3);
        let xyz = p.curvature(x, y, z).unwrap();
        let yxz = p.curvature(y, x, z).unwrap();
        prop_assert!(gap(&xyz, &yxz.scale((-1.0).into())) <= 1e-12 * scale);
        let cyc = xyz.add(&p.curvature(y, z, x).unwrap()).add(&p.curvature(z, x, y).unwrap());
        prop_assert!(cyc.max_abs() <= 1e-12 * scale);
    }

    #[test]
    fn derivatives_of_real_maps_are_conjugate(case in 0..CASES.len(), re in -1.5..1.5f64, im in -1.5..1.5f64) {
        let p = germ(CASES[case], re, im);
        let a = p.d_z().unwrap();
        let b = p.d_zbar().unwrap();
        prop_assert!(gap(&p.conj(&a), &b) <= 1e-12 * (1.0 + a.max_abs()));
    }

    #[test]
    fn margin_sign_follows_the_threshold(
        residuals in prop::collection::vec(0.0..1e-6f64, 1..20),
        threshold in 1e-12..1e-6f64,
    ) {
        let max = residuals.iter().copied().fold(0.0, f64::max);
        let zero = Part::new("p", Expectation::Zero, threshold, &residuals, Some((max, worst())));
        prop_assert_eq!(zero.status == Status::Pass, max <= threshold);
        let nonzero = Part::new("p", Expectation::Nonzero, threshold, &residuals, Some((max, worst())));
        prop_assert_eq!(nonzero.status == Status::Pass, max >= threshold);
    }
}
