use order_density::arboreal::{ArborealSpec, KummerSpec};
use order_density::curves::{empirical_density, CurveSpec};
use order_density::density::{
    arboreal_density, closed_density, derived_measure_model, DeltaRule, ImageType, Method,
};
use order_density::exactnum::Rational;
use order_density::matgroups::{GroupSpec, SizeGuard};
use order_density::measures::{measure_table, split_coset_tables};
use order_density::Error;

fn q(s: &str) -> Rational {
    s.parse().unwrap()
}

const ORDER6: &str = r#"{"ell":3,"level":3,"mode":"preimage","base_level":1,
    "generators":[[[1,1],[0,1]],[[-1,0],[0,1]]]}"#;

#[test]
fn explicit_gl2_preimage_series() {
    let spec = GroupSpec::from_json(ORDER6).unwrap();
    let model =
        derived_measure_model(&ImageType::Explicit(spec), 3, 3, SizeGuard::default()).unwrap();
    assert!(model.confirmed);
    assert_eq!(model.series(&DeltaRule::Defect(0)).unwrap(), q("23/104"));
    assert_eq!(model.total().unwrap(), Rational::one());
}

#[test]
fn spec_round_trip_and_tables() {
    let spec = GroupSpec::from_json(ORDER6).unwrap();
    let text = serde_json::to_string(&spec).unwrap();
    assert_eq!(GroupSpec::from_json(&text).unwrap(), spec);
    let g = spec.build(SizeGuard::default()).unwrap();
    assert_eq!(g.order(), 6 * 3usize.pow(8));
    let t = measure_table(&g);
    assert_eq!(t.total(), Rational::one());
    assert_eq!(t.mu(0, 1).unwrap(), q("5/9"));
    assert_eq!(t.mu(1, 0).unwrap(), q("8/81"));
}

#[test]
fn normalizer_specs_split_into_cosets() {
    for (ell, extra) in [(3, r#""model":"companion","d":2"#), (5, r#""model":"diagonal""#)] {
        let text = format!(r#"{{"ell":{ell},"level":2,"mode":"normalizer",{extra}}}"#);
        let spec = GroupSpec::from_json(&text).unwrap();
        let g = spec.build(SizeGuard::default()).unwrap();
        let (c, s) = split_coset_tables(&g).unwrap();
        assert_eq!(c.total(), Rational::one());
        assert_eq!(s.total(), Rational::one());
        let avg = c.average(&s).unwrap();
        let whole = measure_table(&g);
        assert!(avg.entries().eq(whole.entries()));
        assert!((0..=2).all(|a| avg.censored(a) == whole.censored(a)));
    }
}

#[test]
fn oversized_specs_hit_the_guard() {
    let spec = GroupSpec::from_json(r#"{"ell":3,"level":4,"mode":"full"}"#).unwrap();
    assert!(matches!(
        spec.build(SizeGuard(1000)),
        Err(Error::SizeGuard { .. })
    ));
}

#[test]
fn arboreal_spec_matches_closed_value() {
    for d in 0..=1 {
        let spec = ArborealSpec {
            ell: 2,
            level: 4,
            image: Some(GroupSpec::from_json(r#"{"ell":2,"level":4,"mode":"full"}"#).unwrap()),
            kummer: KummerSpec::Defect { d },
        };
        let a = spec.build(SizeGuard::default()).unwrap();
        let r = arboreal_density(&a, None).unwrap();
        assert_eq!(r.method, Method::Series);
        assert_eq!(r.value, closed_density(&ImageType::GL2Full, 2, d).unwrap());
    }
}

fn sweep(text: &str, ell: u32, bound: u64, k: u32) -> f64 {
    let (c, p) = CurveSpec::from_json(text).unwrap().build().unwrap();
    empirical_density(&c, &p, ell, bound, k).unwrap().frequency()
}

#[test]
fn short_sweep_tracks_exact_value() {
    let f = sweep(r#"{"label":"37.a1","a":[0,0,1,-1,0],"point":[0,0]}"#, 2, 20_000, 0);
    assert!((f - 11.0 / 21.0).abs() < 0.02, "{f}");
}

#[test]
#[ignore = "sweep to 10^6"]
fn scaled_sweep_to_a_million() {
    let f = sweep(r#"{"label":"153.b2","a":[0,0,1,6,27],"point":[5,13]}"#, 3, 1_000_000, 1);
    assert!((f - 77.0 / 104.0).abs() < 0.002, "{f}");
}

#[test]
#[ignore = "sweep to 10^6"]
fn index3_sweep_to_a_million() {
    let f = sweep(r#"{"label":"1521.b2","a":[0,0,1,0,7140],"point":[56,427]}"#, 13, 1_000_000, 0);
    assert!((f - 16801.0 / 18816.0).abs() < 0.002, "{f}");
}
