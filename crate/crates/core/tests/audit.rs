use std::path::PathBuf;

use etd_core::audit::example::{example_table, tightness};
use etd_core::audit::spec::write_spec;
use etd_core::audit::*;
use proptest::prelude::*;

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Set `UPDATE_FIXTURES=1` to rewrite the shipped file after an intended change.
#[test]
fn shipped_two_state_file_matches_generator() {
    let generated = fixture_two_state(0.1, 0.9).unwrap().to_json();
    let path = fixture_path("two_state.json");
    if std::env::var_os("UPDATE_FIXTURES").is_some() {
        std::fs::write(&path, &generated).unwrap();
    }
    let on_disk = std::fs::read_to_string(&path).unwrap();
    assert_eq!(on_disk, generated);
    let parsed = parse_spec(&path).unwrap();
    assert_eq!(parsed.spec, fixture_two_state(0.1, 0.9).unwrap().spec);
}

#[test]
fn every_fixture_audits_clean() {
    let options = AuditOptions::default();
    let mut instances = vec![
        fixture_two_state(0.1, 0.9).unwrap(),
        fixture_two_state(1e-4, 0.9).unwrap(),
        fixture_on_policy(0.9).unwrap(),
        fixture_random(&RandomFixture::new(7, 5, 3, 0.05)).unwrap(),
        fixture_divergence().unwrap(),
        parse_spec(&fixture_path("two_state.json")).unwrap(),
        parse_spec(&fixture_path("divergence.json")).unwrap(),
    ];
    instances.push(fixture_by_name("random", 0.1, 0.9, 7).unwrap());
    for inst in &instances {
        let rep = audit(inst, &options).unwrap();
        assert!(rep.holds.all, "{}: {:?}", inst.name(), rep.holds);
        assert!(rep.contraction_slack_ok());
        assert_eq!(rep.schema_version, 1);
    }
}

#[test]
fn on_policy_report_matches_closed_form() {
    let rep = audit(&fixture_on_policy(0.9).unwrap(), &AuditOptions::default()).unwrap();
    assert!((rep.emphasis.kappa - 0.1).abs() < 1e-12);
    assert!((rep.moduli.etd0.bound - 0.9f64.sqrt() * 0.9f64.sqrt()).abs() < 1e-12);
}

#[test]
fn divergence_report_flags_td() {
    let rep = audit(&fixture_divergence().unwrap(), &AuditOptions::default()).unwrap();
    assert!(rep.moduli.td0_dmu > 1.0);
    assert!(rep.moduli.etd0.bound < 1.0);
}

#[test]
fn reports_are_byte_identical() {
    let inst = fixture_random(&RandomFixture::new(7, 5, 3, 0.05)).unwrap();
    let options = AuditOptions { lambda: Some(0.7), seed: 3, ..Default::default() };
    let a = audit(&inst, &options).unwrap().to_json();
    let b = audit(&fixture_random(&RandomFixture::new(7, 5, 3, 0.05)).unwrap(), &options).unwrap().to_json();
    assert_eq!(a, b);
    assert!(a.starts_with("{\n  \"schema_version\": 1,"));
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["instance"]["lambda"].as_f64(), Some(0.7));
}

#[test]
fn floats_carry_seventeen_digits() {
    let rep = audit(&fixture_two_state(0.1, 0.9).unwrap(), &AuditOptions::default()).unwrap().to_json();
    assert!(rep.contains("\"gamma\": 9.0000000000000002e-1"));
    let v: serde_json::Value = serde_json::from_str(&rep).unwrap();
    let f_right = v["emphasis"]["f"][1].as_f64().unwrap();
    assert!((f_right - 8.2).abs() < 1e-12);
    assert!(rep.contains(&format!("{f_right:.16e}")));
}

#[test]
fn example_table_agrees_with_closed_form() {
    let table = example_table(0.1, 0.9).unwrap();
    assert!(table.max_abs_diff() < 1e-12);
    let f_right = table.row("f(Right)").unwrap();
    assert!((f_right.computed - 8.2).abs() < 1e-12);
    let t = tightness(1e-4, 0.9).unwrap();
    assert!(t.within_tolerance && (t.ratio - 0.9).abs() < 1e-2);
    assert!(tightness(0.0, 0.9).is_err());
}

#[test]
fn spec_errors_carry_codes() {
    let good = write_spec(&fixture_two_state(0.1, 0.9).unwrap().spec);
    let origin = || Origin::File { path: "inline".into() };
    let cases = [
        ("{\"states\": 2,", "E_MALFORMED"),
        (&good.replacen("\"gamma\"", "\"gama\"", 1) as &str, "E_MALFORMED"),
        (
            &good.replacen(
                "\"initial_dist\": [\n    5.0000000000000000e-1,",
                "\"initial_dist\": [\n    6.0000000000000000e-1,",
                1,
            ),
            "E_STOCHASTICITY",
        ),
        (&good.replacen("\"gamma\": 9.0000000000000002e-1", "\"gamma\": 1.5", 1), "E_INVALID"),
    ];
    for (text, code) in cases {
        let err = parse_spec_str(text, origin()).unwrap_err();
        assert_eq!(err.code(), code, "{err}");
    }
    let mut spec = fixture_two_state(0.1, 0.9).unwrap().spec;
    spec.reward.pop();
    assert_eq!(Instance::from_spec(spec, origin()).unwrap_err().code(), "E_DIMENSION");
    let mut spec = fixture_two_state(0.1, 0.9).unwrap().spec;
    spec.policies.get_mut("behavior").unwrap()[0] = vec![1.0, 0.0];
    assert_eq!(Instance::from_spec(spec, origin()).unwrap_err().code(), "E_COVERAGE");
    let err = parse_spec(&fixture_path("missing.json")).unwrap_err();
    assert_eq!(err.code(), "E_IO");
}

#[test]
fn malformed_reports_position() {
    let err = parse_spec_str("{\n  \"states\": 2,\n  oops\n}", Origin::File { path: "x".into() }).unwrap_err();
    match err {
        SpecError::Malformed { line, column, .. } => assert_eq!((line, column), (3, 3)),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn unknown_fixture_is_rejected() {
    assert!(fixture_by_name("nope", 0.1, 0.9, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spec_round_trips(seed in 0u64..1_000_000, n in 1usize..7, k in 1usize..4) {
        let inst = fixture_random(&RandomFixture::new(seed, n, k, 0.01)).unwrap();
        let text = inst.to_json();
        let back = parse_spec_str(&text, Origin::File { path: "rt".into() }).unwrap();
        prop_assert_eq!(&back.spec, &inst.spec);
        prop_assert_eq!(back.to_json(), text);
        prop_assert_eq!(back.content_hash(), inst.content_hash());
    }

    #[test]
    fn two_state_round_trips(eps in 1e-6f64..0.5, gamma in 0.0f64..0.999) {
        let inst = fixture_two_state(eps, gamma).unwrap();
        let back = parse_spec_str(&inst.to_json(), Origin::File { path: "rt".into() }).unwrap();
        prop_assert_eq!(back.spec, inst.spec);
    }
}
