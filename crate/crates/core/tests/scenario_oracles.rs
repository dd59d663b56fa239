use approx::assert_relative_eq;
use opfield::lab::meta_strong_check;
use opfield::runner::{run_scenario, CheckKind, RunConfig};
use opfield::scenarios::{
    build_bounded_multiplication, build_kuwae_shioya_graph, build_named, build_varying_metric, registry,
    BoundedMultiplicationParams, KuwaeShioyaParams, Scenario, VaryingMetricParams,
};
use opfield::{DecayRule, Verdict};
use std::f64::consts::PI;

#[test]
fn multiplication_deviation_matches_closed_form() {
    let s = build_bounded_multiplication(&BoundedMultiplicationParams::default()).unwrap();
    let bf = s.bounded.as_ref().unwrap();
    let r = meta_strong_check(&s.field, bf, &s.battery, &s.identification, DecayRule::new(s.tol)).unwrap();
    let h = 1.0 / 64.0;
    let xs: Vec<f64> = (1..=64).map(|i| i as f64 * h).collect();
    for (i, g) in s.battery.sections().iter().enumerate() {
        let u = &g.limit;
        let norm_u = (h * u.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let trace = r.trace(&format!("section={i:03}")).unwrap();
        for (&t, &d) in trace.labels.iter().zip(&trace.values) {
            let exact = (h * xs.iter().zip(u).map(|(x, v)| (t * x * v).powi(2)).sum::<f64>()).sqrt() / norm_u.max(1.0);
            assert_relative_eq!(d, exact, max_relative = 1e-12, epsilon = 1e-14);
            assert!(d <= t * norm_u / norm_u.max(1.0) * (1.0 + 1e-12));
        }
    }
}

#[test]
fn zero_amplitude_metric_is_constant() {
    let s = build_varying_metric(&VaryingMetricParams { eps: 0.0, k_max: 6, ..Default::default() }).unwrap();
    let fam = s.family.as_ref().unwrap();
    assert!(fam.fibers.iter().all(|f| f == &fam.limit));
    let (r, _) = run_scenario(&s, &RunConfig::default()).unwrap();
    assert_eq!(r.overall, Verdict::Pass);
}

#[test]
fn potential_perturbation_still_passes() {
    let p = VaryingMetricParams { potential: true, ..Default::default() };
    let s = build_varying_metric(&p).unwrap();
    let cfg = RunConfig { checks: Some(vec![CheckKind::Srs, CheckKind::G, CheckKind::Ms]), ..Default::default() };
    let (r, _) = run_scenario(&s, &cfg).unwrap();
    assert_eq!(r.overall, Verdict::Pass);
}

#[test]
fn path_graph_first_eigenvalue_closed_form() {
    let s = build_kuwae_shioya_graph(&KuwaeShioyaParams::default()).unwrap();
    let fam = s.family.as_ref().unwrap();
    let h = 1.0 / 64.0;
    let theta = fam.fibers[3].spectrum().unwrap()[0];
    let exact = 2.0 / (h * h) * (1.0 - (PI * h).cos());
    assert_relative_eq!(theta, exact, max_relative = 1e-10);
    assert!((theta - PI * PI).abs() / (PI * PI) <= 0.01);
}

#[test]
fn neumann_constant_has_zero_energy_and_clipped_limit_energy_two_over_h() {
    let s = build_named("neumann_dirichlet").unwrap();
    let fam = s.family.as_ref().unwrap();
    for f in &fam.fibers {
        let one = vec![1.0; f.dim()];
        assert!(f.stiffness().bilinear(&one, &one).abs() < 1e-10);
    }
    let one = vec![1.0; fam.limit.dim()];
    assert!(fam.limit.stiffness().bilinear(&one, &one) >= 2.0 * 256.0 - 1e-9);
}

#[test]
fn every_shipped_scenario_matches_its_expectations() {
    for e in registry() {
        let s = (e.build)().unwrap();
        let (r, _) = run_scenario(&s, &RunConfig::default()).unwrap();
        assert_eq!(r.overall, Verdict::Pass, "{}: mismatches {:?}", e.name, r.mismatches);
    }
}

#[test]
fn fixtures_match_their_expectations() {
    for name in ["singular_measure_mismatch", "bounded_sign_fixture"] {
        let s = build_named(name).unwrap();
        let (r, _) = run_scenario(&s, &RunConfig::default()).unwrap();
        assert_eq!(r.overall, Verdict::Pass, "{name}: mismatches {:?}", r.mismatches);
        assert!(r.checks.values().all(|o| o.report.verdict != Verdict::Pass));
    }
}

fn final_values(s: &Scenario, checks: &[CheckKind]) -> Vec<(String, Verdict, f64)> {
    let cfg = RunConfig { checks: Some(checks.to_vec()), ..Default::default() };
    let (r, _) = run_scenario(s, &cfg).unwrap();
    r.checks
        .iter()
        .flat_map(|(c, o)| {
            o.report.traces.iter().map(move |t| (format!("{c}/{}", t.key), o.report.verdict, *t.values.last().unwrap()))
        })
        .collect()
}

#[test]
fn doubling_the_finest_grid_keeps_verdicts() {
    let checks = [CheckKind::Srs, CheckKind::G, CheckKind::Ms];
    let coarse = build_kuwae_shioya_graph(&KuwaeShioyaParams::default()).unwrap();
    let fine = build_kuwae_shioya_graph(&KuwaeShioyaParams { cells: vec![8, 16, 32, 64, 128], ..Default::default() })
        .unwrap();
    let a = final_values(&coarse, &checks);
    let b = final_values(&fine, &checks);
    assert_eq!(a.len(), b.len());
    for ((ka, va, xa), (kb, vb, xb)) in a.iter().zip(&b) {
        assert_eq!(ka, kb);
        assert_eq!(va, vb, "{ka}");
        assert!((xa - xb).abs() <= 10.0 * coarse.tol, "{ka}: {xa} vs {xb}");
    }
}

#[test]
fn scenario_json_round_trips_for_all_shipped() {
    for e in registry() {
        let s = (e.build)().unwrap();
        let text = s.to_json().unwrap();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text, "{}", e.name);
    }
}
