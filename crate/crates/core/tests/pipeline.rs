mod common;

use std::fs;

use entrobound::abstraction::IntervalAbstraction;
use entrobound::config::{av_example, gaussian_example};
use entrobound::pipeline::{build_abstraction, cmd_abstract, cmd_bounds, cmd_simulate, cmd_synthesize, parse_range};
use entrobound::synthesis::{Policy, Sigma};
use tempfile::tempdir;

use common::tilted_config;

#[test]
fn abstraction_file_round_trips_exactly() {
    let dir = tempdir().unwrap();
    let cfg = gaussian_example(2, 3);
    let path = cmd_abstract(&cfg, dir.path(), None).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let loaded = IntervalAbstraction::load(&path).unwrap();
    let (built, _) = build_abstraction(&cfg, None).unwrap();
    assert_eq!(loaded.lower, built.lower);
    assert_eq!(loaded.upper, built.upper);
    assert_eq!(loaded.initial, built.initial);
    assert_eq!(loaded.to_json().unwrap(), text);
    assert_eq!(loaded.checksum.len(), 64);
}

#[test]
fn tampered_abstraction_is_rejected() {
    let dir = tempdir().unwrap();
    let path = cmd_abstract(&gaussian_example(2, 2), dir.path(), None).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let loaded = IntervalAbstraction::load(&path).unwrap();
    let first = loaded.lower[0][0][0];
    let bumped = format!("{}", first * 0.5);
    let tampered = text.replacen(&format!("{first}"), &bumped, 1);
    assert_ne!(tampered, text);
    assert!(IntervalAbstraction::from_json(&tampered).is_err());
}

#[test]
fn vehicle_abstraction_shape() {
    let (abs, _) = build_abstraction(&av_example(2.56, 80), None).unwrap();
    assert_eq!(abs.action_count(), 5);
    assert_eq!(abs.cell_count(), 80);
    for m in abs.lower.iter().chain(&abs.upper) {
        assert_eq!(m.len(), 80);
        assert!(m.iter().all(|r| r.len() == 80));
    }
    let pi_sum: f64 = abs.initial.iter().sum();
    assert!((pi_sum - 1.0).abs() < 1e-12);
}

#[test]
fn single_cell_bounds_sit_within_the_global_correction() {
    let dir = tempdir().unwrap();
    let cfg = gaussian_example(3, 1);
    let (abs, _) = build_abstraction(&cfg, None).unwrap();
    assert_eq!(abs.initial, vec![1.0]);
    let r = cmd_bounds(&cfg, None, None, None, dir.path(), None).unwrap();
    let b = &r.result[0].bounds;
    assert!(b.lower.abs() <= 1e-8, "{}", b.lower);
    assert!((b.upper_global - b.eps_global).abs() < 1e-12);
    assert!(b.upper_local <= b.eps_global + 1e-12);
}

#[test]
fn sweep_writes_one_row_per_resolution_with_shrinking_gap() {
    let dir = tempdir().unwrap();
    let cfg = gaussian_example(2, 2);
    let r = cmd_bounds(&cfg, None, None, Some(parse_range("2..6").unwrap()), dir.path(), None).unwrap();
    assert_eq!(r.result.len(), 5);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let gaps: Vec<f64> = r.result.iter().map(|run| run.bounds.upper_local - run.bounds.lower).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(dir.path().join("sweep.json").exists());
}

#[test]
fn cache_is_reused() {
    let cache = tempdir().unwrap();
    let cfg = gaussian_example(2, 3);
    let (a, first) = build_abstraction(&cfg, Some(cache.path())).unwrap();
    let (b, second) = build_abstraction(&cfg, Some(cache.path())).unwrap();
    assert!(!first.cached);
    assert!(second.cached);
    assert_eq!(a.lower, b.lower);
    assert_eq!(a.upper, b.upper);
    // a different resolution is a different entry
    let (_, third) = build_abstraction(&cfg.with_resolution(4), Some(cache.path())).unwrap();
    assert!(!third.cached);
}

#[test]
fn bounds_from_a_saved_abstraction_match_a_fresh_run() {
    let dir = tempdir().unwrap();
    let cfg = gaussian_example(2, 3);
    let path = cmd_abstract(&cfg, dir.path(), None).unwrap();
    let fresh = cmd_bounds(&cfg, None, None, None, dir.path(), None).unwrap();
    let saved = cmd_bounds(&cfg, Some(&path), None, None, dir.path(), None).unwrap();
    assert_eq!(fresh.result[0].bounds.lower, saved.result[0].bounds.lower);
    assert_eq!(fresh.result[0].bounds.upper_local, saved.result[0].bounds.upper_local);
}

#[test]
fn multi_action_bounds_need_a_pinned_action() {
    let dir = tempdir().unwrap();
    let cfg = tilted_config(&[1.0, -1.0], 2, 4, Some(Sigma::Plus));
    let e = cmd_bounds(&cfg, None, None, None, dir.path(), None).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let r = cmd_bounds(&cfg, None, Some(1), None, dir.path(), None).unwrap();
    assert!(r.result[0].bounds.lower <= r.result[0].bounds.upper_local);
}

#[test]
fn single_action_synthesis_returns_one_policy_three_times() {
    let dir = tempdir().unwrap();
    let cfg = tilted_config(&[1.0], 3, 4, Some(Sigma::Minus));
    let r = cmd_synthesize(&cfg, dir.path(), None).unwrap();
    let s = &r.result.synthesis;
    assert_eq!(s.policy_global, s.policy_local);
    assert_eq!(s.policy_global, r.result.baseline.policy);
    for name in ["policy_global.json", "policy_local.json", "policy_unregularized.json"] {
        assert_eq!(Policy::load(&dir.path().join(name)).unwrap(), s.policy_global);
    }
}

#[test]
fn plus_sign_is_reported_as_penalizing_predictability() {
    let dir = tempdir().unwrap();
    let cfg = tilted_config(&[1.5, -1.5, 0.0], 2, 4, Some(Sigma::Plus));
    let r = cmd_synthesize(&cfg, dir.path(), None).unwrap();
    let s = &r.result.synthesis;
    assert!(s.mode.contains("penalize"), "{}", s.mode);
    assert!(s.lower_global <= s.upper_global);
    assert!(s.lower_local <= s.upper_local);
}

#[test]
fn synthesis_needs_a_sign() {
    let dir = tempdir().unwrap();
    let e = cmd_synthesize(&tilted_config(&[1.0, 0.0], 2, 3, None), dir.path(), None).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("model.sigma"));
}

#[test]
fn simulation_is_byte_identical_across_runs() {
    let cfg = tilted_config(&[1.0, -1.0], 3, 4, Some(Sigma::Minus));
    let synth = tempdir().unwrap();
    cmd_synthesize(&cfg, synth.path(), None).unwrap();
    let policy = synth.path().join("policy_global.json");
    let report = synth.path().join("synthesis.json");
    let out = tempdir().unwrap();
    let a = cmd_simulate(&cfg, Some(&policy), None, Some(&report), out.path()).unwrap();
    let first = fs::read(out.path().join("simulation.json")).unwrap();
    let csv = fs::read(out.path().join("trajectories.csv")).unwrap();
    cmd_simulate(&cfg, Some(&policy), None, Some(&report), out.path()).unwrap();
    assert_eq!(first, fs::read(out.path().join("simulation.json")).unwrap());
    assert_eq!(csv, fs::read(out.path().join("trajectories.csv")).unwrap());
    let bracket = a.result.bracket.expect("report supplied");
    assert_eq!(bracket.quantity, "objective");
    assert!(bracket.inside, "{bracket:?}");
}

#[test]
fn single_sample_reports_no_standard_error() {
    let out = tempdir().unwrap();
    let mut cfg = gaussian_example(2, 2);
    cfg.solver.samples = 1;
    cfg.output.trajectories = 0;
    cmd_simulate(&cfg, None, None, None, out.path()).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("simulation.json")).unwrap()).unwrap();
    assert!(doc["result"]["estimates"]["kl"]["std_error"].is_null());
    assert!(!out.path().join("trajectories.csv").exists());
}

#[test]
fn policy_shape_must_match_the_partition() {
    let cfg = tilted_config(&[1.0, -1.0], 3, 4, Some(Sigma::Minus));
    let dir = tempdir().unwrap();
    let wrong = Policy::constant(3, 5, 0, vec!["0".into(), "1".into()]);
    let path = dir.path().join("wrong.json");
    wrong.save(&path).unwrap();
    let e = cmd_simulate(&cfg, Some(&path), None, None, dir.path()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn reports_embed_config_and_hash() {
    let dir = tempdir().unwrap();
    let cfg = gaussian_example(2, 2);
    let r = cmd_bounds(&cfg, None, None, None, dir.path(), None).unwrap();
    assert_eq!(r.config, cfg);
    assert_eq!(r.input_hash.len(), 64);
    let again = cmd_bounds(&cfg, None, None, None, dir.path(), None).unwrap();
    assert_eq!(r.input_hash, again.input_hash);
    let other = cmd_bounds(&cfg.with_resolution(3), None, None, None, dir.path(), None).unwrap();
    assert_ne!(r.input_hash, other.input_hash);
}

#[test]
fn chain_bracket_holds_on_the_gaussian_example() {
    let dir = tempdir().unwrap();
    let mut cfg = gaussian_example(2, 3);
    cfg.solver.samples = 20_000;
    cfg.output.trajectories = 0;
    cmd_bounds(&cfg, None, None, None, dir.path(), None).unwrap();
    let r = cmd_simulate(&cfg, None, None, Some(&dir.path().join("bounds.json")), dir.path()).unwrap();
    let b = r.result.bracket.unwrap();
    assert_eq!(b.quantity, "kl");
    assert!(b.inside, "{b:?}");
}
