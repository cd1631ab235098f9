//! Structural integration tests for the scenario runners: output shapes,
//! determinism, auditing and report emission on small, fast configurations.

use syntwin_core::scenario::{
    run_baseline_sharing, run_scenario, run_sequential_sharing, run_size_sweep, run_skew_sweep,
    write_reports, DpviOverrides, ScenarioConfig, ScenarioKind,
};
use syntwin_core::tabular::{PartySpec, PopulationConfig};

fn tiny_population(n_parties: usize) -> PopulationConfig {
    let mut cfg = PopulationConfig::desk8();
    cfg.parties = (0..n_parties)
        .map(|i| PartySpec {
            name: format!("party_{:02}", i + 1),
            size: 150 + 30 * i,
            shift: 0.2,
        })
        .collect();
    cfg
}

fn fast_config(kind: ScenarioKind, n_parties: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(kind, tiny_population(n_parties));
    cfg.subsample_fraction = 0.5;
    cfg.k_sets = 3;
    cfg.repeats = 1;
    cfg.permutations = 2;
    cfg.n_draws = 10;
    cfg.fractions = vec![0.5, 1.0];
    cfg.dpvi = DpviOverrides {
        iterations: Some(20),
        components: Some(2),
        ..DpviOverrides::default()
    };
    cfg.master_seed = 123;
    cfg
}

#[test]
fn baseline_emits_three_arms_and_clean_audit() {
    let cfg = fast_config(ScenarioKind::BaselineSharing, 3);
    let out = run_baseline_sharing(&cfg).unwrap();

    for party in ["party_01", "party_02", "party_03"] {
        for arm in ["local", "combined"] {
            assert!(
                out.samples
                    .iter()
                    .any(|s| s.party == party && s.arm == arm && s.values.len() == 10),
                "missing {arm} samples for {party}"
            );
        }
    }
    assert!(out.samples.iter().any(|s| s.arm == "pooled_real"));

    // privacy bookkeeping
    assert_eq!(out.record.cross_party_raw_accesses, 0);
    assert!(out.record.raw_accesses > 0);
    assert_eq!(out.record.accountants.len(), 3);
    for acct in &out.record.accountants {
        assert!(acct.epsilon_spent <= acct.budget_epsilon);
        assert!((acct.delta - 1.0 / acct.n as f64).abs() < 1e-15);
    }
}

#[test]
fn baseline_is_deterministic_across_thread_counts() {
    let mut cfg = fast_config(ScenarioKind::BaselineSharing, 3);
    let a = run_baseline_sharing(&cfg).unwrap();
    cfg.threads = 1;
    let b = run_baseline_sharing(&cfg).unwrap();
    cfg.threads = 4;
    let c = run_baseline_sharing(&cfg).unwrap();
    // thread count must not leak into results
    assert_eq!(a.samples, b.samples);
    assert_eq!(b.samples, c.samples);
    assert_eq!(a.record.accountants, b.record.accountants);
}

#[test]
fn sequential_covers_every_prefix() {
    let cfg = fast_config(ScenarioKind::SequentialSharing, 3);
    let out = run_sequential_sharing(&cfg).unwrap();
    for party in ["party_01", "party_02", "party_03"] {
        for step in 0..=2 {
            let n: usize = out
                .samples
                .iter()
                .filter(|s| s.party == party && s.detail == format!("step={step}"))
                .map(|s| s.values.len())
                .sum();
            // repeats=1, permutations=2, draws=10
            assert_eq!(n, 20, "party {party} step {step}");
        }
    }
}

#[test]
fn size_sweep_labels_fractions() {
    let cfg = fast_config(ScenarioKind::SizeSweep, 3);
    let out = run_size_sweep(&cfg).unwrap();
    for fraction in ["0.5", "1"] {
        assert!(
            out.samples
                .iter()
                .any(|s| s.detail == format!("fraction={fraction}") && s.arm == "combined"),
            "missing fraction {fraction}"
        );
    }
}

#[test]
fn skew_sweep_emits_all_arms_per_level() {
    let mut cfg = fast_config(ScenarioKind::SkewSweep, 3);
    // bigger parties so the artificial party and subgroup slice are usable
    cfg.population = tiny_population(3);
    for p in cfg.population.parties.iter_mut() {
        p.size = 600;
    }
    cfg.subsample_fraction = 1.0;
    cfg.skew.keep_probs = vec![0.25, 1.0];
    let out = run_skew_sweep(&cfg).unwrap();
    for kp in ["0.25", "1"] {
        for arm in ["local", "combined", "drop_feature"] {
            assert!(
                out.samples
                    .iter()
                    .any(|s| s.arm == arm && s.detail == format!("keep_prob={kp}")),
                "missing arm {arm} at keep_prob {kp}"
            );
        }
    }
    assert_eq!(out.record.cross_party_raw_accesses, 0);
}

#[test]
fn run_scenario_dispatches_and_reports() {
    let cfg = fast_config(ScenarioKind::BaselineSharing, 3);
    let out = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_reports(&out, dir.path()).unwrap();
    for file in [
        "samples.csv",
        "box_stats.json",
        "welch_tests.csv",
        "run_record.json",
    ] {
        let path = dir.path().join(file);
        assert!(path.exists(), "missing {file}");
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }
    let samples = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert!(samples.starts_with("scenario,party,arm,detail,repeat,draw,value"));
    let welch = std::fs::read_to_string(dir.path().join("welch_tests.csv")).unwrap();
    assert!(welch.contains("combined>local"));
}

#[test]
fn config_roundtrips_through_toml() {
    let cfg = fast_config(ScenarioKind::SizeSweep, 3);
    let text = cfg.to_toml().unwrap();
    let back = ScenarioConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, back);
    assert!(ScenarioConfig::from_toml("kind = \"nope\"").is_err());
}

#[test]
fn rejects_single_party_sharing() {
    let cfg = fast_config(ScenarioKind::BaselineSharing, 1);
    assert!(run_baseline_sharing(&cfg).is_err());
}
