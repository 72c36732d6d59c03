use std::path::PathBuf;

use aad::config::{Arm, ConfigError, DatasetSource, Mode, Preset, RunConfig, Synthetic};

#[test]
fn defaults() {
    let c = RunConfig::default();
    assert_eq!((c.budget, c.queries_per_window, c.window), (100, 20, 512));
    assert_eq!((c.tau, c.alpha_kl, c.prior_b, c.precision_threshold), (0.03, 0.05, 0.5, 0.4));
    assert_eq!((c.trees, c.subsample, c.delta, c.kl_reps), (100, 256, 5, 10));
    assert_eq!(c.arm, Arm::Bal);
    assert_eq!(c.mode(), Mode::Batch);
    c.validate().unwrap();
    assert_eq!(RunConfig::from_toml_str("").unwrap(), c);
}

#[test]
fn file_values_override_defaults() {
    let c = RunConfig::from_toml_str("arm = \"sal-kl\"\nbudget = 40\nseeds = [1, 2, 3]\ndataset = \"synthetic:stream\"\n").unwrap();
    assert_eq!(c.arm, Arm::SalKl);
    assert_eq!(c.mode(), Mode::Stream);
    assert_eq!(c.budget, 40);
    assert_eq!(c.seeds, vec![1, 2, 3]);
    assert_eq!(c.source().unwrap(), DatasetSource::Synthetic(Synthetic::Stream));
}

#[test]
fn presets_apply_before_explicit_keys() {
    let c = RunConfig::from_toml_str("preset = \"covtype\"\n").unwrap();
    assert_eq!((c.budget, c.window), (3000, 4096));
    let c = RunConfig::from_toml_str("budget = 7\npreset = \"weather\"\n").unwrap();
    assert_eq!((c.budget, c.window), (7, 1024));
    let c = RunConfig::from_toml_str("preset = \"batch\"\nwindow = 64\n").unwrap();
    assert_eq!((c.budget, c.window, c.preset), (300, 64, Some(Preset::Batch)));
}

#[test]
fn preset_table() {
    let expected = [
        (Preset::Batch, 300, None),
        (Preset::Covtype, 3000, Some(4096)),
        (Preset::KddCup99, 3000, Some(4096)),
        (Preset::Mammography, 1500, Some(4096)),
        (Preset::Shuttle, 1500, Some(4096)),
        (Preset::Electricity, 1500, Some(1024)),
        (Preset::Weather, 1000, Some(1024)),
    ];
    for (preset, budget, window) in expected {
        assert_eq!(preset.budget_and_window(), (budget, window));
    }
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    assert!(matches!(RunConfig::from_toml_str("bugdet = 3\n"), Err(ConfigError::Toml(_))));
    assert!(matches!(RunConfig::from_toml_str("arm = \"bal-x\"\n"), Err(ConfigError::Toml(_))));
    assert!(matches!(RunConfig::from_toml_str("tau = 1.5\n"), Err(ConfigError::Invalid { key: "tau", .. })));
    assert!(matches!(RunConfig::from_toml_str("members = 16\n"), Err(ConfigError::Invalid { key: "members", .. })));
    assert!(matches!(RunConfig::from_toml_str("seeds = []\n"), Err(ConfigError::Invalid { key: "seeds", .. })));
    assert!(matches!(RunConfig::from_toml_str("candidates = 2\nbatch_size = 3\n"), Err(ConfigError::Invalid { key: "candidates", .. })));
    assert!(matches!(RunConfig::from_toml_str("window = 0\n"), Err(ConfigError::Invalid { key: "window", .. })));
    assert!(matches!(RunConfig::from_toml_str("name = \"a/b\"\n"), Err(ConfigError::Invalid { key: "name", .. })));
    assert!(matches!(RunConfig::from_toml_str("dataset = \"synthetic:nope\"\n"), Err(ConfigError::Unknown { .. })));
    assert!(matches!(RunConfig::from_toml_str("downsample = 0.0\n"), Err(ConfigError::Invalid { key: "downsample", .. })));
}

#[test]
fn overrides() {
    let base = RunConfig::default();
    let c = base.with_overrides(&["budget=12", "arm=glad", "tau = 0.1", "seeds=[4,5]", "name=exp"]).unwrap();
    assert_eq!((c.budget, c.arm, c.tau, c.name.as_str()), (12, Arm::Glad, 0.1, "exp"));
    assert_eq!(c.seeds, vec![4, 5]);
    let c = base.with_overrides(&["preset=electricity"]).unwrap();
    assert_eq!((c.budget, c.window), (1500, 1024));
    assert!(matches!(base.with_overrides(&["budget"]), Err(ConfigError::BadOverride(_))));
    assert!(base.with_overrides(&["budget=-1"]).is_err());
    assert!(base.with_overrides(&["colour=red"]).is_err());
}

#[test]
fn arm_names_round_trip() {
    for arm in Arm::ALL {
        assert_eq!(arm.as_str().parse::<Arm>().unwrap(), arm);
        let c = RunConfig::from_toml_str(&format!("arm = \"{arm}\"\n")).unwrap();
        assert_eq!(c.arm, arm);
    }
    assert_eq!(Arm::ALL.iter().filter(|a| a.mode() == Mode::Stream).count(), 4);
    assert_eq!(Arm::ALL.iter().filter(|a| a.mode() == Mode::Glad).count(), 3);
}

#[test]
fn dataset_sources() {
    for (name, kind) in [
        ("benchmark", Synthetic::Benchmark),
        ("cluster", Synthetic::Cluster),
        ("toy", Synthetic::Toy),
        ("stream", Synthetic::Stream),
        ("stream-shift", Synthetic::StreamShift),
        ("stream-gradual", Synthetic::StreamGradual),
    ] {
        assert_eq!(format!("synthetic:{name}").parse::<DatasetSource>().unwrap(), DatasetSource::Synthetic(kind));
    }
    assert_eq!("data/x.csv".parse::<DatasetSource>().unwrap(), DatasetSource::Csv(PathBuf::from("data/x.csv")));
}

#[test]
fn load_resolves_csv_paths_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "dataset = \"data/points.csv\"\n").unwrap();
    let c = RunConfig::load(&path).unwrap();
    assert_eq!(c.source().unwrap(), DatasetSource::Csv(dir.path().join("data/points.csv")));

    std::fs::write(&path, "dataset = \"synthetic:toy\"\n").unwrap();
    assert_eq!(RunConfig::load(&path).unwrap().dataset, "synthetic:toy");
    assert!(matches!(RunConfig::load(&dir.path().join("missing.toml")), Err(ConfigError::Read { .. })));
}

#[test]
fn json_round_trip() {
    let c = RunConfig { arm: Arm::Sal20Pct, class_column: Some("k".into()), downsample: Some(0.1), ..RunConfig::default() };
    let text = serde_json::to_string(&c).unwrap();
    assert!(text.contains("\"sal-20pct\""));
    assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
}
