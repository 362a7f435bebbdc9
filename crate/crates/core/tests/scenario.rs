use stealthsim::control::MissionKind;
use stealthsim::scenario::{
    calibrate_to_sidecar, monte_carlo, run_scenario, DetectorKind, DetectorSetup, RunRecord,
    ScenarioConfig,
};

fn config(text: &str) -> ScenarioConfig {
    let cfg = ScenarioConfig::from_toml(text).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn run(cfg: &ScenarioConfig, seed: u64) -> RunRecord {
    run_scenario(cfg, seed, &DetectorSetup::analytic(cfg).unwrap()).unwrap()
}

fn csv(record: &RunRecord) -> String {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    record.write_csv(&path).unwrap();
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn runs_are_reproducible_from_config_and_seed() {
    let cfg = config("duration = 8.0\n[attack]\nenabled = true\n");
    let a = csv(&run(&cfg, 5));
    assert_eq!(a, csv(&run(&cfg, 5)));
    assert_ne!(a, csv(&run(&cfg, 6)));
}

#[test]
fn disabled_attack_leaves_the_stream_untouched() {
    let cfg = config("duration = 10.0\n");
    let r = run(&cfg, 3);
    assert!(r.attack_start.is_none());
    for row in &r.rows {
        assert!(!row.attack_active);
        assert_eq!(row.s.0.amax(), 0.0);
        assert_eq!(row.p_cam_fake, row.p_cam_true);
    }
}

#[test]
fn zero_deviation_attack_portrays_the_truth() {
    let nominal = config("duration = 12.0\n");
    let attacked = config("duration = 12.0\n[attack]\nenabled = true\ninitial_deviation = [0,0,0,0,0,0,0,0,0,0,0,0]\n");
    let a = run(&nominal, 9);
    let b = run(&attacked, 9);
    assert!(b.attack_start.is_some());
    assert_eq!(a.rows.len(), b.rows.len());
    let mut worst: f64 = 0.0;
    for (x, y) in a.rows.iter().zip(&b.rows) {
        worst = worst.max((x.estimate - y.estimate).0.amax());
        worst = worst.max((x.true_state - y.true_state).0.amax());
        assert_eq!(y.s.0.amax(), 0.0);
    }
    assert!(worst < 1e-9, "worst {worst:e}");
}

#[test]
fn vtol_lands_on_the_marker() {
    let cfg = config("mission = \"vtol\"\n");
    for seed in 1..=5 {
        let r = run(&cfg, seed);
        assert!(r.touchdown, "seed {seed}");
        let offset = r.final_offset().unwrap();
        assert!(offset <= 0.5, "seed {seed}: offset {offset}");
    }
}

#[test]
fn gvt_follows_the_ground_vehicle() {
    let cfg = config("");
    assert_eq!(cfg.mission, MissionKind::Gvt);
    for seed in 1..=10 {
        let r = run(&cfg, seed);
        let worst = r
            .rows
            .iter()
            .filter(|row| row.time >= 12.0)
            .map(|row| {
                let d = row.true_state.position() - row.marker;
                d.x.hypot(d.y)
            })
            .fold(0.0, f64::max);
        assert!(worst <= 0.5, "seed {seed}: lateral error {worst}");
    }
}

#[test]
fn single_run_monte_carlo_reports() {
    let cfg = config("duration = 10.0\n[attack]\nenabled = true\n");
    let report = monte_carlo(&cfg, 1, &DetectorSetup::analytic(&cfg).unwrap()).unwrap();
    assert_eq!(report.runs, 1);
    assert_eq!(report.run_summaries.len(), 1);
    assert!(report.attacked);
    let chi2 = report.detector("chi2").unwrap();
    assert!(chi2.p_td().is_some());
    assert!(report.summary().starts_with("runs = 1\n"));
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    for f in ["summary.toml", "alarm_rates.csv", "runs.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn sidecar_calibration_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    let cfg = config("duration = 6.0\n[detectors]\ncalibration_runs = 4\n");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    assert!(DetectorSetup::for_config(&cfg, &path)
        .unwrap()
        .cusum
        .is_none());

    let sidecar = calibrate_to_sidecar(&cfg, &path, DetectorKind::Cusum, 0.01).unwrap();
    assert_eq!(sidecar, dir.path().join("s.thresholds.toml"));
    let setup = DetectorSetup::for_config(&cfg, &path).unwrap();
    let cusum = setup.cusum.expect("cusum calibrated");
    assert!(setup.recurrent.is_none());

    // A second detector is merged in without losing the first.
    calibrate_to_sidecar(&cfg, &path, DetectorKind::Recurrent, 0.01).unwrap();
    let setup = DetectorSetup::for_config(&cfg, &path).unwrap();
    assert_eq!(setup.cusum, Some(cusum));
    assert!(setup.recurrent.is_some());
    assert_eq!(setup.chi2, DetectorSetup::analytic(&cfg).unwrap().chi2);
}
