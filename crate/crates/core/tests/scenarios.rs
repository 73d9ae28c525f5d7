use roton::config::RunConfig;
use roton::fitkit::TemplateName;
use roton::scenario::{builtin_names, builtin_scenario, run_scenario, Manifest, ScenarioRun};

fn run(name: &str) -> ScenarioRun {
    run_scenario(&builtin_scenario(name).unwrap(), &RunConfig::default()).unwrap()
}

#[test]
fn h2_pressure_series_zero_roton_rises_with_pressure() {
    let r = run("fig1_h2_pressure_series");
    let f: Vec<f64> = r.points.iter().map(|p| p.zero_roton().unwrap().0).collect();
    assert!(f.windows(2).all(|w| w[1] > w[0]), "{f:?}");
}

#[test]
fn conversion_hold_depletes_ortho() {
    let r = run("fig1_h2_conversion_hold");
    let intensity: Vec<f64> = r.points.iter().map(|p| p.zero_roton().unwrap().2).collect();
    let ratio: Vec<f64> = r.points.iter().map(|p| p.s0_ratio().unwrap()).collect();
    assert!(intensity.windows(2).all(|w| w[1] < w[0]), "{intensity:?}");
    assert!(ratio.windows(2).all(|w| w[1] > w[0]), "{ratio:?}");
}

#[test]
fn mixture_temperature_series_softens_and_shows_anti_stokes() {
    let r = run("fig3_mixture_31gpa_Tseries");
    let f: Vec<f64> = r.points.iter().map(|p| p.zero_roton().unwrap().0).collect();
    assert!(f.windows(2).all(|w| w[1] < w[0]), "{f:?}");
    let counts: Vec<usize> = r.points.iter().map(|p| p.anti_stokes_lines).collect();
    assert_eq!(counts[0], 0);
    assert!(counts[1..].iter().all(|c| *c > 0), "{counts:?}");
}

#[test]
fn h2_temperature_series_softens() {
    let r = run("fig3_h2_96gpa_Tseries");
    let f: Vec<f64> = r.points.iter().map(|p| p.zero_roton().unwrap().0).collect();
    assert!(f.windows(2).all(|w| w[1] < w[0]), "{f:?}");
}

#[test]
fn d2_phase_two_resolves_four_ordered_sites() {
    let r = run("fig1_d2_pressure_series_phase2");
    for p in &r.points {
        let fit = &p.fit(TemplateName::ZeroRotonQuad).unwrap().fit;
        let c = fit.centers();
        assert_eq!(c.len(), 4);
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn noiseless_isolated_peak_matches_stick() {
    let cfg = RunConfig::default();
    for name in ["fig1_h2_pressure_series", "fig1_mixture_pressure_series"] {
        let mut s = builtin_scenario(name).unwrap();
        s.noise_relative = Some(0.0);
        let r = run_scenario(&s, &cfg).unwrap();
        for p in &r.points {
            // First-order zero roton: 3/5 of V2, independent of the rotor.
            let stick = 0.6 * p.v2_cm1;
            let fitted = p.zero_roton().unwrap().0;
            assert!((fitted - stick).abs() < 0.1, "{name} P={}: {fitted} vs {stick}", p.spec.pressure_gpa);
        }
    }
}

#[test]
fn bundles_are_byte_identical_across_runs_and_thread_counts() {
    let cfg = RunConfig::default();
    for name in builtin_names() {
        let s = builtin_scenario(name).unwrap();
        let a = run_scenario(&s, &cfg).unwrap().files().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_scenario(&s, &cfg).unwrap().files().unwrap());
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn bundle_layout_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let r = run("fig1_h2_conversion_hold");
    let m = r.write(dir.path()).unwrap();
    for rel in ["spectra/p000.txt", "fits/p000_S0_0_triplet.toml", "tables/points.tsv", "tables/frequencies.tsv", "log.txt", "manifest.toml"] {
        assert!(dir.path().join(rel).is_file(), "{rel}");
    }
    let text = std::fs::read_to_string(dir.path().join(Manifest::FILE)).unwrap();
    let back: Manifest = toml::from_str(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.config_sha256, RunConfig::default().hash().unwrap());
    for e in &back.outputs {
        let bytes = std::fs::read(dir.path().join(&e.path)).unwrap();
        assert_eq!(roton::io::sha256_hex(&bytes), e.sha256, "{}", e.path);
    }
    // Phenomenological components stay out of the frequency table.
    let freq = std::fs::read_to_string(dir.path().join("tables/frequencies.tsv")).unwrap();
    assert!(!freq.contains("S0_1_phenomenological"));

    let dir2 = tempfile::tempdir().unwrap();
    run("fig1_h2_conversion_hold").write(dir2.path()).unwrap();
    for e in &back.outputs {
        assert_eq!(
            std::fs::read(dir.path().join(&e.path)).unwrap(),
            std::fs::read(dir2.path().join(&e.path)).unwrap()
        );
    }
    assert_eq!(
        std::fs::read(dir.path().join(Manifest::FILE)).unwrap(),
        std::fs::read(dir2.path().join(Manifest::FILE)).unwrap()
    );
}

#[test]
fn zero_roton_table_feeds_calibration() {
    let r = run("fig1_h2_pressure_series");
    let data = r.zero_roton_dataset();
    assert_eq!(data.rows.len(), r.points.len());
    let back = roton::calibrate::FrequencyDataset::read(data.to_csv().unwrap().as_bytes(), "mem").unwrap();
    assert_eq!(back.rows.len(), data.rows.len());
}
