//! End-to-end pipeline runs on a deliberately coarse twin.

use std::path::Path;
use std::process::Command;

use qpat::acoustics::SolverConfig;
use qpat::phantom::SamplerRanges;
use qpat::pipeline::{
    depth_decorrelation_from_dir, run_pipeline, scenario_with_source, AcousticConfig, GridConfig, Method, PhantomSource,
    PipelineConfig,
};
use qpat::recon::ReconConfig;
use qpat::QpatError;

fn tiny(out: &Path, count: usize) -> PipelineConfig {
    let test = PhantomSource::Sampler {
        seed: 11,
        count,
        prefix: "test_".into(),
        ranges: SamplerRanges { inclusion_count: [1, 2], ..Default::default() },
    };
    let mut cfg = PipelineConfig::new(out, test);
    cfg.training = Some(PhantomSource::Sampler {
        seed: 12,
        count: 3,
        prefix: "train_".into(),
        ranges: SamplerRanges::homogeneous(),
    });
    cfg.grid = GridConfig { dims: [32, 32, 32], spacing_mm: 1.25 };
    cfg.fluence.photons = 20_000;
    cfg.acoustic = AcousticConfig {
        grid_size: 112,
        spacing_mm: 0.8,
        solver: SolverConfig { dt: 0.1, n_steps: 420, ..SolverConfig::default() },
        ..AcousticConfig::default()
    };
    cfg.recon = ReconConfig { n_pixels: 64, crop: 60, bandpass_hi_mhz: 3.0, ..ReconConfig::default() };
    cfg
}

#[test]
fn two_wavelengths_three_phantoms() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 3);
    cfg.wavelengths_nm = vec![750.0, 800.0];
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.images.len(), 6);
    for p in &out.images {
        assert!(p.exists(), "{}", p.display());
    }
    assert_eq!(out.calibrations.len(), 2);
    for m in [Method::Cal, Method::Gtphi] {
        let res = out.method(m).unwrap();
        // one background row plus one per inclusion, per phantom and wavelength
        let per_wl = res.report.rows.iter().filter(|r| r.wavelength_nm == 800.0).count();
        assert_eq!(res.report.rows.len(), 2 * per_wl);
        assert!(per_wl >= 6);
        assert!(dir.path().join(format!("report_{}.csv", m.as_str())).exists());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out.manifest_path).unwrap()).unwrap();
    let paths: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    assert!(paths.contains(&"phantoms/test_000/750nm/image.bin"));
    assert!(paths.contains(&"report_gtphi.csv"));
}

#[test]
fn reruns_are_identical_and_resume_skips_finished_stages() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_pipeline(&tiny(a.path(), 2)).unwrap();
    assert!(first.manifest.stages.iter().all(|s| !s.skipped));

    // Different directory and thread count, same content.
    let mut other = tiny(b.path(), 2);
    other.threads = Some(1);
    let fresh = run_pipeline(&other).unwrap();
    assert_eq!(first.manifest.content_hash().unwrap(), fresh.manifest.content_hash().unwrap());

    let resumed = run_pipeline(&tiny(a.path(), 2)).unwrap();
    assert!(resumed.manifest.stages.iter().all(|s| s.skipped));
    assert_eq!(first.manifest.content_hash().unwrap(), resumed.manifest.content_hash().unwrap());

    // A tampered artifact invalidates its stage and is rebuilt bit for bit.
    let image = a.path().join("phantoms/test_001/800nm/image.bin");
    let original = std::fs::read(&image).unwrap();
    std::fs::write(&image, vec![0u8; original.len()]).unwrap();
    let repaired = run_pipeline(&tiny(a.path(), 2)).unwrap();
    assert_eq!(std::fs::read(&image).unwrap(), original);
    let rebuilt: Vec<_> = repaired.manifest.stages.iter().filter(|s| !s.skipped).map(|s| s.stage.as_str()).collect();
    assert!(rebuilt.contains(&"recon"));
    assert!(!rebuilt.contains(&"fluence"));
    assert_eq!(first.manifest.content_hash().unwrap(), repaired.manifest.content_hash().unwrap());
}

#[test]
fn config_change_reruns_downstream_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), 1);
    run_pipeline(&cfg).unwrap();
    let mut changed = cfg.clone();
    changed.estimate.depth_threshold_mm = 2.0;
    let out = run_pipeline(&changed).unwrap();
    for s in &out.manifest.stages {
        assert!(s.skipped, "{} ({}) reran", s.stage, s.subject);
    }
    changed.recon.sound_speed = 1.52;
    let out = run_pipeline(&changed).unwrap();
    let rerun = |name: &str| out.manifest.stages.iter().filter(|s| s.stage == name).all(|s| !s.skipped);
    assert!(rerun("recon") && rerun("calibration") && rerun("estimate"));
    assert!(out.manifest.stages.iter().filter(|s| s.stage == "fluence" || s.stage == "acoustic").all(|s| s.skipped));
}

#[test]
fn depth_scenario_matches_persisted_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), 1);
    let source = PhantomSource::Sampler { seed: 3, count: 4, prefix: "homogeneous_".into(), ranges: SamplerRanges::homogeneous() };
    let s = scenario_with_source(&cfg, &source).unwrap();
    assert_eq!(s.correlations.len(), 13);
    assert!(s.correlations[0].pearson_r.is_finite());
    let again = depth_decorrelation_from_dir(dir.path(), &s.phantom_ids, 800.0).unwrap();
    for (x, y) in s.correlations.iter().zip(&again.correlations) {
        assert_eq!(x.n_phantoms, y.n_phantoms);
        assert!((x.pearson_r - y.pearson_r).abs() < 1e-12 || (x.pearson_r.is_nan() && y.pearson_r.is_nan()));
    }
    assert!(dir.path().join("depth_decorrelation.csv").exists());

    let inclusions = PhantomSource::Sampler {
        seed: 3,
        count: 2,
        prefix: "x_".into(),
        ranges: SamplerRanges { inclusion_count: [1, 1], ..Default::default() },
    };
    assert!(matches!(scenario_with_source(&cfg, &inclusions), Err(QpatError::Validation(_))));
}

#[test]
fn training_and_test_ids_must_differ() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 1);
    cfg.training = Some(cfg.phantoms.clone());
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, QpatError::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_phantom_file_fails_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 1);
    cfg.phantoms = PhantomSource::Files { paths: vec![dir.path().join("absent.json")] };
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("absent.json"));
    assert!(!dir.path().join("phantoms").exists());
}

fn qpat(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qpat")).args(args).current_dir(cwd).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(qpat(&["bogus"], d).status.code(), Some(2));
    std::fs::write(d.join("bad.json"), r#"{"output_dir": "o", "phantoms": {"source": "sampler", "seed": 1, "count": 1}, "photon": 5}"#).unwrap();
    assert_eq!(qpat(&["--config", "bad.json", "pipeline"], d).status.code(), Some(2));
    std::fs::write(d.join("map.json"), r#"{"slope": 1.0, "intercept": 0.0}"#).unwrap();
    let out = qpat(&["--out", "mu.bin", "estimate", "--method", "cal", "--image", "nope.bin", "--map", "map.json"], d);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
    // R + T > 1 cannot come from a passive slab
    std::fs::write(d.join("dis.csv"), "wavelength_nm,total_reflectance,diffuse_transmittance\n800,0.7,0.6\n").unwrap();
    assert_eq!(qpat(&["--out", "props.csv", "iad", "--meas", "dis.csv", "--thickness", "3"], d).status.code(), Some(3));
}

#[test]
fn cli_phantom_sampling_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for sub in ["a", "b"] {
        let out = qpat(&["--seed", "9", "--out", sub, "phantom", "--count", "2"], d);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(d.join("a/phantom_001.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b/phantom_001.json")).unwrap());
}

#[test]
fn documented_desk_config_matches_desk_scale() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/desk.json");
    let cfg = PipelineConfig::read(&path).unwrap();
    cfg.validate().unwrap();
    let reference = PipelineConfig::desk_scale(&cfg.output_dir, cfg.phantoms.clone());
    assert_eq!((&cfg.grid, &cfg.acoustic, &cfg.recon), (&reference.grid, &reference.acoustic, &reference.recon));
    assert_eq!(cfg.fluence, reference.fluence);
    let Some(PhantomSource::Sampler { ranges, .. }) = &cfg.training else { panic!("no training set") };
    assert_eq!(ranges, &SamplerRanges::homogeneous());
}
