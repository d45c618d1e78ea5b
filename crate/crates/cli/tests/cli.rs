use std::fs;
use std::path::Path;

use fbmhd_cli::config::{parse_config, ConfigError, RunConfig};
use fbmhd_cli::output::{decode_field, encode_field, header_len, ArtifactWriter};
use fbmhd_cli::{run, EXIT_CHECK_FAILED, EXIT_PASS, EXIT_RUNTIME, EXIT_USAGE};

fn fbmhd(args: &[&str]) -> i32 {
    let mut all = vec!["fbmhd"];
    all.extend_from_slice(args);
    run(all)
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn violations(text: &str) -> Vec<String> {
    match parse_config(text) {
        Err(ConfigError::Validation(v)) => v,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn empty_config_gives_defaults() {
    let cfg = parse_config("").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.grid.d, 3);
    assert_eq!(cfg.iteration.theta0, 4.0);
    assert_eq!(cfg.iteration.alpha, 12.0);
}

#[test]
fn negative_light_speed_parameter_is_named() {
    let v = violations("[physics]\neps_c = -1.0\n");
    assert_eq!(v.len(), 1);
    assert!(v[0].starts_with("physics.eps_c"), "{v:?}");
}

#[test]
fn three_points_cannot_carry_the_stencil() {
    let v = violations("[grid]\nn1 = 3\n");
    assert!(v.iter().any(|m| m.starts_with("grid.n1") && m.contains("stencil")), "{v:?}");
}

#[test]
fn every_violation_is_reported() {
    let v = violations("[grid]\nd = 4\nL = 0.5\n[iteration]\nalpha = 3.0\n[scenario]\nname = \"vortex\"\n");
    for key in ["grid.d", "grid.L", "iteration.alpha", "scenario.name"] {
        assert!(v.iter().any(|m| m.starts_with(key)), "{key} missing from {v:?}");
    }
}

#[test]
fn unknown_key_points_at_its_line() {
    match parse_config("seed = 3\n\n[solver]\ncfl = 0.3\nsubsteps = 2\n") {
        Err(ConfigError::Parse { line, message, .. }) => {
            assert_eq!(line, 5);
            assert!(message.contains("substeps"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn snapshot_size_is_header_plus_payload() {
    let (n1, n2) = (33, 16);
    let data: Vec<f64> = (0..n1 * n2).map(|k| k as f64 * 0.25).collect();
    let bytes = encode_field(&[n1, n2], &[0.125, 0.0625], &data);
    assert_eq!(bytes.len(), header_len(2) + 8 * n1 * n2);
    let (dims, h, back) = decode_field(&bytes).unwrap();
    assert_eq!((dims, h, back), (vec![n1, n2], vec![0.125, 0.0625], data));
    assert!(decode_field(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn empty_run_writes_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let entries = ArtifactWriter::new(dir.path()).unwrap().finish().unwrap();
    assert!(entries.is_empty());
    let text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert_eq!(serde_json::from_str::<Vec<serde_json::Value>>(&text).unwrap().len(), 0);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(fbmhd(&["transmogrify"]), EXIT_USAGE);
    assert_eq!(fbmhd(&[]), EXIT_USAGE);
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[grid]\nn1 = 3\n");
    assert_eq!(fbmhd(&["--config", &cfg, "limit-study"]), EXIT_USAGE);
    assert_eq!(fbmhd(&["--config", "/nonexistent/run.toml", "limit-study"]), EXIT_USAGE);
}

#[test]
fn verify_matrices_reports_the_boundary_inertia() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "[verify]\nsamples = 100\n");
    assert_eq!(fbmhd(&["--config", &cfg, "--out", out.to_str().unwrap(), "verify-matrices"]), EXIT_PASS);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["data"]["inertia"], serde_json::json!([1, 1, 6]));
    assert!(report["data"]["symmetry_max"].as_f64().unwrap() < 1e-12);
    assert!(report["data"]["limit_order"].as_f64().unwrap() >= 1.9);
}

#[test]
fn limit_study_fits_second_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(fbmhd(&["--out", out.to_str().unwrap(), "limit-study"]), EXIT_PASS);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["data"]["eps"], serde_json::json!([0.2, 0.1, 0.05]));
    assert!(report["data"]["min_order"].as_f64().unwrap() >= 1.9);
}

#[test]
fn lost_sign_condition_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "[grid]\nd = 2\nn1 = 17\nn_tangential = 8\n[scenario]\nname = \"rt-marginal\"\n");
    assert_eq!(fbmhd(&["--config", &cfg, "--out", out.to_str().unwrap(), "march"]), EXIT_RUNTIME);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["error"]["kind"], "SignConditionLost");
    assert_eq!(report["error"]["code"], 50);
}

#[test]
fn too_few_iterations_fail_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "[grid]\nd = 2\n[iteration]\ntheta0 = 64.0\nn_max = 2\n[output]\nformats = [\"json\"]\n",
    );
    assert_eq!(fbmhd(&["--config", &cfg, "--out", out.to_str().unwrap(), "nash-moser"]), EXIT_CHECK_FAILED);
}

fn march_run(dir: &Path, name: &str) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let out = dir.join(name);
    let cfg = write_config(dir, "seed = 7\n[grid]\nd = 2\nn1 = 17\nn_tangential = 8\n[output]\nsnapshot_every = 4\n");
    assert_eq!(fbmhd(&["--config", &cfg, "--out", out.to_str().unwrap(), "march"]), EXIT_PASS);
    let read = |f: &str| fs::read(out.join(f)).unwrap();
    (read("constraints.csv"), read("report.json"), read("manifest.json"))
}

#[test]
fn same_seed_reproduces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let a = march_run(dir.path(), "a");
    let b = march_run(dir.path(), "b");
    assert_eq!(a, b);
    let csv = String::from_utf8(a.0).unwrap();
    assert!(csv.starts_with("t,h_normal,div_h,rt_margin\n"));
    let manifest: Vec<serde_json::Value> = serde_json::from_slice(&a.2).unwrap();
    let snap = manifest.iter().find(|e| e["path"] == "u_00000.bin").unwrap();
    // one state snapshot: n1 x n2 points of 2d + 2 components
    assert_eq!(snap["bytes"].as_u64().unwrap() as usize, header_len(3) + 8 * 17 * 8 * 6);
}

#[test]
fn norms_reads_a_field_file() {
    let dir = tempfile::tempdir().unwrap();
    let (nt, n1, n2) = (9, 17, 8);
    let data: Vec<f64> = (0..nt * n1 * n2)
        .map(|k| {
            let (t, i, j) = (k / (n1 * n2), (k / n2) % n1, k % n2);
            (t as f64 * 0.125).powi(3) * (-(i as f64) * 0.25).exp() * (std::f64::consts::TAU * j as f64 / n2 as f64).sin()
        })
        .collect();
    let input = dir.path().join("field.bin");
    fs::write(&input, encode_field(&[nt, n1, n2], &[0.125, 0.25, 1.0 / n2 as f64], &data)).unwrap();
    let out = dir.path().join("out");
    let code = fbmhd(&["--out", out.to_str().unwrap(), "norms", "--input", input.to_str().unwrap(), "--m", "2"]);
    assert_eq!(code, EXIT_PASS);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["data"]["m"], 2);
    let value = report["data"]["value"].as_f64().unwrap();
    let parts: f64 = report["data"]["breakdown"].as_array().unwrap().iter().map(|e| e["value"].as_f64().unwrap().powi(2)).sum();
    assert!(value > 0.0 && (parts.sqrt() - value).abs() <= 1e-12 * value, "{value} vs {}", parts.sqrt());
}
