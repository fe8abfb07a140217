use std::path::Path;
use std::process::{Command, Output};

fn augflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_augflow")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{
  "name": "small",
  "field": { "name": "double_gyre" },
  "grid": { "counts": [20, 10] },
  "scheme": { "kind": "ulam", "n_t": 10 },
  "eps": 0.1,
  "eigs": { "k": 6, "mode": "largest_real" },
  "extract": { "indices": [1], "times": [0.0, 0.5] },
  "escape": { "index": 1, "n": 1000, "runs": 2, "t": 2.0 },
  "flux": { "kind": "box_sets", "index": 1 }
}
"#;

#[test]
fn selftest_passes() {
    let out = augflow(&["selftest"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let syntax = write_config(dir.path(), "a.json", "{\n  \"name\": \"x\",\n  \"eps\": ,\n}");
    let unknown = write_config(dir.path(), "b.json", &SMALL.replace("\"eps\": 0.1", "\"eps\": 0.1, \"epsilon\": 1"));
    let semantic = write_config(dir.path(), "c.json", &SMALL.replace("\"n_t\": 10", "\"n_t\": 0"));
    for (cfg, needle) in [(syntax, ":3:"), (unknown, "epsilon"), (semantic, ":5:")] {
        let out = augflow(&["eigs", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{err}");
    }
    let missing = augflow(&["eigs", "--config", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn small_pipeline_writes_hashed_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    for cmd in ["assemble", "eigs", "extract", "escape", "flux"] {
        let r = augflow(&[cmd, "--config", &cfg, "--out", o, "--threads", "1"]);
        assert!(r.status.success(), "{cmd}: {}", String::from_utf8_lossy(&r.stderr));
    }
    let hash: String = {
        use sha2::Digest;
        sha2::Sha256::digest(SMALL.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    };
    for f in ["generator.mtx", "spectrum.csv", "eigenvectors.csv", "escape.csv", "sets_i1_p0.0000.csv"] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(text.contains(&format!("config_sha256: {hash}")), "{f} lacks the config hash");
    }
    for f in ["assemble.json", "spectrum.json", "escape.json", "flux.json", "families.json"] {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join(f)).unwrap()).unwrap();
        assert_eq!(v["config_sha256"].as_str(), Some(hash.as_str()), "{f}");
    }
    let spectrum: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("spectrum.json")).unwrap()).unwrap();
    let lead = spectrum["eigenvalues"][0]["value"][0].as_f64().unwrap();
    assert!(lead.abs() < 1e-10);
    let assemble: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("assemble.json")).unwrap()).unwrap();
    assert!(assemble["max_abs_column_mass"].as_f64().unwrap() < 1e-10);
}

#[test]
fn escape_is_reproducible_and_seed_override_changes_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let run = |sub: &str, extra: &[&str]| {
        let o = dir.path().join(sub);
        let mut args = vec!["escape", "--config", &cfg, "--out", o.to_str().unwrap()];
        args.extend_from_slice(extra);
        let r = augflow(&args);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(o.join("escape.json")).unwrap()).unwrap();
        v["families"][0]["rates"].clone()
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--seed-override", "99"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}
