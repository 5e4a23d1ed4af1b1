use std::path::Path;
use std::process::{Command, Output};

fn stopt(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stopt"));
    cmd.args(args).env_remove("STOPT_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("STOPT_OUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

const SMALL: &str = r#"
mesh = { nx = 12, ny = 4 }
filter_radius = 1.5
stages = [
  { penalty = 1.0, beta = 0.0, tol = 1e-3 },
  { penalty = 3.0, beta = 0.0, tol = 1e-3 },
]
[scenarios]
count = 8
rank = 5
"#;

#[test]
fn run_honours_output_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("output_dir = \"ignored\"\n{SMALL}")).unwrap();
    let out_dir = dir.path().join("from_env");
    let out = stopt(&["run", "--config", cfg.to_str().unwrap()], Some(&out_dir));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = json(&out.stdout);
    assert!((summary["volume"].as_f64().unwrap() - 0.4).abs() < 1e-3);
    for f in [
        "density.pgm",
        "density.csv",
        "report.json",
        "report.csv",
        "history.csv",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    assert!(!Path::new("ignored").exists());

    // the flag beats the environment
    let flag_dir = dir.path().join("from_flag");
    let out = stopt(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            flag_dir.to_str().unwrap(),
        ],
        Some(&out_dir),
    );
    assert!(out.status.success());
    assert!(flag_dir.join("report.json").exists());
}

#[test]
fn bad_config_gives_error_document() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "method = \"trace\"\nobjective = \"mean_std\"\n").unwrap();
    let out = stopt(&["run", "--config", cfg.to_str().unwrap()], None);
    assert!(!out.status.success());
    let doc = json(&out.stderr);
    assert_eq!(doc["error"]["kind"], "config");
    assert!(doc["error"]["message"]
        .as_str()
        .unwrap()
        .contains("mean_std"));

    let out = stopt(
        &[
            "run",
            "--config",
            dir.path().join("missing.toml").to_str().unwrap(),
        ],
        None,
    );
    assert!(!out.status.success());
    assert_eq!(json(&out.stderr)["error"]["kind"], "config");
}

#[test]
fn scenarios_export_then_import() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let file = dir.path().join("loads.csv");
    let out = stopt(
        &[
            "scenarios",
            "export",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            file.to_str().unwrap(),
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = stopt(
        &[
            "scenarios",
            "import",
            "--config",
            cfg.to_str().unwrap(),
            "--file",
            file.to_str().unwrap(),
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc = json(&out.stdout);
    assert_eq!(doc["L"], 8);
    assert_eq!(doc["R"], 5);
    assert_eq!(doc["n_dofs"], 2 * 13 * 5);

    std::fs::write(&file, "n_dofs,L,R,seed\n3,1,4,0\n1.0,oops,2.0\n").unwrap();
    let out = stopt(
        &[
            "scenarios",
            "import",
            "--config",
            cfg.to_str().unwrap(),
            "--file",
            file.to_str().unwrap(),
        ],
        None,
    );
    assert!(!out.status.success());
    assert_eq!(json(&out.stderr)["error"]["kind"], "format");
}

#[test]
fn profile_and_ratios_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    let out = stopt(
        &[
            "profile",
            "--config",
            cfg.to_str().unwrap(),
            "--n",
            "2,4,8",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(out_dir.join("profile.csv")).unwrap();
    // header, exact row, 3 counts for each of 2 kinds
    assert_eq!(csv.lines().count(), 1 + 1 + 6);

    let out = stopt(
        &[
            "ratios",
            "--config",
            cfg.to_str().unwrap(),
            "--designs",
            "3",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for m in ["0.1", "0.3", "0.5", "0.7", "0.9"] {
        let f = std::fs::read_to_string(out_dir.join(format!("ratios_mean_{m}.csv"))).unwrap();
        assert_eq!(f.lines().count(), 4);
    }

    let out = stopt(
        &[
            "profile",
            "--config",
            cfg.to_str().unwrap(),
            "--n",
            "64",
            "--kinds",
            "hadamard",
        ],
        None,
    );
    assert!(!out.status.success());
    assert_eq!(json(&out.stderr)["error"]["kind"], "parameter");
}
