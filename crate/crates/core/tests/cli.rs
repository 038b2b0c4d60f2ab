use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use filter_stability::output::{sha256_hex, MANIFEST_NAME, OUT_DIR_ENV};

fn filterstab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_filterstab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove(OUT_DIR_ENV)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn manifest_matches_files(out: &Path) {
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join(MANIFEST_NAME)).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for entry in outputs {
        let bytes = fs::read(out.join(entry["path"].as_str().unwrap())).unwrap();
        assert_eq!(entry["sha256"].as_str().unwrap(), sha256_hex(&bytes));
    }
}

#[test]
fn analyze_reports_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let m1 = write(dir.path(), "m1.toml", "epsilon = 0.0\nh = \"h1\"\n");
    let o = filterstab(&["analyze", &m1], &dir.path().join("a"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("detectable: false"));
    manifest_matches_files(&dir.path().join("a"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a/analysis.json")).unwrap()).unwrap();
    assert_eq!(json["observable_dim"], 2);
    assert_eq!(json["recurrent_classes"], serde_json::json!([[0, 1], [2, 3]]));

    let m2 = write(dir.path(), "m2.toml", "epsilon = 0.0\nh = \"h2\"\n");
    let o = filterstab(&["analyze", &m2], &dir.path().join("b"));
    assert!(stdout(&o).contains("observable: false"));
    assert!(stdout(&o).contains("detectable: true"));
}

#[test]
fn malformed_inputs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "rates = [[-1.0, 1.0], [2.0, -1.5]]\nobservation = [[1.0], [0.0]]\n");
    let o = filterstab(&["analyze", &bad], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 1 of the rate matrix sums to"), "{}", stderr(&o));

    let syntax = write(dir.path(), "syntax.toml", "epsilon = 0.0\nh = \n");
    let o = filterstab(&["analyze", &syntax], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let zero = write(dir.path(), "zero.toml", "n_paths = 0\n[[cases]]\nepsilon = 0.1\nh = \"h1\"\n");
    let o = filterstab(&["divergence", &zero], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_paths"));

    let o = filterstab(&["analyze", "/nonexistent/model.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_writes_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        "horizon = 2.0\nn_paths = 40\n[[cases]]\nepsilon = 0.1\nh = \"h3\"\n[[cases]]\nname = \"same\"\nepsilon = 0.1\nh = \"h3\"\nmu = [0.1, 0.2, 0.3, 0.4]\n",
    );
    let out = dir.path().join("d");
    let o = filterstab(&["divergence", &cfg], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("eps0.1_h3.csv")).unwrap();
    assert!(csv.starts_with("t,mean_chi2,stderr,n_paths,floor_hits\n"));
    assert_eq!(csv.lines().count(), 402);
    let flat = fs::read_to_string(out.join("same.csv")).unwrap();
    for line in flat.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(v.abs() < 1e-12);
    }
    let svg = fs::read_to_string(out.join("divergence.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    manifest_matches_files(&out);
}

#[test]
fn backward_reports_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bw.toml",
        "horizon = 1.0\n[[cases]]\nepsilon = 0.1\nh = \"h3\"\n[[cases]]\nname = \"w\"\nepsilon = 0.0\nh = \"h1\"\nwitness = 0.5\n[backward]\nn_per_state = 300\nn_paths = 600\n[backward.nested]\nouter_paths = 40\ninner_paths = 40\n",
    );
    let out = dir.path().join("b");
    let o = filterstab(&["backward", &cfg], &out);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("backward.json")).unwrap()).unwrap();
    let rows = json.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for key in ["y0", "stderr", "var_y0", "var_gamma_t", "identity_z", "jensen_pass", "checkpoints", "integrated_energy", "empirical_rate_bound"] {
        assert!(rows[0].get(key).is_some(), "missing {key}");
    }
    assert_eq!(rows[0]["variance_decay"], true);
    assert_eq!(rows[1]["variance_decay"], false);
    assert_eq!(rows[0]["checkpoints"].as_array().unwrap().len(), 5);
}

#[test]
fn table_quick_run_is_seed_stable_in_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let mut verdicts = Vec::new();
    for seed in ["1", "2", "3"] {
        let out = dir.path().join(seed);
        let o = filterstab(&["reproduce-table1", "--quick", "--seed", seed], &out);
        assert!(matches!(o.status.code(), Some(0) | Some(4)), "{}", stderr(&o));
        assert!(stdout(&o).contains("--quick uses 100 paths"));
        let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("table1.json")).unwrap()).unwrap();
        let v: Vec<String> = json.as_array().unwrap().iter().map(|r| r["verdict"].as_str().unwrap().to_string()).collect();
        verdicts.push(v);
        manifest_matches_files(&out);
    }
    assert!(verdicts.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(verdicts[0], ["Not detectable", "Non-ergodic but detectable", "Observable", "Ergodic", "Ergodic"]);
}

#[test]
fn environment_sets_default_output() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.toml", "epsilon = 0.1\nh = \"h1\"\n");
    let target = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_filterstab")).args(["analyze", &model]).env(OUT_DIR_ENV, &target).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(target.join("analysis.json").exists());
}
