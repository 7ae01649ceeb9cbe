use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use selbias::sim::{gen_block, BlockDgpSpec};
use selbias::Dataset;

fn selbias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selbias"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = selbias(args);
    assert!(
        out.status.success(),
        "selbias {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn noise(i: usize, m: usize) -> f64 {
    ((i * 7919 + m * 104_729) as f64 * 0.618).sin()
}

fn write_pointwise(dir: &Path, name: &str, values: &[f64]) -> PathBuf {
    let path = dir.join(format!("{name}.csv"));
    let body: String = values.iter().map(|v| format!("{v}\n")).collect();
    fs::write(&path, format!("elpd_loo\n{body}")).unwrap();
    path
}

fn write_dataset(path: &Path, data: &Dataset) {
    let mut text = data.names.join(",") + ",y\n";
    for i in 0..data.n() {
        let row: Vec<String> = (0..data.p()).map(|j| data.x()[(i, j)].to_string()).collect();
        text += &format!("{},{}\n", row.join(","), data.y()[i]);
    }
    fs::write(path, text).unwrap();
}

fn toy_data(dir: &Path) -> PathBuf {
    let path = dir.join("toy.csv");
    let mut text = String::from("a,b,c,y\n");
    for i in 0..30 {
        let (a, b, c) = (noise(i, 1), noise(i, 2), noise(i, 3));
        text += &format!("{a},{b},{c},{}\n", 1.0 + 2.0 * a + 0.3 * noise(i, 4));
    }
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn identical_models_are_equivalent() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f64> = (0..50).map(|i| -1.0 + 0.3 * noise(i, 0)).collect();
    let a = write_pointwise(dir.path(), "m1", &values);
    let b = write_pointwise(dir.path(), "m2", &values);
    let report: Value = serde_json::from_str(&ok(&["compare", s(&a), s(&b)])).unwrap();
    let c = &report["comparison"];
    assert_eq!(c["all_equivalent"], true);
    for d in c["diffs"].as_array().unwrap() {
        assert_eq!(d["estimate"], 0.0);
    }
    for w in report["weights"].as_array().unwrap() {
        assert_eq!(w["pseudo_bma"], 0.5);
        assert_eq!(w["pseudo_bma_plus"], 0.5);
    }
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["provenance"]["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn injected_winner_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let n = 100;
    let base: Vec<f64> = (0..n).map(|i| -1.2 + 0.5 * noise(i, 0)).collect();
    let mut paths = Vec::new();
    for m in 0..11 {
        let shift = if m == 6 { 10.0 / n as f64 } else { 0.0 };
        let values: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.05 * noise(i, m + 1) + shift)
            .collect();
        paths.push(write_pointwise(dir.path(), &format!("model{m}"), &values));
    }
    let mut args = vec!["compare"];
    args.extend(paths.iter().map(|p| s(p)));
    let report: Value = serde_json::from_str(&ok(&args)).unwrap();
    let c = &report["comparison"];
    assert_eq!(c["best_model"], "model6");
    assert_eq!(c["all_equivalent"], false);
    assert!(c["max_diff"].as_f64().unwrap() > c["threshold"].as_f64().unwrap());
    assert!(c["khat_tail"].is_number());

    args.extend(["--format", "csv"]);
    let table = ok(&args);
    let flagged: Vec<&str> = table
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(6) == Some("true"))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(flagged, vec!["model6"]);
}

#[test]
fn fewer_than_ten_models_leave_tail_undiagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = (0..4)
        .map(|m| {
            let v: Vec<f64> = (0..40).map(|i| -1.0 + 0.2 * noise(i, m)).collect();
            write_pointwise(dir.path(), &format!("m{m}"), &v)
        })
        .collect();
    let mut args = vec!["compare"];
    args.extend(paths.iter().map(|p| s(p)));
    let report: Value = serde_json::from_str(&ok(&args)).unwrap();
    let tail = report["diagnostics"]
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["name"] == "tail_khat")
        .unwrap();
    assert_eq!(tail["pass"], false);
    assert!(tail["value"].is_null());
}

#[test]
fn explicit_baseline_and_unknown_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_pointwise(dir.path(), "a", &[-1.0, -2.0, -1.5]);
    let b = write_pointwise(dir.path(), "b", &[-0.5, -2.0, -1.0]);
    let report: Value = serde_json::from_str(&ok(&["compare", s(&a), s(&b), "--baseline", "b"])).unwrap();
    assert_eq!(report["comparison"]["baseline_id"], "b");
    assert_eq!(report["comparison"]["diffs"][0]["estimate"], -1.0);
    let out = selbias(&["compare", s(&a), s(&b), "--baseline", "zzz"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("zzz"));
}

#[test]
fn mismatched_observation_counts_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_pointwise(dir.path(), "a", &[-1.0, -2.0, -1.5]);
    let b = write_pointwise(dir.path(), "b", &[-0.5, -2.0]);
    let out = selbias(&["compare", s(&a), s(&b)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema mismatch"));
}

#[test]
fn unreadable_input_fails() {
    let out = selbias(&["compare", "/nonexistent/a.csv", "/nonexistent/b.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read input"));
}

#[test]
fn loglik_inputs_use_psis() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for m in 0..2 {
        let mut text = String::new();
        for d in 0..200 {
            let row: Vec<String> = (0..25)
                .map(|i| format!("{}", -1.0 - 0.1 * m as f64 + 0.2 * noise(i + 31 * d, m)))
                .collect();
            text += &(row.join(",") + "\n");
        }
        let p = dir.path().join(format!("ll{m}.csv"));
        fs::write(&p, text).unwrap();
        paths.push(p);
    }
    let report: Value =
        serde_json::from_str(&ok(&["compare", "--input-kind", "loglik", s(&paths[0]), s(&paths[1])])).unwrap();
    let names: Vec<&str> = report["diagnostics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"psis_khat_max:ll0"));
    assert!(names.contains(&"psis_khat_max:ll1"));
}

#[test]
fn toy_forward_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path());
    let report: Value = serde_json::from_str(&ok(&["forward", s(&data), "--target", "y"])).unwrap();
    assert_eq!(report["path"]["steps"].as_array().unwrap().len(), 3);
    assert_eq!(report["path"]["steps"][0]["predictor_name"], "a");
    for (_, v) in report["verdicts"].as_object().unwrap() {
        assert!(v.as_u64().unwrap() <= 3);
    }
    let table = ok(&["forward", s(&data), "--target", "y", "--format", "csv"]);
    assert_eq!(table.lines().count(), 5);
    assert!(table.starts_with("size,predictor,raw_elpd,corrected_elpd,test_mlpd,threshold,bias,corrected,beyond_bulge"));
}

#[test]
fn missing_target_names_column() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path());
    let out = selbias(&["forward", s(&data), "--target", "outcome"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("schema mismatch") && err.contains("outcome"), "{err}");
}

#[test]
fn max_size_beyond_p_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path());
    let out = selbias(&["forward", s(&data), "--target", "y", "--max-size", "4"]);
    assert!(!out.status.success());
}

#[test]
fn desk_fixture_saturation_near_test_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = gen_block(&BlockDgpSpec::desk(100, 0.0, 4242)).unwrap();
    let (tr, te) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
    write_dataset(&tr, &train);
    write_dataset(&te, &test);
    let out_dir = dir.path().join("out");
    ok(&[
        "forward",
        s(&tr),
        "--target",
        "y",
        "--test",
        s(&te),
        "--out-dir",
        s(&out_dir),
    ]);
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let corrected_max = report["verdicts"]["corrected_max_size"].as_i64().unwrap();
    let rows = fs::read_to_string(out_dir.join("path.csv")).unwrap();
    let tests: Vec<f64> = rows
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert_eq!(tests.len(), 21);
    let argmax = tests
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > tests[b] { i } else { b }) as i64;
    assert!((corrected_max - argmax).abs() <= 3, "{corrected_max} vs {argmax}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path());
    let a = ok(&["forward", s(&data), "--target", "y", "--seed", "9"]);
    let b = ok(&["forward", s(&data), "--target", "y", "--seed", "9"]);
    assert_eq!(a, b);

    let cfg = dir.path().join("small.toml");
    fs::write(
        &cfg,
        "kind = \"many_k\"\n[many_k]\nseed = 3\nreplications = 3\nn = 30\nks = [2, 5]\nn_test = 20\n",
    )
    .unwrap();
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    ok(&["simulate", s(&cfg), "--out-dir", s(&o1)]);
    ok(&["simulate", s(&cfg), "--out-dir", s(&o2)]);
    for f in ["many_k_reps.csv", "many_k_summary.csv", "summary.json"] {
        assert_eq!(fs::read(o1.join(f)).unwrap(), fs::read(o2.join(f)).unwrap(), "{f}");
    }
    let header = fs::read_to_string(o1.join("many_k_summary.csv")).unwrap();
    assert!(header.starts_with("K,mean_max_diff,predicted_threshold,n_reps"));

    let o3 = dir.path().join("o3");
    ok(&["simulate", s(&cfg), "--out-dir", s(&o3), "--seed", "4"]);
    assert_ne!(
        fs::read(o1.join("many_k_reps.csv")).unwrap(),
        fs::read(o3.join("many_k_reps.csv")).unwrap()
    );
}

#[test]
fn multiplier_grid_writes_one_trajectory_each() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/multipliers_desk.toml");
    let small = dir.path().join("grid.toml");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("replications = 10", "replications = 1");
    fs::write(&small, text).unwrap();
    let out = dir.path().join("out");
    ok(&["simulate", s(&small), "--out-dir", s(&out)]);
    for m in ["1", "1.5", "2"] {
        let t = fs::read_to_string(out.join(format!("trajectory_m{m}.csv"))).unwrap();
        assert_eq!(t.lines().count(), 1 + 2 * 21, "multiplier {m}");
    }
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        selbias::sim::ExperimentConfig::from_toml_str(&text).unwrap();
        count += 1;
    }
    assert!(count >= 4);
}

#[test]
fn empty_config_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.toml");
    fs::write(&cfg, "").unwrap();
    let out = selbias(&["simulate", s(&cfg), "--out-dir", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));

    fs::write(
        &cfg,
        "kind = \"many_k\"\n[many_k]\nseed = 1\nreplications = 3\nn = 30\nks = [2]\nbogus = 1\n",
    )
    .unwrap();
    let out = selbias(&["simulate", s(&cfg), "--out-dir", s(&dir.path().join("o"))]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        !out.status.success() && err.contains("bogus") && err.contains("line"),
        "{err}"
    );
}

#[test]
fn writes_compare_table_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_pointwise(dir.path(), "a", &[-1.0, -2.0, -1.5]);
    let b = write_pointwise(dir.path(), "b", &[-0.5, -2.0, -1.0]);
    let out = dir.path().join("cmp.csv");
    assert!(ok(&["compare", s(&a), s(&b), "--format", "csv", "--out", s(&out)]).is_empty());
    let rows: Vec<String> = fs::read_to_string(&out).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(rows.len(), 2);
}
