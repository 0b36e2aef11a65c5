use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qpgap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpgap"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn result(dir: &Path, file: &str) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(file)).unwrap()).unwrap();
    v["result"].clone()
}

#[test]
fn free_spectrum_is_one_band() {
    let d = tempfile::tempdir().unwrap();
    let o = qpgap(d.path(), &["spectrum", "--lambda", "0", "--q", "13"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.path().join("qpgap-out/spectrum.csv")).unwrap();
    assert!(csv.starts_with("# qpgap "));
    let rows = data_lines(&csv);
    assert_eq!(rows[0], "band,lo,hi");
    assert_eq!(rows.len(), 2);
    let f: Vec<f64> = rows[1].split(',').skip(1).map(|x| x.parse().unwrap()).collect();
    assert!((f[0] + 2.0).abs() < 1e-10 && (f[1] - 2.0).abs() < 1e-10, "{f:?}");
}

#[test]
fn sweep_lists_every_reduced_fraction() {
    let d = tempfile::tempdir().unwrap();
    let o = qpgap(d.path(), &["spectrum", "--lambda", "1", "--sweep", "5", "--emit-plot-data"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(d.path().join("qpgap-out/spectrum.csv")).unwrap();
    let rows = data_lines(&csv);
    assert_eq!(rows[0], "p,q,band,lo,hi");
    // q bands per p/q, except that the central gap of an even q is closed
    assert_eq!(rows.len() - 1, 1 + 2 * 3 + 2 * 3 + 4 * 5);
    assert!(d.path().join("qpgap-out/spectrum_plot.dat").exists());
}

#[test]
fn plot_data_only_on_request() {
    let d = tempfile::tempdir().unwrap();
    assert!(qpgap(d.path(), &["spectrum", "--lambda", "0", "--q", "5"]).status.success());
    assert!(!d.path().join("qpgap-out/spectrum_plot.dat").exists());
}

#[test]
fn beta_of_silver_ratio_is_zero() {
    let d = tempfile::tempdir().unwrap();
    let o = qpgap(d.path(), &["beta", "--freq", "sqrt2m1"]);
    assert!(o.status.success());
    let r = result(d.path(), "qpgap-out/beta.json");
    assert!(r["beta"].as_f64().unwrap() < 0.02, "{r}");
    assert!(r["quotients"].as_array().unwrap().iter().all(|a| a == 2));
}

#[test]
fn liouville_beta_is_recovered() {
    let d = tempfile::tempdir().unwrap();
    let o = qpgap(d.path(), &["beta", "--freq", "liouville:beta=0.5:seed=3", "--kmax", "1000000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let b = result(d.path(), "qpgap-out/beta.json")["beta"].as_f64().unwrap();
    assert!((b - 0.5).abs() < 1e-3, "{b}");
}

#[test]
fn decay_reports_gamma() {
    let d = tempfile::tempdir().unwrap();
    let o = qpgap(d.path(), &["decay", "--lambda", "0.25", "--m-max", "4", "--q-max", "89"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result(d.path(), "qpgap-out/decay.json");
    assert!(r["fit"]["gamma"].as_f64().unwrap() > 0.0, "{r}");
    let csv = fs::read_to_string(d.path().join("qpgap-out/decay.csv")).unwrap();
    assert_eq!(data_lines(&csv)[0], "m,width_q55,width_q89,stable");
}

#[test]
fn config_file_and_flag_override() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("run.cfg"), "# free operator\nlambda = 0.5\nq-max = 8\n").unwrap();
    let o = qpgap(d.path(), &["spectrum", "--config", "run.cfg", "--lambda", "0"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(d.path().join("qpgap-out/spectrum.csv")).unwrap();
    assert_eq!(data_lines(&csv).len(), 2);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(qpgap(d.path(), &["spectrum"]).status.code(), Some(2));
    assert_eq!(qpgap(d.path(), &["spectrum", "--lambda", "1", "--freq", "nope"]).status.code(), Some(2));
    fs::write(d.path().join("bad.cfg"), "colour = red\n").unwrap();
    assert_eq!(qpgap(d.path(), &["spectrum", "--config", "bad.cfg"]).status.code(), Some(2));
    let o = qpgap(d.path(), &["reduce", "--lambda", "0.25", "--m", "40", "--q-max", "13"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `spectrum`"));
}

#[test]
fn cache_reuse_and_corruption() {
    let d = tempfile::tempdir().unwrap();
    let args = ["gaps", "--lambda", "0.5", "--q-max", "21", "--rho-iterations", "20000"];
    let first = qpgap(d.path(), &args);
    assert!(first.status.success());
    let out1 = fs::read_to_string(d.path().join("qpgap-out/gaps.csv")).unwrap();
    let second = qpgap(d.path(), &args);
    assert!(String::from_utf8_lossy(&second.stdout).contains("(cached)"));
    assert_eq!(out1, fs::read_to_string(d.path().join("qpgap-out/gaps.csv")).unwrap());

    assert!(qpgap(d.path(), &["cache", "verify"]).status.success());
    let cache = d.path().join(".qpgap-cache");
    let entry = fs::read_dir(&cache)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("gaps-"))
        .unwrap();
    let text = fs::read_to_string(&entry).unwrap();
    fs::write(&entry, text.replacen("0.", "9.", 1)).unwrap();
    assert_eq!(qpgap(d.path(), &["cache", "verify"]).status.code(), Some(4));

    let third = qpgap(d.path(), &args);
    assert!(third.status.success());
    assert!(String::from_utf8_lossy(&third.stderr).contains("corrupt"));
    assert_eq!(out1, fs::read_to_string(d.path().join("qpgap-out/gaps.csv")).unwrap());
    assert!(qpgap(d.path(), &["cache", "verify"]).status.success());
    assert!(qpgap(d.path(), &["cache", "clear"]).status.success());
    assert!(String::from_utf8_lossy(&qpgap(d.path(), &["cache", "list"]).stdout).is_empty());
}

#[test]
fn outputs_do_not_depend_on_jobs() {
    let d = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    for jobs in ["1", "4"] {
        let out = format!("out{jobs}");
        let o = qpgap(d.path(), &["spectrum", "--lambda", "2", "--sweep", "8", "--jobs", jobs, "--no-cache", "--out", &out]);
        assert!(o.status.success());
        seen.push(fs::read(d.path().join(&out).join("spectrum.csv")).unwrap());
    }
    assert_eq!(seen[0], seen[1]);
}
