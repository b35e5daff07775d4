use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcm")).args(args).output().expect("spawn dcm")
}

fn simulate(dir: &Path, model: &str, seed: &str) -> Output {
    dcm(&[
        "simulate", "--model", model, "--n", "40", "--j", "20", "--k", "4", "--disc", "high", "--seed", seed, "--out",
        dir.to_str().unwrap(),
    ])
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_writes_three_files_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(simulate(&a, "dina", "7").status.success());
    assert!(simulate(&b, "dina", "7").status.success());
    for f in ["responses.csv", "truth.json", "q.csv"] {
        let x = fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty(), "{f}");
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f}");
    }
    let rows = fs::read_to_string(a.join("responses.csv")).unwrap();
    assert_eq!(rows.lines().count(), 40);
    assert!(rows.lines().all(|l| l.split(',').count() == 20));
}

#[test]
fn unsupported_design_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dcm(&["simulate", "--model", "dina", "--n", "40", "--j", "20", "--k", "6", "--disc", "high", "--out"]
        .iter()
        .copied()
        .chain([tmp.path().to_str().unwrap()])
        .collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unsupported"));
    assert!(!tmp.path().join("responses.csv").exists());
}

#[test]
fn bad_flag_value_is_usage_error() {
    let o = dcm(&["simulate", "--model", "gdina", "--n", "40", "--j", "20", "--k", "4", "--disc", "high"]);
    assert_eq!(o.status.code(), Some(2));
}

fn fit(dir: &Path, model: &str, method: &str, extra: &[&str]) -> Output {
    let d = |f: &str| dir.join(f).to_str().unwrap().to_string();
    let mut args = vec![
        "fit".to_string(),
        "--data".into(),
        d("responses.csv"),
        "--q".into(),
        d("q.csv"),
        "--model".into(),
        model.into(),
        "--method".into(),
        method.into(),
        "--out".into(),
        d(&format!("{method}.json")),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    dcm(&refs)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_em_reports_accuracy_from_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(simulate(tmp.path(), "dina", "3").status.success());
    let o = fit(tmp.path(), "dina", "em", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("EACR") && out.contains("PACR"), "{out}");
    let j = read_json(&tmp.path().join("em.json"));
    assert_eq!(j["model"], "dina");
    assert_eq!(j["item_params"].as_array().unwrap().len(), 20);
    assert_eq!(j["profiles"].as_array().unwrap().len(), 40);
    let e = j["eacr"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&e));
}

#[test]
fn fit_np_rejects_lcdm() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(simulate(tmp.path(), "lcdm", "3").status.success());
    let o = fit(tmp.path(), "lcdm", "np", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).to_lowercase().contains("lcdm"));
    assert!(!tmp.path().join("np.json").exists());
}

#[test]
fn fit_np_on_dina() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(simulate(tmp.path(), "dina", "4").status.success());
    let o = fit(tmp.path(), "dina", "np", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j = read_json(&tmp.path().join("np.json"));
    assert_eq!(j["rule"], "conjunctive");
    assert_eq!(j["tie_counts"].as_array().unwrap().len(), 40);
}

#[test]
fn fit_mcmc_single_chain_is_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(simulate(tmp.path(), "dina", "5").status.success());
    let o = fit(tmp.path(), "dina", "mcmc", &["--chains", "1", "--iters", "2000", "--burnin", "500"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("single chain"));
    let j = read_json(&tmp.path().join("mcmc.json"));
    assert_eq!(j["chains"], 1);
    assert_eq!(j["draws_per_chain"], 1500);
    assert!(j["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("single chain")));
}

#[test]
fn fit_em_on_perfect_pattern_data_warns_but_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(simulate(tmp.path(), "dina", "6").status.success());
    // force item 0 to be answered correctly by everyone
    let path = tmp.path().join("responses.csv");
    let text: String = fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| format!("1{}\n", &l[1..]))
        .collect();
    fs::write(&path, text).unwrap();
    let o = fit(tmp.path(), "dina", "em", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("perfect response patterns"));
}

#[test]
fn fit_missing_input_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fit(tmp.path(), "dina", "em", &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_mismatched_q_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(simulate(tmp.path(), "dina", "8").status.success());
    fs::write(tmp.path().join("q.csv"), "1,0,0,0\n0,1,0,0\n").unwrap();
    let o = fit(tmp.path(), "dina", "em", &[]);
    assert_eq!(o.status.code(), Some(3));
}

const SMALL: &str = r#"
models = ["dina", "crum", "lcdm"]
methods = ["ml", "np"]
n = [20, 40]
j = [20]
k = [4]
discrimination = ["high"]
qmis = [0.0, 0.1]
replications = 4
master_seed = 11
"#;

#[test]
fn study_dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = tmp.path().join("out");
    let o = dcm(&["study", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dry-run"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(s.lines().filter(|l| l.contains("N=")).count(), 12);
    assert!(s.contains("12 cells, 20 result rows"));
    assert!(stderr(&o).contains("skipped for lcdm"));
    assert!(!out.exists());
}

#[test]
fn study_default_design_layout() {
    let o = dcm(&["study", "--dry-run"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("360 cells, 1008 result rows"));
}

#[test]
fn study_is_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.toml");
    fs::write(&cfg, SMALL).unwrap();
    let mut csvs = Vec::new();
    for p in ["1", "4"] {
        let out = tmp.path().join(format!("out{p}"));
        let o = dcm(&["study", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--parallel", p, "-q"]);
        assert!(o.status.success(), "{}", stderr(&o));
        csvs.push((fs::read(out.join("results.csv")).unwrap(), fs::read(out.join("manifest.json")).unwrap()));
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn study_config_errors_listed_line_by_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "models = [\"dinx\"]\nk = [7]\nj = [30]\n").unwrap();
    let o = dcm(&["study", "--config", cfg.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr(&o);
    for needle in ["dinx", "k: 7", "j: 30"] {
        assert!(e.lines().any(|l| l.contains(needle)), "{needle} missing from {e}");
    }
}

fn small_study(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("s.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.join("out");
    let o = dcm(&["study", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "-q"]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("results.csv")
}

#[test]
fn summarize_by_qmis_and_grand_means() {
    let tmp = tempfile::tempdir().unwrap();
    let results = small_study(tmp.path());
    let r = results.to_str().unwrap();
    let table = tmp.path().join("t.csv");
    let o = dcm(&["summarize", r, "--by", "qmis", "--filter", "disc=high", "--filter", "j=20", "--csv", table.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().contains("qmis_rate=0.10 pacr"));
    // ml x 3 models + np x 2 models
    assert_eq!(text.lines().count(), 6);
    let csv_text = fs::read_to_string(&table).unwrap();
    assert_eq!(csv_text.lines().count(), 6);
    assert!(csv_text.lines().nth(1).unwrap().starts_with("ml,dina,"));

    // no filter, no grouping: one grand mean per model x method, checked by hand
    let o = dcm(&["summarize", r]);
    assert!(o.status.success());
    let rows: Vec<Vec<String>> = {
        let mut rdr = csv::Reader::from_path(&results).unwrap();
        rdr.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
    };
    let dina_ml: Vec<f64> =
        rows.iter().filter(|x| x[0] == "dina" && x[1] == "ml").map(|x| x[7].parse().unwrap()).collect();
    let mean = dina_ml.iter().sum::<f64>() / dina_ml.len() as f64;
    let line = stdout(&o).lines().find(|l| l.starts_with("ml") && l.contains("dina")).unwrap().to_string();
    let shown: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((shown - mean).abs() < 6e-4, "{shown} vs {mean}");
}

#[test]
fn summarize_bias_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let results = small_study(tmp.path());
    let o = dcm(&["summarize", results.to_str().unwrap(), "--by", "n,j", "--measures", "bias_slip,rmse_slip"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let header = text.lines().next().unwrap();
    assert!(header.contains("N=20 J=20 bias_slip") && header.contains("N=40 J=20 rmse_slip"), "{header}");
    let np = text.lines().find(|l| l.starts_with("np")).unwrap();
    assert!(np.contains("NA"));
}

#[test]
fn summarize_unknown_factor_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let results = small_study(tmp.path());
    let o = dcm(&["summarize", results.to_str().unwrap(), "--by", "colour"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dcm(&["summarize", results.to_str().unwrap(), "--measures", "auc"]);
    assert_eq!(o.status.code(), Some(2));
}
