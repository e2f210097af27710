use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pdwols_sim::generate::{gen_one_stage, gen_two_stage_s1};
use serde_json::Value;
use tempfile::TempDir;

fn pdwols(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdwols")).args(args).env_remove("PDWOLS_JOBS").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = pdwols(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn code(args: &[&str]) -> i32 {
    pdwols(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_stage(path: &Path, h: &pdwols::StageHistory<f64>, y: Option<&[f64]>) {
    let mut w = csv::Writer::from_path(path).unwrap();
    let mut header = vec!["id".to_string(), "a".to_string()];
    if y.is_some() {
        header.push("y".into());
    }
    header.extend(h.names().iter().cloned());
    w.write_record(&header).unwrap();
    for i in 0..h.nrows() {
        let mut rec = vec![format!("p{i}"), h.a()[i].to_string()];
        if let Some(y) = y {
            rec.push(y[i].to_string());
        }
        rec.extend(h.x().row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).unwrap();
    }
    w.flush().unwrap();
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn one_stage(&self, n: usize, seed: u64) -> PathBuf {
        let s = gen_one_stage(n, seed);
        let p = self.path("stage.csv");
        write_stage(&p, &s.history, Some(&s.y));
        p
    }

    fn file(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn model(&self) -> PathBuf {
        self.file("model.toml", "treatment_free = [\"exp(x1)\", \"*\"]\nblip = [\"exp(x1)\", \"*\"]\npropensity = [\"x1\", \"x2\"]\n")
    }
}

fn coefficients(path: &Path) -> Vec<(String, String, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| {
        let rec = rec.unwrap();
        (rec[0].to_string(), rec[1].to_string(), rec[2].parse().unwrap())
    }).collect()
}

#[test]
fn huge_lambda_zeroes_every_penalized_coefficient() {
    let f = Fixture::new();
    let (data, model, out) = (f.one_stage(200, 1), f.model(), f.path("out"));
    ok(&["fit", "--data", s(&data), "--model", s(&model), "--lambda", "1e9", "--out", s(&out)]);
    for (term, kind, v) in coefficients(&out.join("coefficients.csv")) {
        if kind == "main" || kind == "interaction" {
            assert_eq!(v, 0.0, "{term}");
        }
    }
    let lambda: Value = serde_json::from_str(&fs::read_to_string(out.join("lambda.json")).unwrap()).unwrap();
    assert_eq!(lambda["tuning"], "fixed");
}

#[test]
fn cross_validated_refit_finds_the_tailoring_variable() {
    let f = Fixture::new();
    let (data, model, out) = (f.one_stage(500, 3), f.model(), f.path("out"));
    ok(&["fit", "--data", s(&data), "--model", s(&model), "--cv", "--alpha", "0.5", "--refit", "--out", s(&out)]);
    let coefs = coefficients(&out.join("refitted_coefficients.csv"));
    let ax1 = coefs.iter().find(|c| c.0 == "A*x1").unwrap().2;
    assert!((ax1 + 1.5).abs() < 0.5, "A*x1 = {ax1}");
    let noise = coefs.iter().filter(|c| c.1 == "interaction" && c.0 != "A*x1" && c.0 != "A*exp(x1)" && c.2 != 0.0).count();
    assert!(noise <= 2);
    let fit: Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["mode"], "heredity");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 5);
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 2);
}

#[test]
fn q_learning_pipeline_runs_with_unit_weights() {
    let f = Fixture::new();
    let (data, model, out) = (f.one_stage(200, 4), f.model(), f.path("out"));
    ok(&["fit", "--data", s(&data), "--model", s(&model), "--mode", "qlasso", "--weights", "ones", "--out", s(&out)]);
    let stage: Value = serde_json::from_str(&fs::read_to_string(out.join("stage_fit.json")).unwrap()).unwrap();
    assert_eq!(stage["fit"]["mode"], "plain");
    let w = stage["weights"]["w"].as_array().unwrap();
    assert!(w.iter().all(|v| v.as_f64() == Some(1.0)));
}

#[test]
fn replay_reproduces_outputs_and_detects_changed_inputs() {
    let f = Fixture::new();
    let (data, model, out) = (f.one_stage(150, 5), f.model(), f.path("out"));
    ok(&["fit", "--data", s(&data), "--model", s(&model), "--refit", "--n-lambda", "30", "--out", s(&out)]);
    let again = f.path("again");
    let o = ok(&["replay", "--manifest", s(&out.join("manifest.json")), "--out", s(&again)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("reproduced 5 outputs"));
    for name in ["fit.json", "coefficients.csv", "refitted_coefficients.csv", "stage_fit.json", "lambda.json"] {
        assert_eq!(fs::read(out.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
    fs::write(&data, "id,a,y,x1\n1,0,1,1\n").unwrap();
    assert_eq!(code(&["replay", "--manifest", s(&out.join("manifest.json")), "--out", s(&f.path("third"))]), 4);
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let f = Fixture::new();
    let model = f.model();
    let out = f.path("out");
    let bad = f.file("bad.csv", "a,y,x1,x2\n1,0.5,oops,1\n0,1,2,3\n");
    assert_eq!(code(&["fit", "--data", s(&bad), "--model", s(&model), "--out", s(&out)]), 2);

    let data = f.one_stage(100, 6);
    let unknown = f.file("m2.toml", "treatment_free = [\"x1\"]\nblip = [\"z9\"]\n");
    assert_eq!(code(&["fit", "--data", s(&data), "--model", s(&unknown), "--out", s(&out)]), 4);
    assert_eq!(code(&["fit", "--data", s(&data), "--model", s(&model), "--alpha", "1.5", "--out", s(&out)]), 4);
    let typo = f.file("m3.toml", "treatment_free = [\"x1\"]\nblips = [\"x1\"]\n");
    let o = pdwols(&["fit", "--data", s(&data), "--model", s(&typo), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("blips"));

    let constant = f.file("const.csv", "a,y,x1\n1,0.5,1\n1,1,2\n1,2,3\n1,0,4\n");
    let m1 = f.file("m1.toml", "treatment_free = [\"x1\"]\nblip = [\"x1\"]\n");
    assert_eq!(code(&["fit", "--data", s(&constant), "--model", s(&m1), "--lambda", "0.1", "--out", s(&out)]), 3);
    assert_eq!(code(&["fit", "--data", s(&data), "--model", s(&model), "--bogus-flag"]), 2);
}

#[test]
fn single_stage_dtr_matches_fit() {
    let f = Fixture::new();
    let (data, model) = (f.one_stage(200, 7), f.model());
    let (a, b) = (f.path("fit"), f.path("dtr"));
    ok(&["fit", "--data", s(&data), "--model", s(&model), "--refit", "--out", s(&a)]);
    ok(&["dtr", "--data", s(&data), "--model", s(&model), "--refit", "--out", s(&b)]);
    assert_eq!(fs::read(a.join("coefficients.csv")).unwrap(), fs::read(b.join("stage1_coefficients.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("refitted_coefficients.csv")).unwrap(),
        fs::read(b.join("stage1_refitted_coefficients.csv")).unwrap()
    );
    let mut r = csv::Reader::from_path(b.join("decisions.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["id", "stage", "a", "recommended", "contrast"]);
    assert_eq!(r.records().count(), 200);
}

#[test]
fn two_stage_regime_and_decide() {
    let f = Fixture::new();
    let s2 = gen_two_stage_s1(400, 8);
    let (p1, p2) = (f.path("s1.csv"), f.path("s2.csv"));
    write_stage(&p1, s2.trial.stage(0), None);
    write_stage(&p2, s2.trial.stage(1), Some(s2.trial.outcome()));
    let model = f.file("model.toml", "treatment_free = [\"*\"]\nblip = [\"*\"]\npropensity = [\"*\"]\n");
    let out = f.path("out");
    ok(&["dtr", "--data", s(&p1), s(&p2), "--model", s(&model), "--refit", "--out", s(&out)]);
    let regime: Value = serde_json::from_str(&fs::read_to_string(out.join("regime.json")).unwrap()).unwrap();
    let stages = regime["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 2);
    let x1 = stages[0]["terms"].as_array().unwrap().iter().position(|t| t == "x1").unwrap();
    assert!(stages[0]["psi"][x1].as_f64().unwrap() < -1.0);

    let newp = f.file("new.csv", "id,x1,x2,x3,x4,x5,x6,x7,x8,x9,x10\nq1,-2,0,0,0,0,0,0,0,0,0\nq2,2,0,0,0,0,0,0,0,0,0\n");
    let dec = f.path("dec");
    ok(&["decide", "--regime", s(&out.join("regime.json")), "--data", s(&newp), "--out", s(&dec)]);
    let body = fs::read_to_string(dec.join("decisions.csv")).unwrap();
    let rows: Vec<&str> = body.lines().skip(1).collect();
    assert!(rows[0].starts_with("q1,1,"));
    assert!(rows[1].starts_with("q2,0,"));
    assert_eq!(code(&["decide", "--regime", s(&out.join("regime.json")), "--data", s(&newp), "--stage", "3", "--out", s(&dec)]), 4);
}

#[test]
fn intercept_only_regime_gives_a_constant_recommendation() {
    let f = Fixture::new();
    let regime = f.file("regime.json", r#"{"stages":[{"psi0":0.7,"terms":[],"psi":[]}],"estimator":null}"#);
    let data = f.file("new.csv", "x1\n-3\n0\n4\n");
    let out = f.path("out");
    ok(&["decide", "--regime", s(&regime), "--data", s(&data), "--out", s(&out)]);
    let body = fs::read_to_string(out.join("decisions.csv")).unwrap();
    let rec: Vec<&str> = body.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(rec, vec!["1", "1", "1"]);
}

#[test]
fn cv_curve_lists_the_grid() {
    let f = Fixture::new();
    let (data, model, out) = (f.one_stage(200, 9), f.model(), f.path("out"));
    ok(&["cv-curve", "--data", s(&data), "--model", s(&model), "--n-lambda", "25", "--out", s(&out)]);
    let mut r = csv::Reader::from_path(out.join("cv_curve.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 25);
    assert_eq!(rows.iter().filter(|r| &r[3] == "true").count(), 1);
    assert_eq!(code(&["cv-curve", "--data", s(&data), "--model", s(&model), "--lambda", "0.1", "--out", s(&out)]), 4);
}

#[test]
fn simulation_output_does_not_depend_on_job_count() {
    let f = Fixture::new();
    let cfg = f.file("sim.toml", "generator = \"one_stage\"\nscenario = 4\nn = 80\nreps = 4\nn_test = 500\nn_lambda = 20\n");
    let (a, b) = (f.path("a"), f.path("b"));
    ok(&["simulate", "-c", s(&cfg), "--jobs", "1", "--out", s(&a)]);
    ok(&["simulate", "-c", s(&cfg), "--jobs", "4", "--out", s(&b)]);
    for name in ["report.json", "replicates.csv", "selection.csv", "blip_estimates.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let bad = f.file("bad.toml", "generator = \"one_stage\"\nn = 80\nreps = 4\n");
    assert_eq!(code(&["simulate", "-c", s(&bad), "--out", s(&a)]), 4);
}
