use pdwols_sim::generate::*;
use pdwols_sim::*;
use statrs::statistics::Statistics;

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (a.mean(), b.mean());
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn ar1_covariates_have_geometric_correlation() {
    let x = ar1_covariates(100_000, 4, AR_RHO, &mut rng_for(1, 0));
    assert!((corr(x.col(0), x.col(1)) - 0.25).abs() < 0.01);
    assert!((corr(x.col(0), x.col(2)) - 0.0625).abs() < 0.01);
    assert!((x.col(3).variance() - 1.0).abs() < 0.02);
}

#[test]
fn confounded_assignment_follows_the_logistic_model() {
    let s = gen_one_stage(100_000, 3);
    let (x1, x2) = (s.history.column("x1").unwrap(), s.history.column("x2").unwrap());
    let a = s.history.a();
    let near: Vec<usize> = (0..a.len()).filter(|&i| x1[i].abs() < 0.1 && x2[i].abs() < 0.1).collect();
    assert!(near.len() > 500);
    let m = near.len() as f64;
    let observed = near.iter().map(|&i| f64::from(a[i])).sum::<f64>() / m;
    let expected = near.iter().map(|&i| expit(1.0 + x1[i] + x2[i])).sum::<f64>() / m;
    assert!((observed - expected).abs() < 4.0 * (expected * (1.0 - expected) / m).sqrt());
    let expected: f64 = (0..a.len()).map(|i| expit(1.0 + x1[i] + x2[i])).sum::<f64>() / a.len() as f64;
    let observed = a.iter().map(|&v| f64::from(v)).sum::<f64>() / a.len() as f64;
    assert!((observed - expected).abs() < 0.01);
}

#[test]
fn high_dim_assignment_is_balanced() {
    let s = gen_high_dim(20_000, 5, 8);
    let freq = s.history.a().iter().map(|&v| f64::from(v)).sum::<f64>() / 20_000.0;
    assert!((freq - 0.5).abs() < 0.015);
}

#[test]
fn one_stage_oracle_is_the_contrast_sign() {
    let s = gen_one_stage(500, 4);
    let x1 = s.history.column("x1").unwrap();
    for (i, &o) in s.oracle.iter().enumerate() {
        assert_eq!(o, u8::from(1.0 - 1.5 * x1[i] > 0.0));
    }
}

#[test]
fn stage_two_tailoring_covariate_shifts_with_stage_one_action() {
    let s = gen_two_stage_s1(100_000, 5);
    let (h1, h2) = (s.trial.stage(0), s.trial.stage(1));
    let x11 = h1.column("x1").unwrap();
    let x12 = h2.column("x1").unwrap();
    let resid = |treated: u8| {
        let v: Vec<f64> = (0..x11.len()).filter(|&i| h1.a()[i] == treated).map(|i| x12[i] - 0.8 * x11[i]).collect();
        v.as_slice().mean()
    };
    assert!((resid(1) - 0.5).abs() < 0.02);
    assert!(resid(0).abs() < 0.02);
}

#[test]
fn oracle_rollout_attains_the_optimal_value() {
    let t = TwoStageTest::new(200_000, &mut rng_for(6, 1));
    let oracle = |k: usize, h: &pdwols::StageHistory<f64>| -> Result<Vec<u8>, ()> {
        let x = h.column("x1").unwrap();
        Ok(x.iter().map(|&v| u8::from(if k == 0 { stage1_contrast(v) } else { stage2_contrast(v) } > 0.0)).collect())
    };
    let r = t.rollout(oracle).unwrap();
    assert_eq!(r.a1, r.oracle1);
    assert_eq!(r.a2, r.oracle2);
    assert!((r.y.as_slice().mean() - 0.5).abs() < 0.03);
    let never = t.rollout(|_, h| Ok::<_, ()>(vec![0; h.nrows()])).unwrap();
    assert!(never.y.as_slice().mean() < r.y.as_slice().mean());
}

#[test]
fn test_outcomes_share_noise_across_regimes() {
    let t = OneStageTest::new(1000, 10, &mut rng_for(2, 1));
    let zeros = t.outcomes(&vec![0; 1000]);
    let best = t.outcomes(&t.oracle);
    for i in 0..1000 {
        assert!(best[i] >= zeros[i]);
    }
}

#[test]
fn generators_are_deterministic() {
    let a = gen_two_stage_s1(50, 9);
    let b = gen_two_stage_s1(50, 9);
    assert_eq!(a.trial.outcome(), b.trial.outcome());
    assert_eq!(gen_one_stage(40, 1).y, gen_one_stage(40, 1).y);
    assert_ne!(gen_one_stage(40, 1).y, gen_one_stage(40, 2).y);
}

fn small() -> ScenarioConfig {
    ScenarioConfig { n_test: 500, n_lambda: 20, ..ScenarioConfig::one_stage(4, 80, 4) }
}

#[test]
fn experiments_do_not_depend_on_thread_count() {
    let cfg = small();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_experiment(&cfg).unwrap());
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| run_experiment(&cfg).unwrap());
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&four).unwrap());
    assert_eq!(one.methods.len(), 4);
}

#[test]
fn report_files_are_written() {
    let report = run_experiment(&ScenarioConfig { reps: 2, ..small() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_report(&report, dir.path()).unwrap();
    assert_eq!(files.len(), 4);
    let back: MetricsReport = serde_json::from_reader(std::fs::File::open(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back.methods, report.methods);
    let blips = std::fs::read_to_string(dir.path().join("blip_estimates.csv")).unwrap();
    assert!(blips.lines().count() > 1);
}

#[test]
fn config_parses_with_defaults() {
    let c = ScenarioConfig::from_toml_str("generator = \"one_stage\"\nscenario = 2\nn = 500\nreps = 100\n").unwrap();
    assert_eq!(c, ScenarioConfig::one_stage(2, 500, 100));
    let j = serde_json::to_string(&c).unwrap();
    assert_eq!(ScenarioConfig::from_json_str(&j).unwrap(), c);
}

#[test]
fn config_rejects_bad_input() {
    assert!(ScenarioConfig::from_toml_str("generator = \"one_stage\"\nn = 500\nreps = 1\n").is_err());
    assert!(ScenarioConfig::from_toml_str("generator = \"high_dim\"\nn = 200\nreps = 1\nbogus = 3\n").is_err());
    assert!(ScenarioConfig::from_toml_str("generator = \"two_stage_s1\"\nn = 6\nreps = 1\n").is_err());
    assert!(ScenarioConfig::from_toml_str("generator = \"two_stage_s1\"\nn = 100\nreps = 1\nalpha = 1.5\n").is_err());
    assert!(ScenarioConfig::from_toml_str("generator = \"one_stage\"\nscenario = 7\nn = 100\nreps = 1\n").is_err());
}
