mod support;

use pdwols::{
    backward_fit, backward_fit_pair, fit_stage, optimal_action, pseudo_outcome, regret, BlipModel, Columns,
    EstimatorConfig, Method, StageHistory, Term, Trial, Tuning,
};
use proptest::prelude::*;
use support::*;

fn fixed(method: Method, lambda: f64) -> EstimatorConfig<f64> {
    EstimatorConfig { tuning: Tuning::Fixed { lambda }, ..EstimatorConfig::new(method) }
}

fn two_stage_trial(seed: u64, n: usize) -> Trial<f64> {
    let (h1, _, _) = random_instance(seed, n, 3);
    let (h2, y, _) = random_instance(seed + 1, n, 3);
    Trial::new(vec![h1, h2], y).unwrap()
}

proptest! {
    #[test]
    fn regret_is_nonnegative_and_vanishes_at_the_rule(
        psi0 in -3.0f64..3.0, psi1 in -3.0f64..3.0, x in -5.0f64..5.0, a in 0u8..2,
    ) {
        let m = BlipModel::new(psi0, vec![Term::column("x1")], vec![psi1]).unwrap();
        let row = [("x1", x)];
        prop_assert!(regret(&m, &row, a).unwrap() >= 0.0);
        let opt = optimal_action(&m, &row).unwrap();
        prop_assert_eq!(regret(&m, &row, opt).unwrap(), 0.0);
        let c = psi0 + psi1 * x;
        prop_assert_eq!(opt, u8::from(c > 0.0));
        prop_assert!((regret(&m, &row, 1 - opt).unwrap() - c.abs()).abs() < 1e-12);
    }

    #[test]
    fn pseudo_outcome_dominates_observed(seed in any::<u64>(), psi0 in -2.0f64..2.0, psi1 in -2.0f64..2.0) {
        let (h, y, _) = random_instance(seed, 25, 2);
        let m = BlipModel::new(psi0, vec![Term::column("x1")], vec![psi1]).unwrap();
        let po = pseudo_outcome(&y, &m, &h, 1).unwrap();
        for (i, (&v, &yy)) in po.values.iter().zip(&y).enumerate() {
            prop_assert!(v >= yy);
            let followed = h.a()[i] == optimal_action(&m, &[("x1", h.column("x1").unwrap()[i])]).unwrap();
            if followed {
                prop_assert_eq!(v, yy);
            }
        }
    }
}

#[test]
fn single_stage_recursion_is_fit_stage() {
    for method in [Method::Pdwols, Method::Qlasso] {
        let (h, y, _) = random_instance(9, 60, 3);
        let spec = symmetric_spec(3);
        let cfg = EstimatorConfig::new(method).with_refit(true).with_seed(4);
        let direct = fit_stage(&h, &y, &spec, &cfg).unwrap();
        let trial = Trial::new(vec![h], y).unwrap();
        let bf = backward_fit(&trial, &[spec], &[cfg]).unwrap();
        assert_eq!(bf.stages.len(), 1);
        assert_eq!(bf.stages[0], direct);
        assert_eq!(bf.regime.stages[0], direct.blip(true));
    }
}

#[test]
fn paired_chains_match_separate_runs() {
    let trial = two_stage_trial(31, 80);
    let specs = vec![symmetric_spec(3), symmetric_spec(3)];
    let cfg = fixed(Method::Pdwols, 0.05);
    let (pen, re) = backward_fit_pair(&trial, &specs, &cfg).unwrap();
    let pen_alone = backward_fit(&trial, &specs, &[cfg.clone().with_refit(false)]).unwrap();
    let re_alone = backward_fit(&trial, &specs, &[cfg.clone().with_refit(true)]).unwrap();
    assert_eq!(pen, pen_alone);
    assert_eq!(re, re_alone);
    assert_eq!(pen.stages[1].coefficients, re.stages[1].coefficients);
    assert!(re.stages.iter().all(|s| s.refitted.is_some()));
    assert!(pen.stages.iter().all(|s| s.refitted.is_none()));
}

#[test]
fn stage_one_sees_the_regret_adjusted_outcome() {
    let trial = two_stage_trial(40, 80);
    let specs = vec![symmetric_spec(3), symmetric_spec(3)];
    let cfg = fixed(Method::Pdwols, 0.05);
    let bf = backward_fit(&trial, &specs, std::slice::from_ref(&cfg)).unwrap();
    let po = pseudo_outcome(trial.outcome(), &bf.regime.stages[1], trial.stage(1), 1).unwrap();
    let s1 = fit_stage(trial.stage(0), &po.values, &specs[0], &cfg).unwrap();
    assert_eq!(bf.stages[0], s1);
}

#[test]
fn regime_decisions_follow_the_contrast() {
    let x = Columns::from_columns(3, vec![vec![0.0, 1.0, 2.0]]).unwrap();
    let h = StageHistory::new(vec![0, 0, 1], x, vec!["x1".into()]).unwrap();
    let r = pdwols::Regime::new(vec![BlipModel::new(1.0, vec![Term::column("x1")], vec![-1.0]).unwrap()]).unwrap();
    assert_eq!(r.decide(0, &h).unwrap(), vec![1, 0, 0]);
}

#[test]
fn config_count_must_match_stages() {
    let trial = two_stage_trial(2, 40);
    let specs = vec![symmetric_spec(3), symmetric_spec(3)];
    let cfg = fixed(Method::Pdwols, 0.05);
    assert!(backward_fit(&trial, &specs, &[cfg.clone(), cfg.clone(), cfg]).is_err());
}
