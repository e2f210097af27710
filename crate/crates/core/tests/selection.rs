mod support;

use pdwols::{
    build_design, fit_lambdas, kfold_cv, kfold_cv_with_folds, refit, CenteringMode, Columns, CvOptions,
    FactorSource, Mode, PenaltyFactors, Problem, SelectionRule, StageHistory, Support,
};
use support::*;

fn cv_opts() -> CvOptions<f64> {
    CvOptions { n_lambda: 15, ..CvOptions::default() }
}

#[test]
fn leave_one_out_matches_direct_loop() {
    let (h, y, w) = random_instance(7, 24, 3);
    let raw = build_design(&h, &symmetric_spec(3)).unwrap();
    let full = Problem::prepare(&raw, &y, &w, CenteringMode::WeightedMean, true).unwrap();
    let factors = PenaltyFactors::for_blocks(full.blocks(), false);
    let folds: Vec<usize> = (0..24).collect();
    let opts = cv_opts();
    let cv = kfold_cv_with_folds(&raw, &y, &w, 0.5, &FactorSource::Fixed(factors.clone()), Mode::Heredity, &folds, &opts)
        .unwrap();

    let mut errs = vec![vec![0.0; cv.lambdas.len()]; 24];
    for i in 0..24 {
        let keep: Vec<usize> = (0..24).filter(|&r| r != i).collect();
        let pick = |v: &[f64]| keep.iter().map(|&r| v[r]).collect::<Vec<_>>();
        let p = Problem::prepare(&raw.select_rows(&keep), &pick(&y), &pick(&w), CenteringMode::WeightedMean, true)
            .unwrap();
        let fits = fit_lambdas(&p, &cv.lambdas, 0.5, &factors, Mode::Heredity, &opts.solver).unwrap();
        let held = raw.select_rows(&[i]);
        for (l, f) in fits.iter().enumerate() {
            let pred = f.original(&p).predict(&held)[0];
            errs[i][l] = (y[i] - pred).powi(2);
        }
    }
    for l in 0..cv.lambdas.len() {
        let mean = errs.iter().map(|e| e[l]).sum::<f64>() / 24.0;
        let var = errs.iter().map(|e| (e[l] - mean).powi(2)).sum::<f64>() / 23.0;
        assert!((cv.cv_mean[l] - mean).abs() < 1e-10, "λ #{l}: {} vs {mean}", cv.cv_mean[l]);
        assert!((cv.cv_se[l] - (var / 24.0).sqrt()).abs() < 1e-10);
    }
    let best = (0..cv.lambdas.len()).min_by(|&a, &b| cv.cv_mean[a].total_cmp(&cv.cv_mean[b])).unwrap();
    assert_eq!(cv.lambda_min, cv.lambdas[best]);
}

#[test]
fn duplicated_data_selects_the_same_lambda() {
    let (h, y, w) = random_instance(21, 40, 4);
    let spec = symmetric_spec(4);
    let raw = build_design(&h, &spec).unwrap();
    let full = Problem::prepare(&raw, &y, &w, CenteringMode::WeightedMean, true).unwrap();
    let fs = FactorSource::Fixed(PenaltyFactors::for_blocks(full.blocks(), false));
    let opts = cv_opts();
    let cv = kfold_cv(&raw, &y, &w, 0.5, &fs, Mode::Heredity, &opts).unwrap();

    let rows: Vec<usize> = (0..40).chain(0..40).collect();
    let raw2 = raw.select_rows(&rows);
    let y2: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let w2: Vec<f64> = rows.iter().map(|&i| w[i]).collect();
    let folds2: Vec<usize> = rows.iter().map(|&i| cv.fold_assignments[i]).collect();
    let cv2 = kfold_cv_with_folds(&raw2, &y2, &w2, 0.5, &fs, Mode::Heredity, &folds2, &opts).unwrap();
    assert!((cv.lambda_max - cv2.lambda_max).abs() < 1e-10 * cv.lambda_max);
    assert_eq!(cv.selected, cv2.selected);
    assert!((cv.lambda_min - cv2.lambda_min).abs() < 1e-10 * cv.lambda_min);
}

#[test]
fn one_se_rule_never_picks_a_smaller_lambda() {
    for seed in 0..5 {
        let (h, y, w) = random_instance(seed, 40, 3);
        let raw = build_design(&h, &symmetric_spec(3)).unwrap();
        let full = Problem::prepare(&raw, &y, &w, CenteringMode::WeightedMean, true).unwrap();
        let fs = FactorSource::Fixed(PenaltyFactors::for_blocks(full.blocks(), false));
        let opts = CvOptions { rule: SelectionRule::OneSe, ..cv_opts() };
        let cv = kfold_cv(&raw, &y, &w, 0.5, &fs, Mode::Heredity, &opts).unwrap();
        assert!(cv.lambda_1se >= cv.lambda_min);
        assert_eq!(cv.lambda_selected(), cv.lambda_1se);
    }
}

#[test]
fn full_support_refit_is_weighted_least_squares() {
    let (h, y, w) = random_instance(5, 50, 3);
    let raw = build_design(&h, &symmetric_spec(3)).unwrap();
    let c = refit(&raw, &y, &w, &Support::all(3, 3)).unwrap();
    let mut cols = vec![vec![1.0; 50], raw.treatment().to_vec()];
    cols.extend(raw.main().iter_cols().map(|v| v.to_vec()));
    cols.extend(raw.interactions().iter_cols().map(|v| v.to_vec()));
    let theta = weighted_normal_equations(&cols, &y, &w);
    let mine: Vec<f64> =
        [c.intercept, c.psi0].into_iter().chain(c.beta.iter().copied()).chain(c.psi.iter().copied()).collect();
    for (a, b) in mine.iter().zip(&theta) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn refit_has_no_larger_weighted_sse_than_penalized_fit() {
    for seed in 0..20 {
        let (h, y, w) = random_instance(100 + seed, 40, 4);
        let raw = build_design(&h, &symmetric_spec(4)).unwrap();
        let p = Problem::prepare(&raw, &y, &w, CenteringMode::WeightedMean, true).unwrap();
        let factors = PenaltyFactors::for_blocks(p.blocks(), false);
        let lm = pdwols::lambda_max(&p, 0.5, &factors, Mode::Heredity, pdwols::Screening::Weighted).unwrap();
        let fit = fit_lambdas(&p, &[0.3 * lm], 0.5, &factors, Mode::Heredity, &Default::default()).unwrap().remove(0);
        let pen = fit.original(&p);
        let re = refit(&raw, &y, &w, &Support::from_fit(&fit)).unwrap();
        let sse = |c: &pdwols::Coefficients<f64>| {
            c.predict(&raw).iter().zip(&y).zip(&w).map(|((p, y), w)| w * (y - p).powi(2)).sum::<f64>()
        };
        assert!(sse(&re) <= sse(&pen) + 1e-9);
        for (s, v) in Support::from_fit(&fit).main.iter().zip(&re.beta) {
            if !s {
                assert_eq!(*v, 0.0);
            }
        }
    }
}

#[test]
fn refit_drops_collinear_columns() {
    let n = 30;
    let x1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
    let x2: Vec<f64> = x1.iter().map(|v| 3.0 * v).collect();
    let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y: Vec<f64> = (0..n).map(|i| x1[i] + 0.5 * f64::from(a[i]) + 0.01 * i as f64).collect();
    let h = StageHistory::new(a, Columns::from_columns(n, vec![x1, x2]).unwrap(), vec!["x1".into(), "x2".into()])
        .unwrap();
    let raw = build_design(&h, &symmetric_spec(2)).unwrap();
    let c = refit(&raw, &y, &vec![1.0; n], &Support::all(2, 2)).unwrap();
    assert_eq!(c.beta[1], 0.0);
    assert_eq!(c.psi[1], 0.0);
    assert!(c.psi0.is_finite());
}
