//! Regime-quality metrics.

/// Fraction of subjects whose assigned action differs from the optimum.
pub fn error_rate(actions: &[u8], oracle: &[u8]) -> f64 {
    assert_eq!(actions.len(), oracle.len(), "action and oracle lengths differ");
    if actions.is_empty() {
        return 0.0;
    }
    let wrong = actions.iter().zip(oracle).filter(|(a, o)| a != o).count();
    wrong as f64 / actions.len() as f64
}

/// Fraction of subjects with a wrong action at any stage.
pub fn total_error_rate(stages: &[(&[u8], &[u8])]) -> f64 {
    let n = stages.first().map_or(0, |s| s.0.len());
    if n == 0 {
        return 0.0;
    }
    let wrong = (0..n).filter(|&i| stages.iter().any(|(a, o)| a[i] != o[i])).count();
    wrong as f64 / n as f64
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
