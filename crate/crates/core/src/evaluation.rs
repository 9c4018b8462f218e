//! Classification metrics and paired significance testing.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Unweighted mean of per-class F1 over `0..n_classes`. A class that is
/// neither present nor predicted contributes 0.
pub fn f1_macro(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Metric(format!(
            "{} labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Metric("no samples".into()));
    }
    if n_classes == 0 {
        return Err(Error::Metric("n_classes must be positive".into()));
    }
    if let Some(bad) = y_true.iter().chain(y_pred).find(|&&c| c >= n_classes) {
        return Err(Error::Metric(format!("class {bad} outside [0, {n_classes})")));
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let sum: f64 = (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(sum / n_classes as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// Rows where the first classifier is right and the second wrong.
    pub b: usize,
    /// Rows where the first classifier is wrong and the second right.
    pub c: usize,
    pub chi2: f64,
    pub p_value: f64,
    pub significant: bool,
}

impl McNemarResult {
    /// Yates-corrected statistic from discordant counts.
    pub fn from_counts(b: usize, c: usize) -> Self {
        if b + c == 0 {
            return Self {
                b,
                c,
                chi2: 0.0,
                p_value: 1.0,
                significant: false,
            };
        }
        let diff = (b as f64 - c as f64).abs() - 1.0;
        let chi2 = diff.max(0.0).powi(2) / (b + c) as f64;
        let p_value = chi2_sf_1df(chi2);
        Self {
            b,
            c,
            chi2,
            p_value,
            significant: p_value < SIGNIFICANCE_LEVEL,
        }
    }
}

/// Survival function of the chi-squared distribution with one degree of
/// freedom: `P(X > x) = erfc(sqrt(x / 2))`.
pub fn chi2_sf_1df(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    erfc((x / 2.0).sqrt()).clamp(0.0, 1.0)
}

pub fn mcnemar_yates(y_true: &[usize], pred_a: &[usize], pred_b: &[usize]) -> Result<McNemarResult> {
    if y_true.len() != pred_a.len() || y_true.len() != pred_b.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} labels, {} and {} predictions",
            y_true.len(),
            pred_a.len(),
            pred_b.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Metric("no samples".into()));
    }
    let (mut b, mut c) = (0, 0);
    for ((&t, &a), &p) in y_true.iter().zip(pred_a).zip(pred_b) {
        match (a == t, p == t) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(McNemarResult::from_counts(b, c))
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Metric("accuracy needs equal, non-empty inputs".into()));
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// P(X > x) for chi-squared(1) as 1 − 2·Φ₀(√x), where Φ₀ is the
    /// integral of the standard normal density from 0, by composite Simpson.
    fn sf_quadrature(x: f64) -> f64 {
        let z = x.sqrt();
        let n = 20_000;
        let h = z / n as f64;
        let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = phi(0.0) + phi(z);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * phi(i as f64 * h);
        }
        1.0 - 2.0 * s * h / 3.0
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_macro(&[0, 1, 0, 1], &[0, 1, 0, 1], 2).unwrap(), 1.0);
        assert_eq!(f1_macro(&[0, 0, 1, 1], &[1, 1, 0, 0], 2).unwrap(), 0.0);
        // class 0: tp 1 fp 0 fn 1 -> 2/3; class 1: tp 2 fp 1 fn 0 -> 4/5
        let f = f1_macro(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((f - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        // class 2 never seen nor predicted
        assert_eq!(f1_macro(&[0, 1], &[0, 1], 3).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn f1_errors() {
        assert!(f1_macro(&[0], &[0, 1], 2).is_err());
        assert!(f1_macro(&[], &[], 2).is_err());
        assert!(f1_macro(&[0, 2], &[0, 1], 2).is_err());
    }

    #[test]
    fn mcnemar_examples() {
        let r = McNemarResult::from_counts(30, 10);
        assert_eq!(r.chi2, 361.0 / 40.0);
        assert!((r.p_value - sf_quadrature(9.025)).abs() < 1e-7);
        assert!(r.significant);
        let r = McNemarResult::from_counts(5, 5);
        assert_eq!(r.chi2, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = McNemarResult::from_counts(0, 0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
        let r = McNemarResult::from_counts(1, 0);
        assert_eq!(r.chi2, 0.0);
    }

    #[test]
    fn mcnemar_counts_from_predictions() {
        let y = [0, 0, 1, 1, 0];
        let a = [0, 0, 1, 0, 1];
        let b = [0, 1, 0, 1, 1];
        let r = mcnemar_yates(&y, &a, &b).unwrap();
        assert_eq!((r.b, r.c), (2, 1));
        assert!(mcnemar_yates(&y, &a, &b[..3]).is_err());
    }

    #[test]
    fn known_quantile() {
        assert!((chi2_sf_1df(3.841458820694124) - 0.05).abs() < 1e-9);
        assert_eq!(chi2_sf_1df(0.0), 1.0);
    }

    #[test]
    fn accuracy_basic() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
    }

    proptest! {
        #[test]
        fn sf_matches_quadrature(x in 0.01..30.0f64) {
            prop_assert!((chi2_sf_1df(x) - sf_quadrature(x)).abs() < 1e-8);
        }

        #[test]
        fn mcnemar_symmetric_and_bounded(b in 0usize..500, c in 0usize..500) {
            let r = McNemarResult::from_counts(b, c);
            let s = McNemarResult::from_counts(c, b);
            prop_assert_eq!(r.chi2, s.chi2);
            prop_assert_eq!(r.p_value, s.p_value);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert!(r.chi2 >= 0.0);
        }

        #[test]
        fn f1_bounded(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let f = f1_macro(&t, &p, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            if t == p {
                let present = (0..4).filter(|c| t.contains(c)).count();
                prop_assert!((f - present as f64 / 4.0).abs() < 1e-12);
            }
        }
    }
}
