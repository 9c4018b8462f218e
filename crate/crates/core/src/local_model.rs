//! Per-node hybrid Naive Bayes.
//!
//! Categorical columns use Laplace-smoothed multinomials with one extra slot
//! per column for values never seen in training (code `n_cats`). Numerical
//! columns are standardized with the node's own scaler and modelled by one
//! Gaussian per class and column. A row's score for class `c` is the joint
//! log density `log P(x, c)`: the class prior counted once, plus the
//! categorical and Gaussian log-likelihoods.
//!
//! Gaussian log-likelihoods include the scaler's log-Jacobian
//! `-Σ ln scale_j`, so scores are densities over the raw feature values and
//! nodes with different scalers can be mixed. The term is constant across
//! classes and does not change a single model's ranking.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Row};
use crate::error::{Error, Result};

/// Score of a class the model never saw in training.
pub const ABSENT: f64 = f64::NEG_INFINITY;

pub const DEFAULT_SMOOTHING: f64 = 1.0;

const VAR_SMOOTHING: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ScalerParams {
    /// Column mean and population standard deviation; zero-spread columns get scale 1.
    pub fn fit(data: &Dataset) -> Self {
        let nn = data.n_numerical();
        let n = data.n_rows().max(1) as f64;
        let mut mean = vec![0.0; nn];
        for row in data.rows() {
            for (m, x) in mean.iter_mut().zip(row.numerical) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; nn];
        for row in data.rows() {
            for ((v, x), m) in var.iter_mut().zip(row.numerical).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    /// `log |dz/dx|` summed over columns.
    pub fn log_jacobian(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Fitted parameters of one class at one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub count: usize,
    pub log_prior: f64,
    /// Per categorical column: `n_cats + 1` log-probabilities, last one OOD.
    pub cat_log_probs: Vec<Vec<f64>>,
    /// Per numerical column, in standardized units.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridModel {
    pub scaler: ScalerParams,
    pub cat_cardinality: Vec<usize>,
    pub smoothing: f64,
    /// One entry per class of the schema; `None` for classes absent from training.
    pub classes: Vec<Option<ClassParams>>,
    pub n_train: usize,
}

pub fn fit_hybrid(train: &Dataset, smoothing: f64) -> Result<HybridModel> {
    if train.is_empty() {
        return Err(Error::Fit("training set is empty".into()));
    }
    if !(smoothing.is_finite() && smoothing > 0.0) {
        return Err(Error::Fit(format!("smoothing must be positive, got {smoothing}")));
    }
    let cards = train.cat_cardinality().to_vec();
    for row in train.rows() {
        for (j, (&code, &card)) in row.categorical.iter().zip(&cards).enumerate() {
            if code as usize >= card {
                return Err(Error::Fit(format!(
                    "training row carries the OOD code in categorical column {j}"
                )));
            }
        }
    }

    let scaler = ScalerParams::fit(train);
    let nn = train.n_numerical();
    let n = train.n_rows();
    let n_classes = train.n_classes();
    let z: Vec<Vec<f64>> = train.rows().map(|r| scaler.transform(r.numerical)).collect();

    let mut col_var = vec![0.0; nn];
    for j in 0..nn {
        let mean = z.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        col_var[j] = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
    }
    let epsilon: Vec<f64> = col_var.iter().map(|v| VAR_SMOOTHING * v.max(1.0)).collect();

    let mut classes = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let members: Vec<usize> = (0..n).filter(|&i| train.labels()[i] == c).collect();
        if members.is_empty() {
            classes.push(None);
            continue;
        }
        let nc = members.len() as f64;
        let cat_log_probs = cards
            .iter()
            .enumerate()
            .map(|(j, &card)| {
                let mut counts = vec![0usize; card + 1];
                for &i in &members {
                    counts[train.row(i).categorical[j] as usize] += 1;
                }
                let denom = nc + smoothing * (card + 1) as f64;
                counts
                    .iter()
                    .map(|&k| ((k as f64 + smoothing) / denom).ln())
                    .collect()
            })
            .collect();
        let mut mean = vec![0.0; nn];
        let mut var = vec![0.0; nn];
        for j in 0..nn {
            mean[j] = members.iter().map(|&i| z[i][j]).sum::<f64>() / nc;
            var[j] = members.iter().map(|&i| (z[i][j] - mean[j]).powi(2)).sum::<f64>() / nc
                + epsilon[j];
        }
        classes.push(Some(ClassParams {
            count: members.len(),
            log_prior: (nc / n as f64).ln(),
            cat_log_probs,
            mean,
            var,
        }));
    }
    Ok(HybridModel {
        scaler,
        cat_cardinality: cards,
        smoothing,
        classes,
        n_train: n,
    })
}

impl HybridModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes_present(&self) -> Vec<usize> {
        self.classes
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.as_ref().map(|_| c))
            .collect()
    }

    pub fn has_class(&self, c: usize) -> bool {
        self.classes.get(c).is_some_and(Option::is_some)
    }

    pub fn class(&self, c: usize) -> Option<&ClassParams> {
        self.classes.get(c).and_then(Option::as_ref)
    }

    fn check_row(&self, row: &Row<'_>) -> Result<()> {
        if row.categorical.len() != self.cat_cardinality.len()
            || row.numerical.len() != self.scaler.mean.len()
        {
            return Err(Error::Shape(format!(
                "row has {} categorical / {} numerical values, model expects {} / {}",
                row.categorical.len(),
                row.numerical.len(),
                self.cat_cardinality.len(),
                self.scaler.mean.len()
            )));
        }
        for (j, (&code, &card)) in row.categorical.iter().zip(&self.cat_cardinality).enumerate() {
            if code as usize > card {
                return Err(Error::Shape(format!(
                    "code {code} in categorical column {j} exceeds OOD code {card}"
                )));
            }
        }
        Ok(())
    }

    /// Writes one score per class into `out`; absent classes get [`ABSENT`].
    pub fn scores_into(&self, row: &Row<'_>, out: &mut [f64]) -> Result<()> {
        self.check_row(row)?;
        if out.len() != self.classes.len() {
            return Err(Error::Shape(format!(
                "output has {} slots for {} classes",
                out.len(),
                self.classes.len()
            )));
        }
        let z = self.scaler.transform(row.numerical);
        let log_jac = self.scaler.log_jacobian();
        for (slot, params) in out.iter_mut().zip(&self.classes) {
            *slot = match params {
                None => ABSENT,
                Some(p) => {
                    let cat: f64 = row
                        .categorical
                        .iter()
                        .zip(&p.cat_log_probs)
                        .map(|(&code, probs)| probs[code as usize])
                        .sum();
                    let gauss: f64 = z
                        .iter()
                        .zip(p.mean.iter().zip(&p.var))
                        .map(|(z, (m, v))| -0.5 * (2.0 * PI * v).ln() - (z - m).powi(2) / (2.0 * v))
                        .sum();
                    p.log_prior + cat + gauss + log_jac
                }
            };
        }
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

pub fn joint_log_scores(model: &HybridModel, row: &Row<'_>) -> Result<Vec<f64>> {
    let mut out = vec![ABSENT; model.n_classes()];
    model.scores_into(row, &mut out)?;
    Ok(out)
}

/// Index of the largest finite score, ties to the smaller index.
pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict_local(model: &HybridModel, row: &Row<'_>) -> Result<usize> {
    Ok(argmax(&joint_log_scores(model, row)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, FeatureSchema, SynthSpec};
    use proptest::prelude::*;

    /// Direct-arithmetic joint log density over raw feature values.
    /// Shares nothing with the fitted model except the training data.
    fn oracle_scores(train: &Dataset, row: Row<'_>, smoothing: f64) -> Vec<f64> {
        let n = train.n_rows() as f64;
        let nn = train.n_numerical();
        let mut mean = vec![0.0; nn];
        let mut sd = vec![0.0; nn];
        for j in 0..nn {
            let col: Vec<f64> = (0..train.n_rows()).map(|i| train.row(i).numerical[j]).collect();
            mean[j] = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|x| (x - mean[j]) * (x - mean[j])).sum::<f64>() / n;
            sd[j] = if v.sqrt() > 0.0 { v.sqrt() } else { 1.0 };
        }
        (0..train.n_classes())
            .map(|c| {
                let members: Vec<usize> = (0..train.n_rows()).filter(|&i| train.labels()[i] == c).collect();
                if members.is_empty() {
                    return f64::NEG_INFINITY;
                }
                let nc = members.len() as f64;
                let mut p = nc / n;
                for (j, &card) in train.cat_cardinality().iter().enumerate() {
                    let hits = members
                        .iter()
                        .filter(|&&i| train.row(i).categorical[j] == row.categorical[j])
                        .count() as f64;
                    p *= (hits + smoothing) / (nc + smoothing * (card as f64 + 1.0));
                }
                let mut log_p = p.ln();
                for j in 0..nn {
                    let zs: Vec<f64> = members
                        .iter()
                        .map(|&i| (train.row(i).numerical[j] - mean[j]) / sd[j])
                        .collect();
                    let all_z: Vec<f64> = (0..train.n_rows())
                        .map(|i| (train.row(i).numerical[j] - mean[j]) / sd[j])
                        .collect();
                    let all_mean = all_z.iter().sum::<f64>() / n;
                    let all_var = all_z.iter().map(|z| (z - all_mean).powi(2)).sum::<f64>() / n;
                    let mu_z = zs.iter().sum::<f64>() / nc;
                    let var_z = zs.iter().map(|z| (z - mu_z).powi(2)).sum::<f64>() / nc + 1e-9 * all_var.max(1.0);
                    // back to raw units
                    let mu = mean[j] + sd[j] * mu_z;
                    let var = sd[j] * sd[j] * var_z;
                    let x = row.numerical[j];
                    let density = (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
                    log_p += if density > 0.0 {
                        density.ln()
                    } else {
                        -0.5 * (2.0 * PI * var).ln() - (x - mu) * (x - mu) / (2.0 * var)
                    };
                }
                log_p
            })
            .collect()
    }

    fn dataset(cards: Vec<usize>, cat: Vec<u32>, num: Vec<f64>, labels: Vec<usize>, n_classes: usize) -> Dataset {
        let schema = FeatureSchema::generated(cards.len(), num.len() / labels.len().max(1), n_classes).unwrap();
        Dataset::new(schema, cards, cat, num, labels).unwrap()
    }

    #[test]
    fn laplace_with_ood_slot() {
        // one class, category counts (2, 1), OOD 0
        let d = dataset(vec![2], vec![0, 0, 1], vec![], vec![0, 0, 0], 2);
        let m = fit_hybrid(&d, 1.0).unwrap();
        let probs: Vec<f64> = m.class(0).unwrap().cat_log_probs[0].iter().map(|l| l.exp()).collect();
        for (p, want) in probs.iter().zip([3.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0]) {
            assert!((p - want).abs() < 1e-12);
        }
        assert!(!m.has_class(1));
    }

    #[test]
    fn constant_column_hits_variance_floor() {
        let d = dataset(vec![], vec![], vec![5.0, 5.0, 5.0, 1.0, 2.0, 3.0], vec![0, 0, 0, 1, 1, 1], 2);
        let m = fit_hybrid(&d, 1.0).unwrap();
        let var0 = m.class(0).unwrap().var[0];
        assert!(var0 > 0.0 && var0 < 1e-8, "{var0}");
        let s = joint_log_scores(&m, &d.row(0)).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        let s = joint_log_scores(&m, &d.row(3)).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn priors_are_frequencies() {
        let d = dataset(vec![], vec![], vec![0.0, 1.0, 2.0, 3.0], vec![0, 0, 1, 1], 2);
        let m = fit_hybrid(&d, 1.0).unwrap();
        assert!((m.class(0).unwrap().log_prior.exp() - 0.5).abs() < 1e-15);
        assert!((m.class(1).unwrap().log_prior.exp() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn categorical_only_scores() {
        let d = dataset(vec![2], vec![0, 1, 0, 1], vec![], vec![0, 0, 1, 1], 2);
        let m = fit_hybrid(&d, 1.0).unwrap();
        let s = joint_log_scores(&m, &d.row(0)).unwrap();
        for c in 0..2 {
            let want = 0.5f64.ln() + m.class(c).unwrap().cat_log_probs[0][0];
            assert!((s[c] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn ood_code_uses_dedicated_slot() {
        let d = dataset(vec![2], vec![0, 1, 1, 1, 0, 0], vec![], vec![0, 0, 0, 1, 1, 1], 2);
        let m = fit_hybrid(&d, 1.0).unwrap();
        let schema = d.schema().clone();
        let ood = Dataset::new(schema, vec![2], vec![2], vec![], vec![0]).unwrap();
        let s = joint_log_scores(&m, &ood.row(0)).unwrap();
        for c in 0..2 {
            let p = m.class(c).unwrap();
            assert_eq!(s[c], p.log_prior + p.cat_log_probs[0][2]);
            assert_ne!(p.cat_log_probs[0][2], p.cat_log_probs[0][1]);
        }
    }

    #[test]
    fn small_instance_matches_oracle() {
        // 2 classes, 1 categorical, 1 numerical, 6 rows
        let d = dataset(
            vec![3],
            vec![0, 1, 0, 2, 2, 1],
            vec![1.0, 1.4, 0.7, 3.1, 2.6, 3.3],
            vec![0, 0, 0, 1, 1, 1],
            2,
        );
        let m = fit_hybrid(&d, 1.0).unwrap();
        for i in 0..6 {
            let got = joint_log_scores(&m, &d.row(i)).unwrap();
            let want = oracle_scores(&d, d.row(i), 1.0);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9, "row {i}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let d = dataset(vec![2], vec![0, 1], vec![1.0, 2.0], vec![0, 1], 2);
        let m = fit_hybrid(&d, 1.0).unwrap();
        let row = Row {
            categorical: &[0, 0],
            numerical: &[1.0],
        };
        assert!(matches!(joint_log_scores(&m, &row), Err(Error::Shape(_))));
        let row = Row {
            categorical: &[3],
            numerical: &[1.0],
        };
        assert!(matches!(joint_log_scores(&m, &row), Err(Error::Shape(_))));
    }

    #[test]
    fn fit_errors() {
        let d = dataset(vec![2], vec![], vec![], vec![], 2);
        assert!(matches!(fit_hybrid(&d, 1.0), Err(Error::Fit(_))));
        let d = dataset(vec![2], vec![2, 0], vec![], vec![0, 1], 2);
        assert!(matches!(fit_hybrid(&d, 1.0), Err(Error::Fit(_))));
    }

    #[test]
    fn separable_training_accuracy() {
        let spec = SynthSpec::new(600, 3, 0, 2).with_separation(6.0);
        let d = synth_generate(&spec, 5).unwrap();
        let m = fit_hybrid(&d, 1.0).unwrap();
        let correct = d
            .rows()
            .zip(d.labels())
            .filter(|(r, &y)| predict_local(&m, r).unwrap() == y)
            .count();
        assert_eq!(correct, d.n_rows());
    }

    #[test]
    fn single_class_model_predicts_it() {
        let d = dataset(vec![2], vec![0, 1, 1], vec![0.1, 5.0, -3.0], vec![1, 1, 1], 3);
        let m = fit_hybrid(&d, 1.0).unwrap();
        assert_eq!(m.classes_present(), vec![1]);
        for x in [-100.0, 0.0, 100.0] {
            let row = Row {
                categorical: &[2],
                numerical: &[x],
            };
            assert_eq!(predict_local(&m, &row).unwrap(), 1);
        }
    }

    #[test]
    fn ties_go_to_smaller_index() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[ABSENT, 2.0, 2.0]), 1);
        // identical class statistics give identical scores
        let d = dataset(vec![1], vec![0, 0], vec![1.0, 1.0], vec![0, 1], 2);
        let m = fit_hybrid(&d, 1.0).unwrap();
        assert_eq!(predict_local(&m, &d.row(0)).unwrap(), 0);
    }

    #[test]
    fn json_round_trip() {
        let d = dataset(vec![2], vec![0, 1, 1], vec![0.1, 5.0, -3.0], vec![1, 1, 0], 3);
        let m = fit_hybrid(&d, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save_json(&path).unwrap();
        assert_eq!(HybridModel::load_json(&path).unwrap(), m);
    }

    fn instance() -> impl Strategy<Value = (Dataset, u64)> {
        (0usize..=2, 0usize..=2, 2usize..=3, 6usize..=50)
            .prop_filter("need a feature", |(c, n, _, _)| c + n >= 1 && c + n <= 4)
            .prop_flat_map(|(n_cat, n_num, n_classes, rows)| {
                (
                    prop::collection::vec(1usize..4, n_cat),
                    prop::collection::vec(0u32..1000, rows * n_cat),
                    prop::collection::vec(-5.0..5.0f64, rows * n_num),
                    prop::collection::vec(0usize..n_classes, rows),
                    Just((n_num, n_classes)),
                    any::<u64>(),
                )
            })
            .prop_map(|(cards, raw_cat, num, labels, (n_num, n_classes), salt)| {
                let n_cat = cards.len();
                let cat = raw_cat
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v % cards[i % n_cat.max(1)] as u32)
                    .collect();
                let schema = FeatureSchema::generated(n_cat, n_num, n_classes).unwrap();
                (Dataset::new(schema, cards, cat, num, labels).unwrap(), salt)
            })
    }

    proptest! {
        #[test]
        fn categorical_slots_normalized((d, _) in instance()) {
            let m = fit_hybrid(&d, 1.0).unwrap();
            for c in m.classes.iter().flatten() {
                for probs in &c.cat_log_probs {
                    let s: f64 = probs.iter().map(|l| l.exp()).sum();
                    prop_assert!((s - 1.0).abs() < 1e-9);
                }
            }
            let prior: f64 = m.classes.iter().flatten().map(|c| c.log_prior.exp()).sum();
            prop_assert!((prior - 1.0).abs() < 1e-9);
        }

        #[test]
        fn scores_match_oracle((d, salt) in instance()) {
            let m = fit_hybrid(&d, 1.0).unwrap();
            let i = (salt as usize) % d.n_rows();
            let got = joint_log_scores(&m, &d.row(i)).unwrap();
            let want = oracle_scores(&d, d.row(i), 1.0);
            for (g, w) in got.iter().zip(&want) {
                if w.is_finite() {
                    prop_assert!((g - w).abs() < 1e-9 * w.abs().max(1.0), "{} vs {}", g, w);
                } else {
                    prop_assert_eq!(*g, ABSENT);
                }
            }
        }

        #[test]
        fn scaler_round_trip(x in prop::collection::vec(-1e3..1e3f64, 1..5), s in prop::collection::vec(0.01..100.0f64, 5), m in prop::collection::vec(-50.0..50.0f64, 5)) {
            let n = x.len();
            let scaler = ScalerParams { mean: m[..n].to_vec(), scale: s[..n].to_vec() };
            let back = scaler.transform(&scaler.inverse(&x));
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
