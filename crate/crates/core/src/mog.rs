//! Server-side aggregation of node models as a weighted mixture.
//!
//! The mixture score of class `c` is `log Σ_k w_k · P_k(x, c)` over the nodes
//! that observed `c`. Nodes that never saw a class are left out of that
//! class's sum without renormalizing the remaining weights, so a class held
//! by few nodes pays for the missing mass.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Row};
use crate::error::{Error, Result};
use crate::local_model::{argmax, HybridModel, ABSENT};

/// Loss charged for a row whose true class no node has seen.
pub const MISSING_CLASS_PENALTY: f64 = 50.0;

const SUM_TOL: f64 = 1e-9;

/// Non-negative node weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        WeightVector::new(w)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Ensemble("weight vector is empty".into()));
        }
        if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::Ensemble(format!("weight {bad} is not a non-negative number")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::Ensemble(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct MoGEnsemble {
    models: Vec<HybridModel>,
    weights: WeightVector,
}

impl MoGEnsemble {
    pub fn new(models: Vec<HybridModel>, weights: WeightVector) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::Ensemble("ensemble needs at least one model".into()))?;
        if weights.len() != models.len() {
            return Err(Error::Ensemble(format!(
                "{} weights for {} models",
                weights.len(),
                models.len()
            )));
        }
        for (k, m) in models.iter().enumerate().skip(1) {
            if m.n_classes() != first.n_classes()
                || m.cat_cardinality != first.cat_cardinality
                || m.scaler.mean.len() != first.scaler.mean.len()
            {
                return Err(Error::Ensemble(format!(
                    "model {k} disagrees with model 0 on classes or feature layout"
                )));
            }
        }
        Ok(Self { models, weights })
    }

    pub fn with_weights(&self, weights: WeightVector) -> Result<Self> {
        Self::new(self.models.clone(), weights)
    }

    pub fn models(&self) -> &[HybridModel] {
        &self.models
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn n_classes(&self) -> usize {
        self.models[0].n_classes()
    }
}

/// `log Σ exp(v)` over the finite entries of `v`; [`ABSENT`] if there are none.
pub fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return ABSENT;
    }
    max + v
        .iter()
        .filter(|x| x.is_finite())
        .map(|x| (x - max).exp())
        .sum::<f64>()
        .ln()
}

/// Mixes per-node class scores (`node_scores[k][c]`) into `out[c]`.
fn mix_into(log_w: &[f64], node_scores: &[&[f64]], out: &mut [f64], buf: &mut Vec<f64>) {
    for (c, slot) in out.iter_mut().enumerate() {
        buf.clear();
        for (lw, s) in log_w.iter().zip(node_scores) {
            if s[c] != ABSENT && *lw != f64::NEG_INFINITY {
                buf.push(lw + s[c]);
            }
        }
        *slot = logsumexp(buf);
    }
}

pub fn mog_log_scores(ensemble: &MoGEnsemble, row: &Row<'_>) -> Result<Vec<f64>> {
    let n_classes = ensemble.n_classes();
    let per_node = ensemble
        .models
        .iter()
        .map(|m| {
            let mut s = vec![ABSENT; n_classes];
            m.scores_into(row, &mut s).map(|_| s)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = per_node.iter().map(Vec::as_slice).collect();
    let log_w: Vec<f64> = ensemble.weights.as_slice().iter().map(|w| w.ln()).collect();
    let mut out = vec![ABSENT; n_classes];
    mix_into(&log_w, &refs, &mut out, &mut Vec::with_capacity(ensemble.k()));
    Ok(out)
}

/// `v_i - logsumexp(v)`; [`ABSENT`] entries stay absent.
pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::Normalization(format!("scores contain NaN or +inf: {v:?}")));
    }
    let lse = logsumexp(v);
    if lse == ABSENT {
        return Err(Error::Normalization("no finite score to normalize".into()));
    }
    Ok(v.iter().map(|&x| if x == ABSENT { ABSENT } else { x - lse }).collect())
}

fn row_nll(scores: &[f64], y: usize) -> f64 {
    if scores[y] == ABSENT {
        return MISSING_CLASS_PENALTY;
    }
    // scores[y] finite implies a finite normalizer
    (logsumexp(scores) - scores[y]).max(0.0)
}

/// Per-node class scores of every row of a dataset, computed once so that
/// many weight vectors can be evaluated cheaply.
#[derive(Clone, Debug)]
pub struct NodeScores {
    k: usize,
    n_rows: usize,
    n_classes: usize,
    // [row][node][class]
    scores: Vec<f64>,
    labels: Vec<usize>,
}

impl NodeScores {
    pub fn compute(models: &[HybridModel], data: &Dataset) -> Result<Self> {
        let k = models.len();
        let n_classes = models.first().map_or(0, HybridModel::n_classes);
        let n_rows = data.n_rows();
        let stride = k * n_classes;
        let mut scores = vec![ABSENT; n_rows * stride];
        for (i, row) in data.rows().enumerate() {
            for (j, m) in models.iter().enumerate() {
                let at = i * stride + j * n_classes;
                m.scores_into(&row, &mut scores[at..at + n_classes])?;
            }
        }
        Ok(Self {
            k,
            n_rows,
            n_classes,
            scores,
            labels: data.labels().to_vec(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn node_row(&self, node: usize, i: usize) -> &[f64] {
        let at = i * self.k * self.n_classes + node * self.n_classes;
        &self.scores[at..at + self.n_classes]
    }

    fn check(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.k {
            return Err(Error::Ensemble(format!(
                "{} weights for {} models",
                weights.len(),
                self.k
            )));
        }
        Ok(weights.iter().map(|w| w.ln()).collect())
    }

    /// Calls `f(row, mixture scores)` for every row.
    pub fn for_each_mixed(&self, weights: &[f64], mut f: impl FnMut(usize, &[f64])) -> Result<()> {
        let log_w = self.check(weights)?;
        let mut out = vec![ABSENT; self.n_classes];
        let mut buf = Vec::with_capacity(self.k);
        let mut refs: Vec<&[f64]> = Vec::with_capacity(self.k);
        for i in 0..self.n_rows {
            refs.clear();
            refs.extend((0..self.k).map(|j| self.node_row(j, i)));
            mix_into(&log_w, &refs, &mut out, &mut buf);
            f(i, &out);
        }
        Ok(())
    }

    pub fn anll(&self, weights: &[f64]) -> Result<f64> {
        if self.n_rows == 0 {
            return Err(Error::Metric("ANLL of an empty dataset".into()));
        }
        let mut total = 0.0;
        self.for_each_mixed(weights, |i, s| total += row_nll(s, self.labels[i]))?;
        Ok(total / self.n_rows as f64)
    }

    pub fn predict(&self, weights: &[f64]) -> Result<Vec<usize>> {
        let mut preds = Vec::with_capacity(self.n_rows);
        self.for_each_mixed(weights, |_, s| preds.push(argmax(s)))?;
        Ok(preds)
    }

    /// True when every mixture score is finite or exactly [`ABSENT`].
    pub fn all_scores_valid(&self, weights: &[f64]) -> Result<bool> {
        let mut ok = true;
        self.for_each_mixed(weights, |_, s| {
            ok &= s.iter().all(|x| x.is_finite() || *x == ABSENT);
        })?;
        Ok(ok)
    }
}

/// Mean negative log-likelihood of the true labels under the
/// log-softmax-normalized mixture.
pub fn anll(ensemble: &MoGEnsemble, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Metric("ANLL of an empty dataset".into()));
    }
    NodeScores::compute(&ensemble.models, data)?.anll(ensemble.weights.as_slice())
}

pub fn predict_mog(ensemble: &MoGEnsemble, data: &Dataset) -> Result<Vec<usize>> {
    NodeScores::compute(&ensemble.models, data)?.predict(ensemble.weights.as_slice())
}
