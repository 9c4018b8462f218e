//! Node weighting strategies.
//!
//! The governance-aware strategy minimizes
//! `J(w) = ANLL(w) + λ · ‖w − prior‖²` on validation data. Weights are
//! parametrized as `w = δ + (1 − Kδ) · softmax(θ, 0)` so that every
//! unconstrained `θ ∈ R^(K-1)` is feasible and every weight stays at or above
//! the floor `δ`. Two baselines are provided alongside: weights proportional
//! to local data size and to inverse local label entropy.

mod nelder_mead;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

pub use nelder_mead::{nelder_mead, NelderMeadResult, F_SPREAD_TOL, X_SPREAD_TOL};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::governance::IccPrior;
use crate::mog::{MoGEnsemble, NodeScores, WeightVector};
use crate::rng::rng_from;

/// Clearance above the floor applied before inverting a weight vector.
pub const FLOOR_CLEARANCE: f64 = 1e-6;

pub const ENTROPY_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lambda: f64,
    pub floor_delta: f64,
    pub max_iters: usize,
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.10,
            floor_delta: 0.05,
            max_iters: 500,
            n_starts: 5,
            seed: 42,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.floor_delta.is_finite() && self.floor_delta >= 0.0) {
            return Err(Error::Config(format!("floor delta must be >= 0, got {}", self.floor_delta)));
        }
        if k as f64 * self.floor_delta >= 1.0 {
            return Err(Error::Config(format!(
                "{k} nodes × floor {} leaves no free mass",
                self.floor_delta
            )));
        }
        if self.max_iters == 0 || self.n_starts == 0 {
            return Err(Error::Config("max_iters and n_starts must be positive".into()));
        }
        Ok(())
    }
}

/// `δ + (1 − Kδ) · softmax(θ ++ [0])`, with `K = θ.len() + 1`.
pub fn to_floored_simplex(theta: &[f64], delta: f64) -> WeightVector {
    let k = theta.len() + 1;
    let ext: Vec<f64> = theta.iter().copied().chain(std::iter::once(0.0)).collect();
    let max = ext.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = ext.iter().map(|t| (t - max).exp()).collect();
    let total: f64 = e.iter().sum();
    let free = 1.0 - k as f64 * delta;
    WeightVector::new(e.iter().map(|x| delta + free * x / total).collect())
        .expect("floored softmax lies on the simplex")
}

/// Inverse of [`to_floored_simplex`] with the last coordinate as gauge.
/// Entries within [`FLOOR_CLEARANCE`] of the floor are lifted to it first.
pub fn from_simplex(w: &WeightVector, delta: f64) -> Result<Vec<f64>> {
    let lifted: Vec<f64> = w
        .as_slice()
        .iter()
        .map(|&x| x.max(delta + FLOOR_CLEARANCE))
        .collect();
    let logs: Vec<f64> = lifted.iter().map(|x| (x - delta).ln()).collect();
    if let Some(bad) = logs.iter().position(|l| !l.is_finite()) {
        return Err(Error::Inversion(format!(
            "weight {} at index {bad} cannot be inverted above floor {delta}",
            lifted[bad]
        )));
    }
    let gauge = *logs.last().expect("non-empty weight vector");
    Ok(logs[..logs.len() - 1].iter().map(|l| l - gauge).collect())
}

/// `J(w)` evaluated against precomputed validation scores.
#[derive(Clone, Debug)]
pub struct CompositeObjective {
    scores: NodeScores,
    prior: Vec<f64>,
    lambda: f64,
}

impl CompositeObjective {
    pub fn new(ensemble: &MoGEnsemble, val: &Dataset, prior: &WeightVector, lambda: f64) -> Result<Self> {
        if val.is_empty() {
            return Err(Error::Metric("validation set is empty".into()));
        }
        if prior.len() != ensemble.k() {
            return Err(Error::Ensemble(format!(
                "prior has {} entries for {} nodes",
                prior.len(),
                ensemble.k()
            )));
        }
        Ok(Self {
            scores: NodeScores::compute(ensemble.models(), val)?,
            prior: prior.as_slice().to_vec(),
            lambda,
        })
    }

    pub fn anll(&self, w: &[f64]) -> Result<f64> {
        self.scores.anll(w)
    }

    pub fn penalty(&self, w: &[f64]) -> f64 {
        self.lambda
            * w.iter()
                .zip(&self.prior)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
    }

    pub fn eval(&self, w: &[f64]) -> Result<f64> {
        Ok(self.anll(w)? + self.penalty(w))
    }
}

pub fn objective(
    w: &WeightVector,
    ensemble: &MoGEnsemble,
    val: &Dataset,
    prior: &WeightVector,
    lambda: f64,
) -> Result<f64> {
    CompositeObjective::new(ensemble, val, prior, lambda)?.eval(w.as_slice())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub label: String,
    pub initial_weights: Vec<f64>,
    pub initial_theta: Vec<f64>,
    pub final_theta: Vec<f64>,
    pub final_weights: Vec<f64>,
    pub final_objective: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub starts: Vec<StartTrace>,
    pub chosen: usize,
    pub evaluations: usize,
}

impl OptimizationTrace {
    /// Whether `chosen` holds the smallest final objective.
    pub fn chosen_is_minimal(&self) -> bool {
        let Some(best) = self.starts.get(self.chosen) else {
            return false;
        };
        self.starts.iter().all(|s| best.final_objective <= s.final_objective)
    }
}

fn dirichlet_one(k: usize, rng: &mut impl Rng) -> WeightVector {
    let e: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = e.iter().sum();
    let mut w: Vec<f64> = e.iter().map(|x| x / total).collect();
    // absorb rounding into the largest entry
    let drift = 1.0 - w.iter().sum::<f64>();
    let imax = (0..k).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
    w[imax] += drift;
    WeightVector::new(w).expect("normalized draw")
}

/// Start points in order: prior, uniform, two Dirichlet(1) draws, their
/// elementwise mean, then further draws if more starts are requested.
fn start_points(prior: &WeightVector, k: usize, config: &OptimizerConfig) -> Vec<(String, WeightVector)> {
    let mut rng = rng_from(&[config.seed, 0x57A27]);
    let d1 = dirichlet_one(k, &mut rng);
    let d2 = dirichlet_one(k, &mut rng);
    let mid: Vec<f64> = d1
        .as_slice()
        .iter()
        .zip(d2.as_slice())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let mut starts = vec![
        ("icc_prior".to_string(), prior.clone()),
        ("uniform".to_string(), WeightVector::uniform(k)),
        ("dirichlet_1".to_string(), d1),
        ("dirichlet_2".to_string(), d2),
        ("midpoint".to_string(), WeightVector::new(mid).expect("mean of simplex points")),
    ];
    let mut extra = 3;
    while starts.len() < config.n_starts {
        starts.push((format!("dirichlet_{extra}"), dirichlet_one(k, &mut rng)));
        extra += 1;
    }
    starts.truncate(config.n_starts);
    starts
}

/// Multi-start Nelder-Mead on the composite objective. Returns the floored
/// weights of the best final vertex over all starts.
pub fn learn_weights_icc(
    ensemble: &MoGEnsemble,
    val: &Dataset,
    prior: &IccPrior,
    config: &OptimizerConfig,
) -> Result<(WeightVector, OptimizationTrace)> {
    let k = ensemble.k();
    if k < 2 {
        return Err(Error::Ensemble("weight learning needs at least two nodes".into()));
    }
    config.validate(k)?;
    let objective = CompositeObjective::new(ensemble, val, &prior.normalized, config.lambda)?;
    let delta = config.floor_delta;
    let f = |theta: &[f64]| {
        let w = to_floored_simplex(theta, delta);
        objective.eval(w.as_slice()).unwrap_or(f64::INFINITY)
    };

    let mut traces = Vec::with_capacity(config.n_starts);
    let mut evaluations = 0;
    for (label, w0) in start_points(&prior.normalized, k, config) {
        let theta0 = from_simplex(&w0, delta)?;
        let r = nelder_mead(f, &theta0, config.max_iters)?;
        evaluations += r.evaluations;
        traces.push(StartTrace {
            label,
            initial_weights: w0.into_vec(),
            initial_theta: theta0,
            final_weights: to_floored_simplex(&r.x, delta).into_vec(),
            final_theta: r.x,
            final_objective: r.fx,
            iterations: r.iterations,
        });
    }
    let chosen = (0..traces.len())
        .min_by(|&a, &b| {
            traces[a]
                .final_objective
                .total_cmp(&traces[b].final_objective)
                .then(a.cmp(&b))
        })
        .expect("at least one start");
    let weights = WeightVector::new(traces[chosen].final_weights.clone())?;
    Ok((
        weights,
        OptimizationTrace {
            starts: traces,
            chosen,
            evaluations,
        },
    ))
}

/// Weights proportional to local dataset size.
pub fn weights_fedavg(node_sizes: &[usize]) -> Result<WeightVector> {
    if node_sizes.is_empty() {
        return Err(Error::Size("no nodes".into()));
    }
    if let Some(k) = node_sizes.iter().position(|&n| n == 0) {
        return Err(Error::Size(format!("node {k} has no samples")));
    }
    let total: usize = node_sizes.iter().sum();
    WeightVector::new(node_sizes.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Weights proportional to `1 / (H_k + ε)` for base-2 label entropies `H_k`.
pub fn inverse_entropy_weights(entropies: &[f64]) -> Result<WeightVector> {
    if entropies.is_empty() {
        return Err(Error::Size("no nodes".into()));
    }
    let inv: Vec<f64> = entropies.iter().map(|h| 1.0 / (h + ENTROPY_EPSILON)).collect();
    let total: f64 = inv.iter().sum();
    WeightVector::new(inv.iter().map(|v| v / total).collect())
}

pub fn label_entropy_bits(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Size("node has no samples".into()));
    }
    Ok(-counts
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total as f64;
            p * p.log2()
        })
        .sum::<f64>())
}

/// Weights from inverse local label entropy.
pub fn weights_entropy(per_node_class_counts: &[Vec<usize>]) -> Result<WeightVector> {
    let h = per_node_class_counts
        .iter()
        .enumerate()
        .map(|(k, c)| label_entropy_bits(c).map_err(|_| Error::Size(format!("node {k} has no samples"))))
        .collect::<Result<Vec<_>>>()?;
    inverse_entropy_weights(&h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{degrade, synth_generate, FeatureSchema, SynthSpec};
    use crate::governance::{normalize_prior, NodeProfile};
    use crate::local_model::fit_hybrid;
    use proptest::prelude::*;

    #[test]
    fn floored_map_examples() {
        let w = to_floored_simplex(&[0.0, 0.0], 0.05);
        for v in w.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // softmax (0.8, 0.1, 0.1): θ = (ln 8, 0)
        let w = to_floored_simplex(&[8f64.ln(), 0.0], 0.05);
        for (got, want) in w.as_slice().iter().zip([0.73, 0.135, 0.135]) {
            assert!((got - want).abs() < 1e-12, "{got}");
        }
        let w = to_floored_simplex(&[800.0, 0.0], 0.05);
        assert!((w.as_slice()[0] - 0.9).abs() < 1e-12);
        assert!((w.as_slice()[1] - 0.05).abs() < 1e-12);
        assert_eq!(to_floored_simplex(&[], 0.05).as_slice(), &[1.0]);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(from_simplex(&WeightVector::uniform(3), 0.05).unwrap(), vec![0.0, 0.0]);
        let w = WeightVector::new(vec![0.05, 0.45, 0.5]).unwrap();
        let back = to_floored_simplex(&from_simplex(&w, 0.05).unwrap(), 0.05);
        for (a, b) in back.as_slice().iter().zip(w.as_slice()) {
            assert!((a - b).abs() <= 2e-6);
        }
    }

    #[test]
    fn objective_terms() {
        let (ens, val) = clean_pair(1);
        let prior = WeightVector::new(vec![0.7, 0.3]).unwrap();
        let w = WeightVector::new(vec![0.6, 0.4]).unwrap();
        let a = crate::mog::anll(&ens.with_weights(w.clone()).unwrap(), &val).unwrap();
        assert_eq!(objective(&w, &ens, &val, &prior, 0.0).unwrap(), a);
        assert_eq!(objective(&prior, &ens, &val, &prior, 5.0).unwrap(), crate::mog::anll(&ens.with_weights(prior.clone()).unwrap(), &val).unwrap());
        let j = objective(&w, &ens, &val, &prior, 0.1).unwrap();
        assert!((j - (a + 0.1 * 0.02)).abs() < 1e-12);
    }

    fn clean_pair(seed: u64) -> (MoGEnsemble, Dataset) {
        let spec = SynthSpec::new(400, 2, 1, 2);
        let a = synth_generate(&spec, seed).unwrap();
        let b = synth_generate(&spec, seed + 1).unwrap();
        let val = synth_generate(&spec, seed + 2).unwrap();
        let models = vec![fit_hybrid(&a, 1.0).unwrap(), fit_hybrid(&b, 1.0).unwrap()];
        (MoGEnsemble::new(models, WeightVector::uniform(2)).unwrap(), val)
    }

    fn noise_node(n: usize, seed: u64) -> Dataset {
        // features unrelated to labels
        let spec = SynthSpec::new(n, 2, 1, 2).with_separation(0.0);
        let d = synth_generate(&spec, seed).unwrap();
        let schema = FeatureSchema::generated(1, 2, 2).unwrap();
        let cats: Vec<u32> = d.categorical().iter().map(|_| 0).collect();
        let d = Dataset::new(schema, vec![4], cats, d.numerical().to_vec(), d.labels().to_vec()).unwrap();
        let mut rng = rng_from(&[seed]);
        let labels: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..2)).collect();
        d.with_labels(labels).unwrap()
    }

    fn reference_prior() -> IccPrior {
        IccPrior::from_profiles(&NodeProfile::reference_nodes()).unwrap()
    }

    #[test]
    fn huge_lambda_returns_prior() {
        let spec = SynthSpec::new(600, 2, 1, 3);
        let nodes: Vec<_> = (0..3)
            .map(|k| {
                let d = synth_generate(&spec, 10 + k).unwrap();
                fit_hybrid(&degrade(&d, [0.0, 0.15, 0.4][k as usize], k).unwrap(), 1.0).unwrap()
            })
            .collect();
        let ens = MoGEnsemble::new(nodes, WeightVector::uniform(3)).unwrap();
        let val = synth_generate(&spec, 99).unwrap();
        let prior = reference_prior();
        let config = OptimizerConfig {
            lambda: 1e6,
            ..OptimizerConfig::default()
        };
        let (w, trace) = learn_weights_icc(&ens, &val, &prior, &config).unwrap();
        for (a, b) in w.as_slice().iter().zip(prior.normalized.as_slice()) {
            assert!((a - b).abs() < 1e-3, "{w:?}");
        }
        assert!(trace.chosen_is_minimal());
        assert_eq!(trace.starts.len(), 5);
    }

    #[test]
    fn noise_node_is_pushed_to_floor() {
        let spec = SynthSpec::new(600, 2, 1, 2);
        let a = synth_generate(&spec, 1).unwrap();
        let b = synth_generate(&spec, 2).unwrap();
        let val = synth_generate(&spec, 3).unwrap();
        let models = vec![
            fit_hybrid(&a, 1.0).unwrap(),
            fit_hybrid(&b, 1.0).unwrap(),
            fit_hybrid(&noise_node(600, 4), 1.0).unwrap(),
        ];
        let ens = MoGEnsemble::new(models, WeightVector::uniform(3)).unwrap();
        let config = OptimizerConfig {
            lambda: 0.0,
            ..OptimizerConfig::default()
        };
        let (w, _) = learn_weights_icc(&ens, &val, &reference_prior(), &config).unwrap();
        assert!((w.as_slice()[2] - 0.05).abs() < 0.02, "{w:?}");
    }

    #[test]
    fn identical_models_follow_the_penalty() {
        let spec = SynthSpec::new(300, 2, 1, 2);
        let d = synth_generate(&spec, 8).unwrap();
        let m = fit_hybrid(&d, 1.0).unwrap();
        let ens = MoGEnsemble::new(vec![m.clone(), m], WeightVector::uniform(2)).unwrap();
        let val = synth_generate(&spec, 9).unwrap();
        let prior = IccPrior {
            icc: vec![0.393, 0.154],
            normalized: normalize_prior(&[0.393, 0.154]).unwrap(),
        };
        let (w, _) = learn_weights_icc(&ens, &val, &prior, &OptimizerConfig::default()).unwrap();
        for (a, b) in w.as_slice().iter().zip(prior.normalized.as_slice()) {
            assert!((a - b).abs() < 1e-3, "{w:?}");
        }
    }

    #[test]
    fn learning_is_deterministic_and_floored() {
        let (ens, val) = clean_pair(4);
        let prior = IccPrior {
            icc: vec![0.3, 0.1],
            normalized: normalize_prior(&[0.3, 0.1]).unwrap(),
        };
        let config = OptimizerConfig::default();
        let (w1, t1) = learn_weights_icc(&ens, &val, &prior, &config).unwrap();
        let (w2, t2) = learn_weights_icc(&ens, &val, &prior, &config).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(t1, t2);
        assert!(w1.as_slice().iter().all(|&v| v >= 0.05));
        assert!(t1.starts[t1.chosen].final_objective <= t1.starts[0].final_objective);
        let start_obj = objective(&prior.normalized, &ens, &val, &prior.normalized, config.lambda).unwrap();
        assert!(t1.starts[t1.chosen].final_objective <= start_obj + 1e-12);
    }

    #[test]
    fn single_node_rejected() {
        let (ens, val) = clean_pair(5);
        let one = MoGEnsemble::new(vec![ens.models()[0].clone()], WeightVector::uniform(1)).unwrap();
        let prior = IccPrior {
            icc: vec![0.3],
            normalized: WeightVector::uniform(1),
        };
        assert!(learn_weights_icc(&one, &val, &prior, &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        let c = OptimizerConfig {
            floor_delta: 0.34,
            ..OptimizerConfig::default()
        };
        assert!(c.validate(3).is_err());
        assert!(OptimizerConfig::default().validate(3).is_ok());
        assert!(OptimizerConfig { lambda: -1.0, ..OptimizerConfig::default() }.validate(3).is_err());
    }

    #[test]
    fn fedavg_examples() {
        let w = weights_fedavg(&[100, 100, 100]).unwrap();
        assert!(w.as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(weights_fedavg(&[60, 30, 10]).unwrap().as_slice(), &[0.6, 0.3, 0.1]);
        assert_eq!(weights_fedavg(&[1]).unwrap().as_slice(), &[1.0]);
        assert!(matches!(weights_fedavg(&[3, 0]), Err(Error::Size(_))));
    }

    #[test]
    fn entropy_examples() {
        let w = weights_entropy(&[vec![5, 5], vec![7, 7]]).unwrap();
        assert!((w.as_slice()[0] - 0.5).abs() < 1e-12);
        let w = inverse_entropy_weights(&[0.5, 1.0]).unwrap();
        assert!((w.as_slice()[0] - 2.0 / 3.0).abs() < 1e-5);
        assert!((w.as_slice()[1] - 1.0 / 3.0).abs() < 1e-5);
        let w = weights_entropy(&[vec![10, 0], vec![5, 5], vec![3, 4]]).unwrap();
        assert!(w.as_slice()[0] > 0.9999);
        assert!(weights_entropy(&[vec![0, 0], vec![1, 1]]).is_err());
    }

    proptest! {
        #[test]
        fn simplex_round_trip(raw in prop::collection::vec(0.01..1.0f64, 2..6), delta in 0.0..0.08f64) {
            let k = raw.len();
            prop_assume!(k as f64 * delta < 0.9);
            let total: f64 = raw.iter().sum();
            // place w strictly inside the floored simplex
            let free = 1.0 - k as f64 * delta;
            let w: Vec<f64> = raw.iter().map(|r| delta + free * r / total).collect();
            let w = WeightVector::new(w).unwrap();
            let back = to_floored_simplex(&from_simplex(&w, delta).unwrap(), delta);
            for (a, b) in back.as_slice().iter().zip(w.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn floored_map_is_feasible(theta in prop::collection::vec(-50.0..50.0f64, 1..6), delta in 0.0..0.1f64) {
            prop_assume!((theta.len() + 1) as f64 * delta < 1.0);
            let w = to_floored_simplex(&theta, delta);
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.as_slice().iter().all(|&v| v >= delta));
        }

        #[test]
        fn baselines_on_simplex(sizes in prop::collection::vec(1usize..1000, 1..6)) {
            let w = weights_fedavg(&sizes).unwrap();
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let counts: Vec<Vec<usize>> = sizes.iter().map(|&n| vec![n, n / 3]).collect();
            let w = weights_entropy(&counts).unwrap();
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.as_slice().iter().all(|&v| v >= 0.0));
        }
    }
}
