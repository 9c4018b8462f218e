//! Train/validation/test splitting, label-skewed node partitioning and the
//! heterogeneity measure used to describe a partition.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01};
use serde::{Deserialize, Serialize};

use crate::data::{apportion, Dataset};
use crate::error::{Error, Result};
use crate::rng::rng_from;

const MAX_PARTITION_RETRIES: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 42,
        }
    }
}

impl SplitConfig {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let c = Self {
            train_frac,
            val_frac,
            test_frac,
            seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train_frac, self.val_frac, self.test_frac];
        if f.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive, got {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1, got {f:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class shuffled apportionment into three splits. Each class with at
/// least three samples puts at least one sample in every split.
pub fn stratified_split_indices(
    labels: &[usize],
    n_classes: usize,
    config: &SplitConfig,
) -> Result<SplitIndices> {
    config.validate()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class
            .get_mut(y)
            .ok_or_else(|| Error::Label(format!("label {y} outside [0, {n_classes})")))?
            .push(i);
    }
    let mut rng = rng_from(&[config.seed, 0x5B117]);
    let fracs = [config.train_frac, config.val_frac, config.test_frac];
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(Error::Stratification(format!(
                "class {c} has {} samples; at least 3 are needed",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let mut counts = apportion(idx.len(), &fracs);
        while let Some(empty) = counts.iter().position(|&n| n == 0) {
            let largest = (0..3).max_by_key(|&s| (counts[s], std::cmp::Reverse(s))).unwrap();
            counts[largest] -= 1;
            counts[empty] += 1;
        }
        let (train, rest) = idx.split_at(counts[0]);
        let (val, test) = rest.split_at(counts[1]);
        out.train.extend_from_slice(train);
        out.val.extend_from_slice(val);
        out.test.extend_from_slice(test);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn stratified_split(dataset: &Dataset, config: &SplitConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let s = stratified_split_indices(dataset.labels(), dataset.n_classes(), config)?;
    Ok((dataset.select(&s.train), dataset.select(&s.val), dataset.select(&s.test)))
}

/// Row indices held by each node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub node_indices: Vec<Vec<usize>>,
    pub alpha: f64,
}

impl Partition {
    pub fn k(&self) -> usize {
        self.node_indices.len()
    }

    pub fn node_sizes(&self) -> Vec<usize> {
        self.node_indices.iter().map(Vec::len).collect()
    }

    /// `K × n_classes` label histogram.
    pub fn class_counts(&self, labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
        self.node_indices
            .iter()
            .map(|idx| {
                let mut counts = vec![0; n_classes];
                for &i in idx {
                    counts[labels[i]] += 1;
                }
                counts
            })
            .collect()
    }

    pub fn report(&self, labels: &[usize], n_classes: usize) -> Result<PartitionReport> {
        let per_node_class_counts = self.class_counts(labels, n_classes);
        let jsd = jsd_heterogeneity(&per_node_class_counts)?;
        Ok(PartitionReport {
            jsd,
            per_node_class_counts,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub jsd: f64,
    pub per_node_class_counts: Vec<Vec<usize>>,
}

/// Dirichlet(`alpha`·1) proportions for `k` nodes, drawn as normalized
/// Gamma(`alpha`) variates in log space.
///
/// Each component uses its own generator and the `alpha < 1`-style boost
/// `G(alpha) = G(1 + alpha) · U^(1/alpha)`, so draws made with the same seed
/// at different `alpha` share their uniforms and move monotonically toward
/// the simplex vertices as `alpha` shrinks.
fn dirichlet_draw(alpha: f64, k: usize, seed_parts: &[u64]) -> Vec<f64> {
    let boosted = Gamma::new(1.0 + alpha, 1.0).expect("shape > 1");
    let log_g: Vec<f64> = (0..k as u64)
        .map(|j| {
            let mut parts = seed_parts.to_vec();
            parts.push(j);
            let mut rng = rng_from(&parts);
            let u: f64 = rng.sample(Open01);
            let g: f64 = boosted.sample(&mut rng);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let max = log_g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = log_g.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Label-skewed partition: every class is spread over the `k` nodes by
/// largest-remainder apportionment of a Dirichlet(`alpha`) draw.
///
/// A draw that leaves a node without rows is redrawn with a fresh sub-seed,
/// up to 100 times.
pub fn dirichlet_partition(labels: &[usize], k: usize, alpha: f64, seed: u64) -> Result<Partition> {
    if k == 0 {
        return Err(Error::PartitionDegenerate("node count must be positive".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::PartitionDegenerate(format!("alpha must be positive, got {alpha}")));
    }
    if labels.len() < k {
        return Err(Error::PartitionDegenerate(format!(
            "{} rows cannot fill {k} nodes",
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }

    for attempt in 0..=MAX_PARTITION_RETRIES {
        let mut nodes: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (c, idx) in by_class.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let mut idx = idx.clone();
            idx.shuffle(&mut rng_from(&[seed, attempt, c as u64, 0x5F]));
            let p = if k == 1 {
                vec![1.0]
            } else {
                dirichlet_draw(alpha, k, &[seed, attempt, c as u64, 0xD1])
            };
            let mut start = 0;
            for (node, n) in apportion(idx.len(), &p).into_iter().enumerate() {
                nodes[node].extend_from_slice(&idx[start..start + n]);
                start += n;
            }
        }
        if nodes.iter().all(|n| !n.is_empty()) {
            for n in &mut nodes {
                n.sort_unstable();
            }
            return Ok(Partition {
                node_indices: nodes,
                alpha,
            });
        }
    }
    Err(Error::PartitionDegenerate(format!(
        "a node stayed empty after {MAX_PARTITION_RETRIES} redraws (alpha={alpha}, k={k})"
    )))
}

fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>()
}

/// Generalized Jensen-Shannon divergence among the nodes' class
/// distributions: equal node weights, base-2 entropies, divided by
/// `log2(K)` so the result lies in `[0, 1]`.
pub fn jsd_heterogeneity(per_node_class_counts: &[Vec<usize>]) -> Result<f64> {
    let k = per_node_class_counts.len();
    if k < 2 {
        return Err(Error::UndefinedDistribution(format!("need at least 2 nodes, got {k}")));
    }
    let dists = per_node_class_counts
        .iter()
        .enumerate()
        .map(|(i, counts)| {
            let total: usize = counts.iter().sum();
            if total == 0 {
                return Err(Error::UndefinedDistribution(format!("node {i} holds no samples")));
            }
            Ok(counts.iter().map(|&n| n as f64 / total as f64).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let n_classes = dists.iter().map(Vec::len).max().unwrap_or(0);
    let mut mixture = vec![0.0; n_classes];
    for d in &dists {
        for (m, p) in mixture.iter_mut().zip(d) {
            *m += p / k as f64;
        }
    }
    let mean_entropy = dists.iter().map(|d| entropy_bits(d)).sum::<f64>() / k as f64;
    let jsd = (entropy_bits(&mixture) - mean_entropy) / (k as f64).log2();
    Ok(jsd.clamp(0.0, 1.0))
}
