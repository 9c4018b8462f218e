//! Grid orchestration: alphas × repetitions × proposals.
//!
//! Randomness in a cell comes from three seeds:
//! - split and partition use `mix(seed, rep)`, shared by every alpha, so
//!   that a repetition sees the same split and the same underlying uniforms
//!   in its Dirichlet draws at every heterogeneity level;
//! - degradation and optimizer starts use `mix(seed, alpha index, rep)`.

mod config;
mod output;
mod verify;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    DatasetSource, ExperimentConfig, Proposal, SplitFractions, DEFAULT_ALPHAS, DEFAULT_REPS, DEFAULT_SEED,
    OVERRIDE_KEYS,
};
pub use output::{
    emit_plot_data, emit_results_csv, format_results_csv, format_summary, parse_results_csv, read_models,
    read_results_csv, read_traces, write_outputs,
    write_traces, ALIGNMENT_FILE, CONFIG_FILE, DENSITIES_FILE, DENSITY_POINTS, GRADIENT_FILE, MODELS_DIR,
    PLOTS_DIR, RESULTS_FILE, SUMMARY_FILE, TRACES_FILE, TRAJECTORIES_FILE, VERIFICATION_FILE,
};
pub use verify::{verify, verify_dir, Check, VerificationReport, CHECK_NAMES};

use crate::data::{degrade, CategoryRemap, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{f1_macro, mcnemar_yates, McNemarResult};
use crate::governance::IccPrior;
use crate::local_model::{fit_hybrid, HybridModel, DEFAULT_SMOOTHING};
use crate::mog::{MoGEnsemble, NodeScores, WeightVector};
use crate::partition::{dirichlet_partition, stratified_split_indices, PartitionReport};
use crate::rng::mix_seed;
use crate::weight_learning::{
    learn_weights_icc, weights_entropy, weights_fedavg, OptimizationTrace, OptimizerConfig,
};

const SPLIT_TAG: u64 = 0x5B117;
const PARTITION_TAG: u64 = 0xD1C4;
const DEGRADE_TAG: u64 = 0xDE6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub alpha: f64,
    pub rep: usize,
    pub proposal: Proposal,
    pub f1_macro: f64,
    pub anll: f64,
    pub jsd: f64,
    /// Empty for proposal C.
    pub weights: Vec<f64>,
    /// Set on proposal A records when B also ran.
    pub mcnemar_p_vs_b: Option<f64>,
    pub runtime_ms: Option<f64>,
}

/// Per-cell diagnostics kept beside the records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTrace {
    pub alpha: f64,
    pub rep: usize,
    pub partition: PartitionReport,
    pub node_sizes: Vec<usize>,
    pub n_test: usize,
    pub optimization: Option<OptimizationTrace>,
    pub mcnemar: Option<McNemarResult>,
    /// Every mixture score was finite or the absent-class sentinel.
    pub mog_scores_ok: bool,
}

#[derive(Clone, Debug)]
pub struct CellOutput {
    pub records: Vec<ExperimentRecord>,
    pub trace: CellTrace,
    pub models: Vec<HybridModel>,
}

#[derive(Clone, Debug)]
pub struct GridOutput {
    pub records: Vec<ExperimentRecord>,
    pub traces: Vec<CellTrace>,
    /// Local models of the reference cell (see [`reference_cell`]).
    pub reference_models: Vec<HybridModel>,
}

/// The cell whose models are exported: first repetition at the largest alpha.
pub fn reference_cell(config: &ExperimentConfig) -> (usize, usize) {
    (config.alphas.len() - 1, 0)
}

pub fn cell_seed(master: u64, alpha_index: usize, rep: usize) -> u64 {
    mix_seed(&[master, alpha_index as u64, rep as u64])
}

/// Split and partition inputs of one repetition: the node index sets into
/// the training split at `alpha`, and the three splits with categorical
/// codes re-fitted on the training split.
pub struct CellData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub node_indices: Vec<Vec<usize>>,
    pub report: PartitionReport,
}

pub fn prepare_cell(config: &ExperimentConfig, data: &Dataset, alpha: f64, rep: usize) -> Result<CellData> {
    let split_cfg = config.split.with_seed(mix_seed(&[config.seed, rep as u64, SPLIT_TAG]))?;
    let idx = stratified_split_indices(data.labels(), data.n_classes(), &split_cfg)?;
    let train_raw = data.select(&idx.train);
    let remap = CategoryRemap::fit(&train_raw);
    let train = remap.apply(&train_raw)?;
    let val = remap.apply(&data.select(&idx.val))?;
    let test = remap.apply(&data.select(&idx.test))?;
    let partition = dirichlet_partition(
        train.labels(),
        config.k(),
        alpha,
        mix_seed(&[config.seed, rep as u64, PARTITION_TAG]),
    )?;
    let report = partition.report(train.labels(), train.n_classes())?;
    Ok(CellData {
        train,
        val,
        test,
        node_indices: partition.node_indices,
        report,
    })
}

struct Evaluated {
    f1: f64,
    anll: f64,
    predictions: Vec<usize>,
    scores_ok: bool,
}

fn evaluate(scores: &NodeScores, weights: &[f64], test: &Dataset) -> Result<Evaluated> {
    let predictions = scores.predict(weights)?;
    Ok(Evaluated {
        f1: f1_macro(test.labels(), &predictions, test.n_classes())?,
        anll: scores.anll(weights)?,
        scores_ok: scores.all_scores_valid(weights)?,
        predictions,
    })
}

/// Runs every configured proposal on one (alpha, rep) cell.
pub fn run_cell(config: &ExperimentConfig, data: &Dataset, alpha_index: usize, rep: usize) -> Result<CellOutput> {
    let alpha = *config
        .alphas
        .get(alpha_index)
        .ok_or_else(|| Error::Config(format!("alpha index {alpha_index} out of range")))?;
    run_cell_inner(config, data, alpha_index, rep).map_err(|e| Error::Cell {
        alpha,
        rep,
        source: Box::new(e),
    })
}

fn run_cell_inner(config: &ExperimentConfig, data: &Dataset, alpha_index: usize, rep: usize) -> Result<CellOutput> {
    let alpha = config.alphas[alpha_index];
    let seed = cell_seed(config.seed, alpha_index, rep);
    let cell = prepare_cell(config, data, alpha, rep)?;
    let k = config.k();
    let noise = config.dataset.node_noise(k);

    let started = Instant::now();
    let locals = cell
        .node_indices
        .iter()
        .enumerate()
        .map(|(node, idx)| degrade(&cell.train.select(idx), noise[node], mix_seed(&[seed, node as u64, DEGRADE_TAG])))
        .collect::<Result<Vec<_>>>()?;
    let models = locals
        .iter()
        .map(|d| fit_hybrid(d, DEFAULT_SMOOTHING))
        .collect::<Result<Vec<_>>>()?;
    let node_scores = NodeScores::compute(&models, &cell.test)?;
    let shared_ms = started.elapsed().as_secs_f64() * 1e3;

    let dataset = config.dataset_name();
    let mut records = Vec::with_capacity(config.proposals.len());
    let mut scores_ok = true;
    let mut optimization = None;
    let mut preds_a = None;
    let mut preds_b = None;
    for &proposal in &config.proposals {
        let started = Instant::now();
        let (weights, eval) = match proposal {
            Proposal::C => {
                let pooled = fit_hybrid(&cell.train, DEFAULT_SMOOTHING)?;
                let scores = NodeScores::compute(std::slice::from_ref(&pooled), &cell.test)?;
                (Vec::new(), evaluate(&scores, &[1.0], &cell.test)?)
            }
            Proposal::B => {
                let sizes: Vec<usize> = locals.iter().map(Dataset::n_rows).collect();
                let w = weights_fedavg(&sizes)?.into_vec();
                let eval = evaluate(&node_scores, &w, &cell.test)?;
                (w, eval)
            }
            Proposal::E => {
                let counts: Vec<Vec<usize>> = locals.iter().map(Dataset::class_counts).collect();
                let w = weights_entropy(&counts)?.into_vec();
                let eval = evaluate(&node_scores, &w, &cell.test)?;
                (w, eval)
            }
            Proposal::A => {
                let prior = IccPrior::from_profiles(&config.profiles)?;
                let ensemble = MoGEnsemble::new(models.clone(), WeightVector::uniform(k))?;
                let opt = OptimizerConfig {
                    seed,
                    ..config.optimizer
                };
                let (w, trace) = learn_weights_icc(&ensemble, &cell.val, &prior, &opt)?;
                optimization = Some(trace);
                let w = w.into_vec();
                let eval = evaluate(&node_scores, &w, &cell.test)?;
                (w, eval)
            }
        };
        let mut elapsed = started.elapsed().as_secs_f64() * 1e3;
        if proposal.uses_weights() {
            elapsed += shared_ms;
        }
        scores_ok &= eval.scores_ok;
        match proposal {
            Proposal::A => preds_a = Some(eval.predictions),
            Proposal::B => preds_b = Some(eval.predictions),
            _ => {}
        }
        records.push(ExperimentRecord {
            dataset: dataset.clone(),
            alpha,
            rep,
            proposal,
            f1_macro: eval.f1,
            anll: eval.anll,
            jsd: cell.report.jsd,
            weights,
            mcnemar_p_vs_b: None,
            runtime_ms: config.record_timing.then_some(elapsed),
        });
    }

    let mcnemar = match (&preds_a, &preds_b) {
        (Some(a), Some(b)) => Some(mcnemar_yates(cell.test.labels(), a, b)?),
        _ => None,
    };
    if let Some(m) = &mcnemar {
        for r in records.iter_mut().filter(|r| r.proposal == Proposal::A) {
            r.mcnemar_p_vs_b = Some(m.p_value);
        }
    }

    Ok(CellOutput {
        records,
        trace: CellTrace {
            alpha,
            rep,
            node_sizes: cell.node_indices.iter().map(Vec::len).collect(),
            partition: cell.report,
            n_test: cell.test.n_rows(),
            optimization,
            mcnemar,
            mog_scores_ok: scores_ok,
        },
        models,
    })
}

/// Runs all cells, `jobs` at a time (all cores when `None`). Output order
/// is (alpha, rep, proposal) regardless of scheduling.
pub fn run_grid(config: &ExperimentConfig, jobs: Option<usize>) -> Result<GridOutput> {
    config.validate()?;
    let data = config.dataset.load(config.seed)?;
    run_grid_on(config, &data, jobs)
}

pub fn run_grid_on(config: &ExperimentConfig, data: &Dataset, jobs: Option<usize>) -> Result<GridOutput> {
    let cells: Vec<(usize, usize)> = (0..config.alphas.len())
        .flat_map(|a| (0..config.reps).map(move |r| (a, r)))
        .collect();
    let work = || {
        cells
            .par_iter()
            .map(|&(a, r)| run_cell(config, data, a, r))
            .collect::<Vec<Result<CellOutput>>>()
    };
    let outputs = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
            .install(work),
        None => work(),
    };

    let reference = reference_cell(config);
    let mut grid = GridOutput {
        records: Vec::with_capacity(cells.len() * config.proposals.len()),
        traces: Vec::with_capacity(cells.len()),
        reference_models: Vec::new(),
    };
    for (cell, out) in cells.iter().zip(outputs) {
        let out = out?;
        grid.records.extend(out.records);
        grid.traces.push(out.trace);
        if *cell == reference {
            grid.reference_models = out.models;
        }
    }
    Ok(grid)
}

/// Runs the grid, writes every output file into `out_dir` and verifies the
/// written results.
pub fn run_and_verify(
    config: &ExperimentConfig,
    out_dir: impl AsRef<Path>,
    jobs: Option<usize>,
) -> Result<VerificationReport> {
    let grid = run_grid(config, jobs)?;
    write_outputs(config, &grid, out_dir.as_ref())?;
    let report = verify_dir(out_dir.as_ref())?;
    report.write(out_dir.as_ref().join(VERIFICATION_FILE))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthSpec;
    use crate::governance::NodeProfile;

    pub(crate) fn small_config() -> ExperimentConfig {
        let spec = SynthSpec::new(400, 2, 1, 2).with_noise(vec![0.0, 0.1, 0.3]);
        let mut c = ExperimentConfig::new(DatasetSource::Synthetic(spec), NodeProfile::reference_nodes());
        c.alphas = vec![0.1, 1.0];
        c.reps = 2;
        c.optimizer.max_iters = 100;
        c
    }

    #[test]
    fn grid_shape_and_order() {
        let c = small_config();
        let g = run_grid(&c, Some(2)).unwrap();
        assert_eq!(g.records.len(), 2 * 2 * 4);
        assert_eq!(g.traces.len(), 4);
        let keys: Vec<_> = g.records.iter().map(|r| (r.alpha.to_bits(), r.rep, r.proposal)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(g.reference_models.len(), 3);
        for r in &g.records {
            assert_eq!(r.weights.is_empty(), r.proposal == Proposal::C);
            assert_eq!(r.mcnemar_p_vs_b.is_some(), r.proposal == Proposal::A);
            assert!(r.runtime_ms.is_none());
        }
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let c = small_config();
        let a = run_grid(&c, Some(1)).unwrap();
        let b = run_grid(&c, Some(3)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.traces, b.traces);
    }

    #[test]
    fn fedavg_on_equal_nodes() {
        // alpha large enough for near-equal shares; check weights match sizes
        let mut c = small_config();
        c.proposals = vec![Proposal::B];
        let g = run_grid(&c, Some(1)).unwrap();
        for (r, t) in g.records.iter().zip(&g.traces) {
            let total: usize = t.node_sizes.iter().sum();
            for (w, &n) in r.weights.iter().zip(&t.node_sizes) {
                assert_eq!(*w, n as f64 / total as f64);
            }
        }
    }

    #[test]
    fn proposals_share_split_and_partition_within_rep() {
        let c = small_config();
        let data = c.dataset.load(c.seed).unwrap();
        let x = prepare_cell(&c, &data, 0.1, 0).unwrap();
        let y = prepare_cell(&c, &data, 1.0, 0).unwrap();
        assert_eq!(x.train.labels(), y.train.labels());
        assert_eq!(x.test.labels(), y.test.labels());
        let z = prepare_cell(&c, &data, 0.1, 1).unwrap();
        assert_ne!(x.train.labels(), z.train.labels());
    }

    #[test]
    fn failed_cell_names_alpha_and_rep() {
        let mut c = small_config();
        // more nodes than a tiny dataset can populate
        if let DatasetSource::Synthetic(spec) = &mut c.dataset {
            spec.n_rows = 4;
            spec.node_noise.clear();
        }
        let err = run_grid(&c, Some(1)).unwrap_err();
        assert!(matches!(err, Error::Cell { .. }), "{err}");
    }
}
