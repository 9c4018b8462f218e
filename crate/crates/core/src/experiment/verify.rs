//! The fifteen-point verification protocol run after every grid.
//!
//! Checks read the written results (six-decimal CSV), the cell traces and
//! the config echo, so a results directory can be verified on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Proposal, DEFAULT_ALPHAS, DEFAULT_REPS, DEFAULT_SEED};
use super::output::{
    fixed, format_results_csv, parse_results_csv, read_results_csv, read_traces, CONFIG_FILE, RESULTS_FILE,
    TRACES_FILE,
};
use super::{run_cell, CellTrace, ExperimentRecord, SplitFractions};
use crate::data::{CategoryMap, Dataset, FeatureSchema, Column, ColumnKind};
use crate::error::{Error, Result};
use crate::evaluation::McNemarResult;
use crate::governance::{compute_icc, IccPrior, NodeProfile};
use crate::local_model::{fit_hybrid, joint_log_scores};
use crate::data::Row;
use crate::weight_learning::OptimizerConfig;

pub const CHECK_NAMES: [&str; 15] = [
    "icc_table",
    "seed_reproducibility",
    "jsd_alpha_order",
    "ood_encoding",
    "mog_scores_finite",
    "metric_ranges",
    "weights_sum_to_one",
    "mcnemar_inputs",
    "jsd_rank_gradient",
    "icc_alignment",
    "no_nan_inf",
    "grid_completeness",
    "config_echo",
    "weight_floor",
    "trace_sanity",
];

/// Reference ICC values of the three built-in profiles.
const TABLE_ICC: [f64; 3] = [0.393, 0.154, 0.042];
const ICC_TOLERANCE: f64 = 0.0005;
const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
/// Resolution of printed six-decimal values.
const PRINT_RESOLUTION: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed_count(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn all_passed(&self) -> bool {
        self.passed_count() == self.checks.len()
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// Human-readable lines followed by `key=value` lines.
    pub fn render(&self) -> String {
        let mut out = format!("verification: {}/{} passed\n", self.passed_count(), self.checks.len());
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(out, "[{tag}] {:2} {}: {}", c.id, c.name, c.message).unwrap();
        }
        out.push('\n');
        for c in &self.checks {
            let v = if c.passed { "pass" } else { "fail" };
            writeln!(out, "check.{:02}.{}={v}", c.id, c.name).unwrap();
        }
        writeln!(out, "passed={}", self.passed_count()).unwrap();
        writeln!(out, "total={}", self.checks.len()).unwrap();
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

type Outcome = std::result::Result<String, String>;

fn ok(msg: impl Into<String>) -> Outcome {
    Ok(msg.into())
}

fn fail(msg: impl Into<String>) -> Outcome {
    Err(msg.into())
}

fn key(r: &ExperimentRecord) -> (String, usize, Proposal) {
    (fixed(r.alpha), r.rep, r.proposal)
}

fn check_icc_table() -> Outcome {
    let iccs: Vec<f64> = NodeProfile::reference_nodes().iter().map(compute_icc).collect();
    for (got, want) in iccs.iter().zip(TABLE_ICC) {
        if (got - want).abs() > ICC_TOLERANCE {
            return fail(format!("ICC {got:.5} differs from {want} by more than {ICC_TOLERANCE}"));
        }
    }
    ok(format!("ICC = ({:.3}, {:.3}, {:.3})", iccs[0], iccs[1], iccs[2]))
}

fn check_reproducibility(config: &ExperimentConfig, records: &[ExperimentRecord], data: &Dataset) -> Outcome {
    let rerun = run_cell(config, data, 0, 0).map_err(|e| format!("re-run failed: {e}"))?;
    let text = format_results_csv(&rerun.records, config.k()).map_err(|e| e.to_string())?;
    let (fresh, _) = parse_results_csv(text.as_bytes(), Path::new(RESULTS_FILE)).map_err(|e| e.to_string())?;
    let stored: BTreeMap<_, _> = records.iter().map(|r| (key(r), r)).collect();
    let mut compared = 0;
    for mut r in fresh {
        let Some(&s) = stored.get(&key(&r)) else {
            continue;
        };
        let mut s = s.clone();
        r.runtime_ms = None;
        s.runtime_ms = None;
        if r != s {
            return fail(format!(
                "cell (alpha={}, rep=0) proposal {} differs on re-run",
                fixed(r.alpha),
                r.proposal
            ));
        }
        compared += 1;
    }
    ok(format!("cell (alpha={}, rep=0) re-run matches {compared} records", fixed(config.alphas[0])))
}

fn mean_jsd_by_alpha(config: &ExperimentConfig, traces: &[CellTrace]) -> Vec<(f64, Option<f64>)> {
    config
        .alphas
        .iter()
        .map(|&a| {
            let v: Vec<f64> = traces
                .iter()
                .filter(|t| fixed(t.alpha) == fixed(a))
                .map(|t| t.partition.jsd)
                .collect();
            (a, (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64))
        })
        .collect()
}

fn check_jsd_order(config: &ExperimentConfig, traces: &[CellTrace]) -> Outcome {
    let means: Vec<(f64, f64)> = mean_jsd_by_alpha(config, traces)
        .into_iter()
        .filter_map(|(a, m)| m.map(|m| (a, m)))
        .collect();
    for w in means.windows(2) {
        if w[1].1 > w[0].1 + 1e-12 {
            return fail(format!(
                "mean JSD rises from {:.4} at alpha {} to {:.4} at alpha {}",
                w[0].1, w[0].0, w[1].1, w[1].0
            ));
        }
    }
    let shown: Vec<String> = means.iter().map(|(_, m)| format!("{m:.3}")).collect();
    ok(format!("mean JSD by alpha: {}", shown.join(" ≥ ")))
}

/// Encodes an unseen category with a fixed map and scores it with a small
/// fitted model.
fn check_ood() -> Outcome {
    let schema = FeatureSchema::new(
        vec![
            Column::new("proto", ColumnKind::Categorical),
            Column::new("bytes", ColumnKind::Numerical),
            Column::new("label", ColumnKind::Label),
        ],
        2,
    )
    .map_err(|e| e.to_string())?;
    let map = CategoryMap::from_parts(vec![vec!["tcp".into(), "udp".into()]], vec!["0".into(), "1".into()]);
    let code = map.encode(0, "icmp");
    if code != 2 {
        return fail(format!("unseen category encoded as {code}, expected n_cats = 2"));
    }
    let train = Dataset::new(
        schema,
        vec![2],
        vec![0, 1, 0, 1, 1, 0],
        vec![1.0, 2.0, 1.5, 3.0, 2.5, 0.5],
        vec![0, 1, 0, 1, 1, 0],
    )
    .map_err(|e| e.to_string())?;
    let model = fit_hybrid(&train, 1.0).map_err(|e| e.to_string())?;
    let known = Row {
        categorical: &[0],
        numerical: &[1.2],
    };
    let unseen = Row {
        categorical: &[code],
        numerical: &[1.2],
    };
    let before = joint_log_scores(&model, &known).map_err(|e| e.to_string())?;
    let ood = joint_log_scores(&model, &unseen).map_err(|e| e.to_string())?;
    let after = joint_log_scores(&model, &known).map_err(|e| e.to_string())?;
    if before.iter().zip(&after).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return fail("known-category scores changed after scoring an unseen value");
    }
    for c in 0..2 {
        let table = &model.class(c).expect("both classes present").cat_log_probs[0];
        let want = table[2] - table[0];
        if ((ood[c] - before[c]) - want).abs() > 1e-9 {
            return fail(format!("class {c}: unseen value does not use slot n_cats"));
        }
    }
    ok("unseen category → code n_cats; known scores bitwise unchanged")
}

fn check_scores(traces: &[CellTrace]) -> Outcome {
    match traces.iter().find(|t| !t.mog_scores_ok) {
        Some(t) => fail(format!("non-finite mixture score in cell (alpha={}, rep={})", fixed(t.alpha), t.rep)),
        None => ok(format!("{} cells with finite or sentinel scores", traces.len())),
    }
}

fn check_metric_ranges(records: &[ExperimentRecord]) -> Outcome {
    for r in records {
        if r.f1_macro.is_finite() && !(0.0..=1.0).contains(&r.f1_macro) {
            return fail(format!("F1 {} outside [0, 1] at {:?}", r.f1_macro, key(r)));
        }
        if r.anll.is_finite() && r.anll < 0.0 {
            return fail(format!("negative ANLL {} at {:?}", r.anll, key(r)));
        }
    }
    ok("F1 in [0, 1], ANLL ≥ 0")
}

fn check_weight_sums(records: &[ExperimentRecord]) -> Outcome {
    let mut n = 0;
    for r in records.iter().filter(|r| !r.weights.is_empty()) {
        let s: f64 = r.weights.iter().sum();
        if !((s - 1.0).abs() <= WEIGHT_SUM_TOLERANCE) {
            return fail(format!("weights of {:?} sum to {s}", key(r)));
        }
        n += 1;
    }
    ok(format!("{n} weight vectors sum to 1"))
}

fn check_mcnemar(config: &ExperimentConfig, records: &[ExperimentRecord], traces: &[CellTrace]) -> Outcome {
    let both = config.proposals.contains(&Proposal::A) && config.proposals.contains(&Proposal::B);
    let a_records: BTreeMap<_, _> = records
        .iter()
        .filter(|r| r.proposal == Proposal::A)
        .map(|r| ((fixed(r.alpha), r.rep), r))
        .collect();
    let mut n = 0;
    for t in traces {
        let Some(m) = &t.mcnemar else {
            if both {
                return fail(format!("cell (alpha={}, rep={}) lacks a McNemar test", fixed(t.alpha), t.rep));
            }
            continue;
        };
        let again = McNemarResult::from_counts(m.b, m.c);
        if m.b + m.c > t.n_test {
            return fail(format!("b + c = {} exceeds {} test rows", m.b + m.c, t.n_test));
        }
        if !(0.0..=1.0).contains(&m.p_value) || again.p_value != m.p_value || again.chi2 != m.chi2 {
            return fail(format!("inconsistent McNemar result {m:?}"));
        }
        if let Some(r) = a_records.get(&(fixed(t.alpha), t.rep)) {
            match r.mcnemar_p_vs_b {
                Some(p) if (p - m.p_value).abs() <= PRINT_RESOLUTION => {}
                other => {
                    return fail(format!(
                        "record p-value {other:?} disagrees with trace {} at (alpha={}, rep={})",
                        m.p_value,
                        fixed(t.alpha),
                        t.rep
                    ))
                }
            }
        }
        n += 1;
    }
    ok(format!("{n} McNemar tests consistent"))
}

/// Spearman correlation with average ranks for ties; `None` when either
/// side is constant.
fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &t in &idx[i..=j] {
                r[t] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn check_rank_gradient(config: &ExperimentConfig, traces: &[CellTrace]) -> Outcome {
    if config.alphas.len() < 2 {
        return ok("single alpha; nothing to order");
    }
    let mut rhos = Vec::new();
    for rep in 0..config.reps {
        let (a, j): (Vec<f64>, Vec<f64>) = traces
            .iter()
            .filter(|t| t.rep == rep)
            .map(|t| (t.alpha, t.partition.jsd))
            .unzip();
        if a.len() >= 2 {
            rhos.push(spearman(&a, &j).unwrap_or(0.0));
        }
    }
    if rhos.is_empty() {
        return fail("no repetition covers two alphas");
    }
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    if mean < 0.0 {
        ok(format!("mean per-rep Spearman(alpha, JSD) = {mean:.3}"))
    } else {
        fail(format!("mean per-rep Spearman(alpha, JSD) = {mean:.3} is not negative"))
    }
}

fn check_alignment(config: &ExperimentConfig, records: &[ExperimentRecord]) -> Outcome {
    if !config.proposals.contains(&Proposal::A) {
        return ok("proposal A not run");
    }
    let prior = IccPrior::from_profiles(&config.profiles).map_err(|e| e.to_string())?;
    let by = |cmp: fn(&f64, &f64) -> bool| {
        (0..prior.icc.len())
            .reduce(|best, j| if cmp(&prior.icc[j], &prior.icc[best]) { j } else { best })
            .expect("non-empty profiles")
    };
    let (hi, lo) = (by(|a, b| a > b), by(|a, b| a < b));
    let ws: Vec<&Vec<f64>> = records
        .iter()
        .filter(|r| r.proposal == Proposal::A && r.weights.len() == config.k() && r.weights.iter().all(|w| w.is_finite()))
        .map(|r| &r.weights)
        .collect();
    if ws.is_empty() {
        return fail("no proposal A weights to compare");
    }
    let mean = |j: usize| ws.iter().map(|w| w[j]).sum::<f64>() / ws.len() as f64;
    let (wh, wl) = (mean(hi), mean(lo));
    let names = (config.profiles[hi].name(), config.profiles[lo].name());
    if wh > wl {
        ok(format!("mean A weight {} {wh:.3} > {} {wl:.3}", names.0, names.1))
    } else {
        fail(format!("mean A weight {} {wh:.3} ≤ {} {wl:.3}", names.0, names.1))
    }
}

fn check_finite(records: &[ExperimentRecord]) -> Outcome {
    for r in records {
        let mut values = vec![r.alpha, r.f1_macro, r.anll, r.jsd];
        values.extend(&r.weights);
        values.extend(r.mcnemar_p_vs_b);
        values.extend(r.runtime_ms);
        if values.iter().any(|v| !v.is_finite()) {
            return fail(format!("non-finite value in record {:?}", key(r)));
        }
    }
    ok(format!("{} records finite", records.len()))
}

fn check_completeness(config: &ExperimentConfig, records: &[ExperimentRecord], traces: &[CellTrace]) -> Outcome {
    let mut seen: BTreeMap<(String, usize, Proposal), usize> = BTreeMap::new();
    for r in records {
        *seen.entry(key(r)).or_default() += 1;
    }
    let expected = config.n_cells() * config.proposals.len();
    for a in &config.alphas {
        for rep in 0..config.reps {
            for &p in &config.proposals {
                match seen.remove(&(fixed(*a), rep, p)) {
                    Some(1) => {}
                    Some(n) => return fail(format!("(alpha={}, rep={rep}, {p}) appears {n} times", fixed(*a))),
                    None => return fail(format!("(alpha={}, rep={rep}, {p}) missing", fixed(*a))),
                }
            }
        }
    }
    if let Some((k, _)) = seen.iter().next() {
        return fail(format!("unexpected record {k:?}"));
    }
    let cells: BTreeSet<(String, usize)> = traces.iter().map(|t| (fixed(t.alpha), t.rep)).collect();
    if traces.len() != config.n_cells() || cells.len() != config.n_cells() {
        return fail(format!("{} cell traces for {} cells", traces.len(), config.n_cells()));
    }
    ok(format!("{} records = {} alphas × {} reps × {} proposals", expected, config.alphas.len(), config.reps, config.proposals.len()))
}

fn check_config_echo(config: &ExperimentConfig, records: &[ExperimentRecord], k: usize, traces: &[CellTrace]) -> Outcome {
    let defaults = OptimizerConfig::default();
    let table: [(&str, bool); 8] = [
        ("seed", config.seed == DEFAULT_SEED),
        ("alphas", config.alphas == DEFAULT_ALPHAS),
        ("reps", config.reps == DEFAULT_REPS),
        ("lambda", config.optimizer.lambda == defaults.lambda),
        ("delta", config.optimizer.floor_delta == defaults.floor_delta),
        ("max_iters", config.optimizer.max_iters == defaults.max_iters),
        ("n_starts", config.optimizer.n_starts == defaults.n_starts),
        ("split", config.split == SplitFractions::default()),
    ];
    for (name, matches) in table {
        if !config.explicit.contains(name) && !matches {
            return fail(format!("`{name}` was left at its default but differs from it"));
        }
    }
    if k != config.k() {
        return fail(format!("{k} weight columns for {} nodes", config.k()));
    }
    let name = config.dataset_name();
    if let Some(r) = records.iter().find(|r| r.dataset != name) {
        return fail(format!("record dataset `{}` differs from `{name}`", r.dataset));
    }
    let alphas: BTreeSet<String> = records.iter().map(|r| fixed(r.alpha)).collect();
    let want: BTreeSet<String> = config.alphas.iter().map(|&a| fixed(a)).collect();
    if alphas != want {
        return fail("recorded alphas differ from the configured grid");
    }
    let reps: BTreeSet<usize> = records.iter().map(|r| r.rep).collect();
    if reps != (0..config.reps).collect() {
        return fail("recorded repetitions differ from the configured count");
    }
    let proposals: BTreeSet<Proposal> = records.iter().map(|r| r.proposal).collect();
    if proposals != config.proposals.iter().copied().collect() {
        return fail("recorded proposals differ from the configured set");
    }
    if let Some(t) = traces
        .iter()
        .filter_map(|t| t.optimization.as_ref())
        .find(|o| o.starts.len() != config.optimizer.n_starts)
    {
        return fail(format!("optimizer used {} starts, configured {}", t.starts.len(), config.optimizer.n_starts));
    }
    let overridden: Vec<&str> = config.explicit.iter().map(String::as_str).collect();
    if overridden.is_empty() {
        ok("records match the configured grid; all parameters at their defaults")
    } else {
        ok(format!("records match the configured grid; explicitly set: {}", overridden.join(", ")))
    }
}

fn check_floor(config: &ExperimentConfig, records: &[ExperimentRecord], traces: &[CellTrace]) -> Outcome {
    let delta = config.optimizer.floor_delta;
    for r in records.iter().filter(|r| r.proposal == Proposal::A) {
        if let Some(w) = r.weights.iter().find(|&&w| w < delta - PRINT_RESOLUTION) {
            return fail(format!("weight {w} below floor {delta} at {:?}", key(r)));
        }
    }
    for t in traces {
        if let Some(o) = &t.optimization {
            let w = &o.starts[o.chosen].final_weights;
            if w.iter().any(|&x| x < delta - 1e-12) {
                return fail(format!("traced weights below floor in cell (alpha={}, rep={})", fixed(t.alpha), t.rep));
            }
        }
    }
    ok(format!("learned weights ≥ δ = {delta}"))
}

fn check_traces(traces: &[CellTrace]) -> Outcome {
    let mut n = 0;
    for t in traces {
        let Some(o) = &t.optimization else { continue };
        if !o.chosen_is_minimal() {
            return fail(format!("chosen start is not minimal in cell (alpha={}, rep={})", fixed(t.alpha), t.rep));
        }
        if o.starts.iter().any(|s| !s.final_objective.is_finite()) {
            return fail(format!("non-finite objective in cell (alpha={}, rep={})", fixed(t.alpha), t.rep));
        }
        n += 1;
    }
    ok(format!("{n} optimizations chose their best start"))
}

/// Runs all fifteen checks. `data` is the materialized dataset of `config`,
/// used to re-run the first cell.
pub fn verify(
    config: &ExperimentConfig,
    records: &[ExperimentRecord],
    k: usize,
    traces: &[CellTrace],
    data: &Dataset,
) -> VerificationReport {
    let outcomes = [
        check_icc_table(),
        check_reproducibility(config, records, data),
        check_jsd_order(config, traces),
        check_ood(),
        check_scores(traces),
        check_metric_ranges(records),
        check_weight_sums(records),
        check_mcnemar(config, records, traces),
        check_rank_gradient(config, traces),
        check_alignment(config, records),
        check_finite(records),
        check_completeness(config, records, traces),
        check_config_echo(config, records, k, traces),
        check_floor(config, records, traces),
        check_traces(traces),
    ];
    VerificationReport {
        checks: outcomes
            .into_iter()
            .enumerate()
            .map(|(i, o)| {
                let (passed, message) = match o {
                    Ok(m) => (true, m),
                    Err(m) => (false, m),
                };
                Check {
                    id: i + 1,
                    name: CHECK_NAMES[i].to_string(),
                    passed,
                    message,
                }
            })
            .collect(),
    }
}

/// Verifies a results directory written by a grid run.
pub fn verify_dir(dir: impl AsRef<Path>) -> Result<VerificationReport> {
    let dir = dir.as_ref();
    let config_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config = ExperimentConfig::from_echo_str(&text)?;
    let (records, k) = read_results_csv(dir.join(RESULTS_FILE))?;
    if records.is_empty() {
        return Err(Error::Format {
            path: dir.join(RESULTS_FILE),
            message: "no records".into(),
        });
    }
    let traces = read_traces(dir.join(TRACES_FILE))?;
    let data = config.dataset.load(config.seed)?;
    Ok(verify(&config, &records, k, &traces, &data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), None);
        // ties take average ranks: y ranks (1.5, 1.5, 3)
        let r = spearman(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0]).unwrap();
        assert!((r - 0.8660254037844387).abs() < 1e-12);
    }

    #[test]
    fn data_free_checks_pass() {
        assert!(check_icc_table().is_ok());
        assert!(check_ood().is_ok());
    }

    #[test]
    fn render_has_key_values() {
        let report = VerificationReport {
            checks: vec![
                Check {
                    id: 1,
                    name: "icc_table".into(),
                    passed: true,
                    message: "fine".into(),
                },
                Check {
                    id: 2,
                    name: "seed_reproducibility".into(),
                    passed: false,
                    message: "bad".into(),
                },
            ],
        };
        let text = report.render();
        assert!(text.starts_with("verification: 1/2 passed"));
        assert!(text.contains("check.01.icc_table=pass"));
        assert!(text.contains("check.02.seed_reproducibility=fail"));
        assert!(text.contains("passed=1\ntotal=2"));
    }
}
