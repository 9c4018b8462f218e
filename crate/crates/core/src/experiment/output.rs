//! Results, traces and plot-data files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Proposal};
use super::{CellTrace, ExperimentRecord, GridOutput};
use crate::data::apportion;
use crate::error::{Error, Result};
use crate::evaluation::McNemarResult;
use crate::governance::{IccPrior, NodeProfile};
use crate::local_model::HybridModel;

pub const RESULTS_FILE: &str = "results.csv";
pub const TRACES_FILE: &str = "traces.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.tsv";
pub const VERIFICATION_FILE: &str = "verification.txt";
pub const MODELS_DIR: &str = "models";
pub const PLOTS_DIR: &str = "plots";
pub const GRADIENT_FILE: &str = "gradient.tsv";
pub const ALIGNMENT_FILE: &str = "alignment.tsv";
pub const TRAJECTORIES_FILE: &str = "trajectories.tsv";
pub const DENSITIES_FILE: &str = "densities.tsv";

pub const DENSITY_POINTS: usize = 200;
const DENSITY_HALF_WIDTH: f64 = 6.0;
const WEIGHT_UNITS: usize = 1_000_000;

const FIXED_COLUMNS: [&str; 7] = ["dataset", "alpha", "rep", "proposal", "f1_macro", "anll", "jsd"];

pub(crate) fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

/// Six-decimal weights whose printed values sum to exactly 1.
fn weight_cells(w: &[f64]) -> Vec<String> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        // not a simplex point; print as is
        return w.iter().map(|&x| fixed(x)).collect();
    }
    apportion(WEIGHT_UNITS, w)
        .into_iter()
        .map(|u| format!("{}.{:06}", u / WEIGHT_UNITS, u % WEIGHT_UNITS))
        .collect()
}

fn header(k: usize) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((1..=k).map(|i| format!("w_{i}")))
        .chain(["mcnemar_p_vs_B".to_string(), "runtime_ms".to_string()])
        .collect()
}

/// CSV text for `records` with `k` weight columns.
pub fn format_results_csv(records: &[ExperimentRecord], k: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Format {
        path: PathBuf::from(RESULTS_FILE),
        message: e.to_string(),
    };
    w.write_record(header(k)).map_err(to_err)?;
    for r in records {
        if !r.weights.is_empty() && r.weights.len() != k {
            return Err(Error::Shape(format!("record has {} weights, expected {k}", r.weights.len())));
        }
        let mut row = vec![
            r.dataset.clone(),
            fixed(r.alpha),
            r.rep.to_string(),
            r.proposal.to_string(),
            fixed(r.f1_macro),
            fixed(r.anll),
            fixed(r.jsd),
        ];
        if r.weights.is_empty() {
            row.extend(std::iter::repeat_n(String::new(), k));
        } else {
            row.extend(weight_cells(&r.weights));
        }
        row.push(r.mcnemar_p_vs_b.map(fixed).unwrap_or_default());
        row.push(r.runtime_ms.map(fixed).unwrap_or_default());
        w.write_record(&row).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format {
        path: PathBuf::from(RESULTS_FILE),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn emit_results_csv(records: &[ExperimentRecord], k: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_results_csv(records, k)?).map_err(|e| Error::io(path, e))
}

/// Parses a results file back into records and the node count.
pub fn read_results_csv(path: impl AsRef<Path>) -> Result<(Vec<ExperimentRecord>, usize)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_results_csv(file, path)
}

/// Parses results CSV text; `path` only labels errors.
pub fn parse_results_csv(input: impl std::io::Read, path: &Path) -> Result<(Vec<ExperimentRecord>, usize)> {
    let fmt_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let head: Vec<String> = reader
        .headers()
        .map_err(|e| fmt_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let k = head.len().saturating_sub(FIXED_COLUMNS.len() + 2);
    if head.len() < FIXED_COLUMNS.len() + 2 || head != header(k) {
        return Err(fmt_err(format!("unexpected header `{}`", head.join(","))));
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| fmt_err(e.to_string()))?;
        if row.len() != head.len() {
            return Err(fmt_err(format!("line {line}: {} fields, expected {}", row.len(), head.len())));
        }
        let num = |j: usize| -> Result<f64> {
            row[j]
                .trim()
                .parse::<f64>()
                .map_err(|_| fmt_err(format!("line {line}: `{}` in column {} is not a number", &row[j], head[j])))
        };
        let opt = |j: usize| -> Result<Option<f64>> {
            if row[j].trim().is_empty() {
                Ok(None)
            } else {
                num(j).map(Some)
            }
        };
        let weights = (7..7 + k).map(opt).collect::<Result<Vec<_>>>()?;
        let weights: Vec<f64> = if weights.iter().all(Option::is_none) {
            Vec::new()
        } else {
            weights
                .into_iter()
                .map(|w| w.ok_or_else(|| fmt_err(format!("line {line}: partially empty weights"))))
                .collect::<Result<_>>()?
        };
        records.push(ExperimentRecord {
            dataset: row[0].to_string(),
            alpha: num(1)?,
            rep: row[2]
                .trim()
                .parse()
                .map_err(|_| fmt_err(format!("line {line}: bad rep `{}`", &row[2])))?,
            proposal: row[3].parse().map_err(|_| fmt_err(format!("line {line}: bad proposal `{}`", &row[3])))?,
            f1_macro: num(4)?,
            anll: num(5)?,
            jsd: num(6)?,
            weights,
            mcnemar_p_vs_b: opt(7 + k)?,
            runtime_ms: opt(8 + k)?,
        });
    }
    Ok((records, k))
}

#[derive(Serialize, Deserialize)]
struct TracesFile {
    cells: Vec<CellTrace>,
}

pub fn write_traces(traces: &[CellTrace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&TracesFile {
        cells: traces.to_vec(),
    })
    .map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<CellTrace>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: TracesFile = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(file.cells)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Distinct alphas in first-seen order, compared by their printed value.
fn alphas_of(records: &[ExperimentRecord]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for r in records {
        if !out.iter().any(|a| fixed(*a) == fixed(r.alpha)) {
            out.push(r.alpha);
        }
    }
    out
}

fn mean_weights<'a>(records: impl Iterator<Item = &'a ExperimentRecord>, k: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; k];
    let mut n = 0usize;
    for r in records.filter(|r| r.weights.len() == k) {
        for (s, w) in sum.iter_mut().zip(&r.weights) {
            *s += w;
        }
        n += 1;
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

fn write_file(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the four plot-data files into `dir`.
///
/// - gradient: per (alpha, proposal) mean and sample std of F1-macro and ANLL
/// - alignment: per node, ICC, normalized prior and mean weight per proposal
/// - trajectories: per (alpha, node) mean learned weight of proposal A
/// - densities: for the first numerical feature, each node's per-class
///   Gaussian in standardized units on 200 points over mean ± 6 std
pub fn emit_plot_data(
    records: &[ExperimentRecord],
    profiles: &[NodeProfile],
    models: &[HybridModel],
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let k = profiles.len();
    let prior = IccPrior::from_profiles(profiles)?;
    let alphas = alphas_of(records);

    let mut text = String::from("alpha\tproposal\tn\tf1_mean\tf1_std\tanll_mean\tanll_std\n");
    for &alpha in &alphas {
        for p in Proposal::ALL {
            let cell: Vec<&ExperimentRecord> = records
                .iter()
                .filter(|r| r.proposal == p && fixed(r.alpha) == fixed(alpha))
                .collect();
            if cell.is_empty() {
                continue;
            }
            let f1: Vec<f64> = cell.iter().map(|r| r.f1_macro).collect();
            let anll: Vec<f64> = cell.iter().map(|r| r.anll).collect();
            let (fm, fs) = mean_std(&f1);
            let (am, as_) = mean_std(&anll);
            writeln!(
                text,
                "{}\t{p}\t{}\t{}\t{}\t{}\t{}",
                fixed(alpha),
                cell.len(),
                fixed(fm),
                fixed(fs),
                fixed(am),
                fixed(as_)
            )
            .unwrap();
        }
    }
    write_file(&dir.join(GRADIENT_FILE), text)?;

    let per_proposal: Vec<Option<Vec<f64>>> = [Proposal::A, Proposal::B, Proposal::E]
        .iter()
        .map(|&p| mean_weights(records.iter().filter(|r| r.proposal == p), k))
        .collect();
    let mut text = String::from("node\tname\ticc\tprior\tmean_weight_A\tmean_weight_B\tmean_weight_E\n");
    for (j, profile) in profiles.iter().enumerate() {
        let cells: Vec<String> = per_proposal
            .iter()
            .map(|m| m.as_ref().map(|w| fixed(w[j])).unwrap_or_default())
            .collect();
        writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}",
            j + 1,
            profile.name(),
            fixed(prior.icc[j]),
            fixed(prior.normalized.as_slice()[j]),
            cells.join("\t")
        )
        .unwrap();
    }
    write_file(&dir.join(ALIGNMENT_FILE), text)?;

    let mut text = String::from("alpha\tnode\tmean_weight_A\tprior\n");
    for &alpha in &alphas {
        let cell = records
            .iter()
            .filter(|r| r.proposal == Proposal::A && fixed(r.alpha) == fixed(alpha));
        if let Some(w) = mean_weights(cell, k) {
            for j in 0..k {
                writeln!(
                    text,
                    "{}\t{}\t{}\t{}",
                    fixed(alpha),
                    j + 1,
                    fixed(w[j]),
                    fixed(prior.normalized.as_slice()[j])
                )
                .unwrap();
            }
        }
    }
    write_file(&dir.join(TRAJECTORIES_FILE), text)?;

    let mut text = String::from("node\tclass\tfeature\tz\tdensity\n");
    let feature = 0;
    for (j, model) in models.iter().enumerate() {
        for c in model.classes_present() {
            let params = model.class(c).expect("present class");
            let (Some(&mu), Some(&var)) = (params.mean.get(feature), params.var.get(feature)) else {
                continue;
            };
            let sd = var.sqrt();
            let (lo, hi) = (mu - DENSITY_HALF_WIDTH * sd, mu + DENSITY_HALF_WIDTH * sd);
            for i in 0..DENSITY_POINTS {
                let z = lo + (hi - lo) * i as f64 / (DENSITY_POINTS - 1) as f64;
                let d = (-(z - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
                writeln!(text, "{}\t{c}\t{}\t{z}\t{d}", j + 1, feature + 1).unwrap();
            }
        }
    }
    write_file(&dir.join(DENSITIES_FILE), text)
}

/// Per-alpha table: mean F1 per proposal and the A-vs-B McNemar test on
/// discordant counts pooled over repetitions.
pub fn format_summary(records: &[ExperimentRecord], traces: &[CellTrace]) -> String {
    let mut text = String::from("alpha\treps\tf1_C\tf1_B\tf1_E\tf1_A\tdelta_A_B\tb\tc\tchi2\tp_value\tsignificant\n");
    let mut pooled: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for t in traces {
        if let Some(m) = &t.mcnemar {
            let e = pooled.entry(fixed(t.alpha)).or_default();
            e.0 += m.b;
            e.1 += m.c;
        }
    }
    for alpha in alphas_of(records) {
        let key = fixed(alpha);
        let at: Vec<&ExperimentRecord> = records.iter().filter(|r| fixed(r.alpha) == key).collect();
        let mean_f1 = |p: Proposal| {
            let v: Vec<f64> = at.iter().filter(|r| r.proposal == p).map(|r| r.f1_macro).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let f1: Vec<Option<f64>> = Proposal::ALL.iter().map(|&p| mean_f1(p)).collect();
        let delta = match (f1[3], f1[1]) {
            (Some(a), Some(b)) => fixed(a - b),
            _ => String::new(),
        };
        let mut reps: Vec<usize> = at.iter().map(|r| r.rep).collect();
        reps.sort_unstable();
        reps.dedup();
        let test = pooled.get(&key).map(|&(b, c)| McNemarResult::from_counts(b, c));
        let cols: Vec<String> = f1.iter().map(|v| v.map(fixed).unwrap_or_default()).collect();
        let test_cols = match test {
            Some(m) => format!("{}\t{}\t{}\t{}\t{}", m.b, m.c, fixed(m.chi2), fixed(m.p_value), m.significant),
            None => "\t\t\t\t".to_string(),
        };
        writeln!(text, "{key}\t{}\t{}\t{delta}\t{test_cols}", reps.len(), cols.join("\t")).unwrap();
    }
    text
}

/// Writes results, traces, config echo, reference models, summary and plot
/// data into `dir`.
pub fn write_outputs(config: &ExperimentConfig, grid: &GridOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    emit_results_csv(&grid.records, config.k(), dir.join(RESULTS_FILE))?;
    write_traces(&grid.traces, dir.join(TRACES_FILE))?;
    write_file(&dir.join(CONFIG_FILE), config.to_echo_string()?)?;
    let models_dir = dir.join(MODELS_DIR);
    fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
    for (j, m) in grid.reference_models.iter().enumerate() {
        m.save_json(models_dir.join(format!("node_{}.json", j + 1)))?;
    }
    write_file(&dir.join(SUMMARY_FILE), format_summary(&grid.records, &grid.traces))?;
    emit_plot_data(&grid.records, &config.profiles, &grid.reference_models, dir.join(PLOTS_DIR))
}

/// Loads `models/node_*.json` in node order.
pub fn read_models(dir: &Path, k: usize) -> Result<Vec<HybridModel>> {
    (1..=k)
        .map(|j| HybridModel::load_json(dir.join(MODELS_DIR).join(format!("node_{j}.json"))))
        .collect()
}
