//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or I/O error, 2 verification failure,
//! 64 usage error or invalid configuration.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiment::{
    emit_plot_data, emit_results_csv, prepare_cell, read_models, read_results_csv, run_and_verify, run_cell,
    ExperimentConfig, CONFIG_FILE, MODELS_DIR, PLOTS_DIR, RESULTS_FILE,
};
use crate::governance::IccPrior;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VERIFICATION: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "fednb", version, about = "Federated Naive Bayes grid runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split the data and write node partitions for every (alpha, rep).
    Partition(RunArgs),
    /// Fit the local models of the first cell and report its records.
    Train(RunArgs),
    /// Run the full grid, write all outputs and verify them.
    RunGrid(RunArgs),
    /// Re-run verification on a results directory.
    Verify {
        /// Directory written by `run-grid`.
        dir: PathBuf,
    },
    /// Regenerate plot data from a results directory.
    EmitPlots {
        /// Directory written by `run-grid`.
        dir: PathBuf,
        /// Where to write the files (default: DIR/plots).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override a config key: seed, alphas, reps, lambda, delta.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Maximum number of worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: EXIT_ERROR,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: format!("{}\n\nRun `fednb --help` for usage.", message.into()),
    }
}

fn load_config(args: &RunArgs) -> std::result::Result<ExperimentConfig, Failure> {
    let mut config = ExperimentConfig::load(&args.config).map_err(|e| usage(format!("invalid config: {e}")))?;
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("override `{o}` is not KEY=VALUE")))?;
        config.set(k.trim(), v).map_err(|e| usage(format!("invalid override: {e}")))?;
    }
    if args.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_partition(args: &RunArgs) -> std::result::Result<String, Failure> {
    let config = load_config(args)?;
    let data = config.dataset.load(config.seed)?;
    create_dir(&args.out)?;
    let mut text = String::from("alpha\trep\tnode\tsize\tjsd\tclass_counts\n");
    let mut summary = String::new();
    for &alpha in &config.alphas {
        let mut jsd = 0.0;
        for rep in 0..config.reps {
            let cell = prepare_cell(&config, &data, alpha, rep).map_err(|e| Error::Cell {
                alpha,
                rep,
                source: Box::new(e),
            })?;
            jsd += cell.report.jsd;
            for (node, counts) in cell.report.per_node_class_counts.iter().enumerate() {
                let counts: Vec<String> = counts.iter().map(usize::to_string).collect();
                writeln!(
                    text,
                    "{alpha:.6}\t{rep}\t{}\t{}\t{:.6}\t{}",
                    node + 1,
                    cell.node_indices[node].len(),
                    cell.report.jsd,
                    counts.join(",")
                )
                .unwrap();
            }
        }
        writeln!(summary, "alpha {alpha:.2}: mean JSD {:.4}", jsd / config.reps as f64).unwrap();
    }
    write(&args.out.join("partitions.tsv"), &text)?;
    Ok(summary)
}

fn cmd_train(args: &RunArgs) -> std::result::Result<String, Failure> {
    let config = load_config(args)?;
    let data = config.dataset.load(config.seed)?;
    let cell = run_cell(&config, &data, 0, 0)?;
    let models_dir = args.out.join(MODELS_DIR);
    create_dir(&models_dir)?;
    for (j, m) in cell.models.iter().enumerate() {
        m.save_json(models_dir.join(format!("node_{}.json", j + 1)))?;
    }
    emit_results_csv(&cell.records, config.k(), args.out.join(RESULTS_FILE))?;
    let prior = IccPrior::from_profiles(&config.profiles)?;
    let mut out = format!("cell alpha={:.2} rep=0, {} nodes\n", config.alphas[0], config.k());
    let fmt_w = |w: &[f64]| w.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    writeln!(out, "prior      {}", fmt_w(prior.normalized.as_slice())).unwrap();
    for r in &cell.records {
        writeln!(out, "{}  F1 {:.4}  ANLL {:.4}  weights {}", r.proposal, r.f1_macro, r.anll, fmt_w(&r.weights)).unwrap();
    }
    Ok(out)
}

fn cmd_run_grid(args: &RunArgs) -> std::result::Result<String, Failure> {
    let config = load_config(args)?;
    let report = run_and_verify(&config, &args.out, args.jobs)?;
    let text = report.render();
    if report.all_passed() {
        Ok(text)
    } else {
        Err(Failure {
            code: EXIT_VERIFICATION,
            message: text,
        })
    }
}

fn cmd_verify(dir: &Path) -> std::result::Result<String, Failure> {
    let report = crate::experiment::verify_dir(dir)?;
    let text = report.render();
    if report.all_passed() {
        Ok(text)
    } else {
        Err(Failure {
            code: EXIT_VERIFICATION,
            message: text,
        })
    }
}

fn cmd_emit_plots(dir: &Path, out: Option<&Path>) -> std::result::Result<String, Failure> {
    let config_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config = ExperimentConfig::from_echo_str(&text)?;
    let (records, _) = read_results_csv(dir.join(RESULTS_FILE))?;
    let models = read_models(dir, config.k())?;
    let target = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join(PLOTS_DIR));
    emit_plot_data(&records, &config.profiles, &models, &target)?;
    Ok(format!("plot data written to {}\n", target.display()))
}

/// Parses `args` (including the program name) and runs the command,
/// printing to stdout/stderr. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Partition(a) => cmd_partition(a),
        Command::Train(a) => cmd_train(a),
        Command::RunGrid(a) => cmd_run_grid(a),
        Command::Verify { dir } => cmd_verify(dir),
        Command::EmitPlots { dir, out } => cmd_emit_plots(dir, out.as_deref()),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(f) if f.code == EXIT_VERIFICATION => {
            print!("{}", f.message);
            f.code
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
