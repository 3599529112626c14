//! `tsgnn` command line. Every command prints one JSON report on stdout;
//! human-readable text goes to stderr.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 numerical failure,
//! 5 check failure.

pub mod checks;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::graphdata::{gen_sbm, load_dataset, save_dataset, GraphError, SbmParams};
use crate::ndarr::NdError;
use crate::symmetry::{equivariant_basis, SymmetryError, SymmetryGroup};
use crate::trainer::{self, correct_count, TrainConfig, TrainError};
use crate::tsgnn::{Aggregator, Arch, Checkpoint, ModelError, Pooling};

use checks::{SymcheckModels, AGGREGATORS, POOLINGS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "tsgnn", version, about = "Triple-symmetry graph networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset directory.
    Gen(GenArgs),
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Accuracy on a graph the model never saw, test split by default.
    Zeroshot(EvalArgs),
    /// Equivariance of the forward pass under node, feature and label permutations.
    Symcheck(SymcheckArgs),
    /// Finite-difference check of the training gradients.
    Gradcheck(GradcheckArgs),
    /// Dimension of a space of permutation-equivariant linear maps.
    Basis(BasisArgs),
    /// Single-layer forward timings against edge count.
    Perfscan(PerfscanArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Sbm,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "sbm")]
    pub kind: Kind,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub nodes_per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    pub p_out: f64,
    #[arg(long, default_value_t = 16)]
    pub feat_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for `model.json`, `model_best.json` and `report.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MixersOpt {
    On,
    Off,
    Both,
}

/// Architecture selection shared by the check commands. Omitted
/// aggregator or pooling means all of them.
#[derive(Debug, Args)]
pub struct ArchArgs {
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    #[arg(long, value_parser = parse_aggregator)]
    pub aggregator: Option<Aggregator>,
    #[arg(long, value_parser = parse_pooling)]
    pub pooling: Option<Pooling>,
    #[arg(long, value_enum, default_value = "both")]
    pub mixers: MixersOpt,
}

impl ArchArgs {
    fn archs(&self) -> Vec<Arch> {
        let aggs: Vec<Aggregator> = self.aggregator.map_or(AGGREGATORS.to_vec(), |a| vec![a]);
        let pools: Vec<Pooling> = self.pooling.map_or(POOLINGS.to_vec(), |p| vec![p]);
        let mixers: &[bool] = match self.mixers {
            MixersOpt::On => &[true],
            MixersOpt::Off => &[false],
            MixersOpt::Both => &[false, true],
        };
        let mut out = Vec::new();
        for &a in &aggs {
            for &p in &pools {
                for &m in mixers {
                    out.push(Arch {
                        mixers: m,
                        ..Arch::new(self.layers, self.hidden, a, p)
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Args)]
pub struct SymcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Check a saved checkpoint instead of random weights.
    #[arg(long, conflicts_with = "zero_weights")]
    pub model: Option<PathBuf>,
    /// Use all-zero weights.
    #[arg(long)]
    pub zero_weights: bool,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GroupName {
    Triple,
    Dss,
    Deepsets,
}

#[derive(Debug, Args)]
pub struct BasisArgs {
    #[arg(long, value_enum)]
    pub group: GroupName,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub f: usize,
    #[arg(long, default_value_t = 1)]
    pub c: usize,
    #[arg(long, default_value_t = 1)]
    pub k1: usize,
    #[arg(long, default_value_t = 1)]
    pub k2: usize,
}

#[derive(Debug, Args)]
pub struct PerfscanArgs {
    /// Node counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1000, 2000, 4000, 8000, 16000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    pub feat_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, value_parser = parse_aggregator, default_value = "mean")]
    pub aggregator: Aggregator,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

fn parse_aggregator(s: &str) -> Result<Aggregator, String> {
    parse_enum(s)
}

fn parse_pooling(s: &str) -> Result<Pooling, String> {
    parse_enum(s)
}

/// A failed command with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn nd_code(e: &NdError) -> i32 {
    match e {
        NdError::NonFinite { .. } | NdError::Singular { .. } | NdError::FullyMaskedRow(_) => {
            EXIT_NUMERICAL
        }
        _ => EXIT_DATA,
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match &e {
            ModelError::Nd(nd) => nd_code(nd),
            ModelError::Arch(_) => EXIT_USAGE,
            ModelError::Shape(_) | ModelError::Checkpoint(_) | ModelError::Json(_) => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Config(_) => EXIT_USAGE,
            TrainError::Data(_) => EXIT_DATA,
            TrainError::Numerical { .. } => EXIT_NUMERICAL,
            TrainError::Model(m) => return CliError::from_model_ref(m, e.to_string()),
        };
        Self::new(code, e.to_string())
    }
}

impl CliError {
    fn from_model_ref(m: &ModelError, message: String) -> Self {
        let code = match m {
            ModelError::Nd(nd) => nd_code(nd),
            ModelError::Arch(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self::new(code, message)
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        Self::new(EXIT_DATA, e.to_string())
    }
}

impl From<SymmetryError> for CliError {
    fn from(e: SymmetryError) -> Self {
        Self::new(EXIT_USAGE, e.to_string())
    }
}

/// Outcome of a command: a JSON report and the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub report: serde_json::Value,
    pub code: i32,
}

fn ok<T: Serialize>(report: &T) -> Result<Outcome, CliError> {
    Ok(Outcome {
        report: serde_json::to_value(report).expect("report serializes"),
        code: EXIT_OK,
    })
}

fn check<T: Serialize>(report: &T, passed: bool) -> Result<Outcome, CliError> {
    let mut out = ok(report)?;
    if !passed {
        out.code = EXIT_CHECK;
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))
}

/// Executes one parsed command.
pub fn execute(cmd: &Command) -> Result<Outcome, CliError> {
    match cmd {
        Command::Gen(a) => {
            let Kind::Sbm = a.kind;
            let g = gen_sbm(&SbmParams {
                classes: a.classes,
                nodes_per_class: a.nodes_per_class,
                p_in: a.p_in,
                p_out: a.p_out,
                feature_dim: a.feat_dim,
                noise: a.noise,
                seed: a.seed,
            })?;
            save_dataset(&g, &a.out)?;
            eprintln!("wrote {} nodes, {} edges to {}", g.num_nodes(), g.num_edges(), a.out.display());
            ok(&serde_json::json!({
                "out": a.out,
                "nodes": g.num_nodes(),
                "edges": g.num_edges(),
                "classes": g.num_classes(),
                "feature_dim": g.feature_dim(),
            }))
        }
        Command::Train(a) => {
            let mut config: TrainConfig = serde_json::from_str(&read_text(&a.config)?)
                .map_err(|e| CliError::new(EXIT_USAGE, format!("{}: {e}", a.config.display())))?;
            if let Some(seed) = a.seed {
                config.seed = seed;
            }
            let base = a.config.parent().unwrap_or(Path::new(""));
            for g in &mut config.graphs {
                if g.is_relative() {
                    *g = base.join(&*g);
                }
            }
            let trained = trainer::train(&config)?;
            fs::create_dir_all(&a.out)
                .map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", a.out.display())))?;
            let pre = config.preprocess;
            write_text(&a.out.join("model.json"), &Checkpoint::from_model(&trained.model, pre).to_json())?;
            write_text(&a.out.join("model_best.json"), &Checkpoint::from_model(&trained.best, pre).to_json())?;
            write_text(&a.out.join("report.jsonl"), &trained.report.to_json_lines())?;
            let s = &trained.report.summary;
            eprintln!(
                "final test accuracy {:.4}, best val {:.4} at epoch {}",
                s.final_test_acc, s.best_val_acc, s.best_epoch
            );
            ok(s)
        }
        Command::Eval(a) | Command::Zeroshot(a) => {
            let ck = Checkpoint::from_json(&read_text(&a.model)?)?;
            let model = ck.to_model()?;
            let graph = ck.preprocess.apply(&load_dataset(&a.data)?)?;
            let s = graph.splits();
            let (name, idx) = match a.split {
                SplitName::Train => ("train", &s.train),
                SplitName::Val => ("val", &s.val),
                SplitName::Test => ("test", &s.test),
            };
            if idx.is_empty() {
                return Err(CliError::new(EXIT_DATA, format!("{name} split is empty")));
            }
            let correct = correct_count(&model, &graph, idx)?;
            let accuracy = correct as f64 / idx.len() as f64;
            eprintln!("{name} accuracy {accuracy:.4} ({correct}/{})", idx.len());
            ok(&serde_json::json!({
                "split": name,
                "correct": correct,
                "total": idx.len(),
                "accuracy": accuracy,
            }))
        }
        Command::Symcheck(a) => {
            let models = match (&a.model, a.zero_weights) {
                (Some(p), _) => {
                    SymcheckModels::Fixed(Checkpoint::from_json(&read_text(p)?)?.to_model()?)
                }
                (None, true) => SymcheckModels::Zero(a.arch.archs()),
                (None, false) => SymcheckModels::Random(a.arch.archs()),
            };
            let r = checks::symcheck(&models, a.trials, a.tol, a.seed)?;
            eprintln!("max deviation {:e} over {} trials", r.max_deviation, r.trials);
            check(&r, r.passed)
        }
        Command::Gradcheck(a) => {
            let r = checks::gradcheck(&a.arch.archs(), a.tol, a.seed)?;
            for e in &r.entries {
                eprintln!(
                    "{:?}/{:?} mixers={}: max relative error {:e}",
                    e.aggregator, e.pooling, e.mixers, e.max_rel_err
                );
            }
            check(&r, r.passed)
        }
        Command::Basis(a) => {
            let group = match a.group {
                GroupName::Triple => SymmetryGroup::Triple { n: a.n, f: a.f, c: a.c },
                GroupName::Dss => SymmetryGroup::Dss { n: a.n, f: a.f },
                GroupName::Deepsets => SymmetryGroup::DeepSets { n: a.n },
            };
            let b = equivariant_basis(group, a.k1, a.k2)?;
            ok(&serde_json::json!({
                "group": b.group.to_string(),
                "k1": b.k1,
                "k2": b.k2,
                "dimension": b.dimension(),
            }))
        }
        Command::Perfscan(a) => {
            let r = checks::perfscan(&a.sizes, a.feat_dim, a.width, a.aggregator, a.repeats, a.seed)?;
            for p in &r.points {
                eprintln!("N={} |E|={} {:.2} ms", p.nodes, p.edges, p.millis);
            }
            ok(&r)
        }
    }
}

/// Parses `argv` (program name first), runs the command, prints the report
/// and returns the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(out) => {
            println!("{}", out.report);
            out.code
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            println!("{}", serde_json::json!({ "error": e.message, "exit_code": e.code }));
            e.code
        }
    }
}
