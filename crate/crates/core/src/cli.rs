//! The `ebdp` command line: `simulate`, `fit`, `predict` and `report`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::{self, FeatureTable, ModelFile, Prediction, ReportFormat};
use crate::prior::Method;
use crate::sim::{run_experiment, Design, ExperimentConfig, ResultTable, ZeroMode};
use crate::summary::LabeledDataset;
use crate::vb::VbConfig;

#[derive(Debug, Parser)]
#[command(
    name = "ebdp",
    version,
    about = "Sparse mean-difference estimation and linear classification"
)]
pub struct Cli {
    /// Number of worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation study and write a results table.
    Simulate(SimulateArgs),
    /// Fit a classifier on a labeled CSV file and save the model.
    Fit(FitArgs),
    /// Score and label the rows of a CSV file with a saved model.
    Predict(PredictArgs),
    /// Format a results CSV as a method-by-cell table.
    Report(ReportArgs),
}

/// Estimation settings shared by `simulate` and `fit`.
#[derive(Debug, Clone, Default, Args)]
pub struct FitFlags {
    /// DP concentration [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Slab variance of the base measure [default: 16]
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Spike weight of the base measure [default: 0.9]
    #[arg(long)]
    pub w: Option<f64>,
    /// Truncation level [default: 20]
    #[arg(long = "T", value_name = "T")]
    pub truncation: Option<usize>,
    /// Number of coordinate batches fitted separately and averaged [default: 1]
    #[arg(long)]
    pub batches: Option<usize>,
    /// Zero-weight threshold for the sparse estimators [default: 0.5]
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Convergence tolerance on the assignment matrix [default: 1e-6]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap [default: 500]
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Starting assignments: grid or random [default: grid]
    #[arg(long)]
    pub init: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroModeArg {
    Exact,
    Normal,
}

impl From<ZeroModeArg> for ZeroMode {
    fn from(z: ZeroModeArg) -> Self {
        match z {
            ZeroModeArg::Exact => ZeroMode::Exact,
            ZeroModeArg::Normal => ZeroMode::Normal,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    /// TOML file with simulation settings; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Design: 1 (independent), 2 (AR(1)) or 3 (factor model).
    #[arg(long)]
    pub study: Option<u8>,
    /// Study 1 cell "delta,l"; repeatable.
    #[arg(long = "cell")]
    pub cells: Vec<String>,
    /// Study 2 autocorrelation; repeatable.
    #[arg(long = "rho")]
    pub rho: Vec<f64>,
    /// Study 2 signal blocks as "count:value,...", e.g. "2000:1".
    #[arg(long)]
    pub blocks: Option<String>,
    /// Study 3 nonzero fraction; repeatable.
    #[arg(long = "c")]
    pub c: Vec<f64>,
    /// Coordinates outside the signal: exactly zero or N(0, 0.1^2).
    #[arg(long, value_enum)]
    pub zero_mode: Option<ZeroModeArg>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Training samples per class.
    #[arg(long)]
    pub n: Option<usize>,
    /// Noise variance (studies 1 and 2).
    #[arg(long)]
    pub s2: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated methods: dp, sdp, hard, ir, oracle.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Test samples per repetition (study 3).
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Master seed (required here or in the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Results CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-repetition CSV [default: <out>.reps.csv when --out is given].
    #[arg(long)]
    pub per_rep: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Estimator: dp, sdp, hard or ir.
    #[arg(long, default_value = "sdp")]
    pub method: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Model file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with the model's feature columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Column to ignore as labels; when present the error rate is reported.
    #[arg(long)]
    pub label_column: Option<String>,
    /// Predictions CSV (row, score, label); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Markdown,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Results CSV written by `simulate`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: FormatArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of a `simulate --config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub study: Option<u8>,
    pub cells: Option<Vec<String>>,
    pub rho: Option<Vec<f64>>,
    pub blocks: Option<String>,
    pub c: Option<Vec<f64>>,
    pub zero_mode: Option<ZeroModeArg>,
    pub p: Option<usize>,
    pub n: Option<usize>,
    pub s2: Option<f64>,
    pub reps: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub test_size: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub sigma2: Option<f64>,
    pub w: Option<f64>,
    #[serde(rename = "T")]
    pub truncation: Option<usize>,
    pub batches: Option<usize>,
    pub kappa: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub init: Option<String>,
}

impl SimulateFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

impl FitFlags {
    /// VB settings, fold count and kappa, with flags taking precedence over `file`.
    fn resolve(&self, file: &SimulateFile, seed: u64) -> Result<(VbConfig, usize, f64)> {
        let d = VbConfig::default();
        let vb = VbConfig {
            alpha: self.alpha.or(file.alpha).unwrap_or(d.alpha),
            sigma2: self.sigma2.or(file.sigma2).unwrap_or(d.sigma2),
            w: self.w.or(file.w).unwrap_or(d.w),
            truncation: self.truncation.or(file.truncation).unwrap_or(d.truncation),
            tol: self.tol.or(file.tol).unwrap_or(d.tol),
            max_iter: self.max_iter.or(file.max_iter).unwrap_or(d.max_iter),
            seed,
            init: match self.init.as_ref().or(file.init.as_ref()) {
                Some(name) => name.parse()?,
                None => d.init,
            },
        };
        vb.validate()?;
        let batches = self.batches.or(file.batches).unwrap_or(1);
        if batches == 0 {
            return invalid("--batches must be >= 1");
        }
        let kappa = self.kappa.or(file.kappa).unwrap_or(0.5);
        if !(kappa > 0.0 && kappa < 1.0) {
            return invalid(format!("--kappa must lie in (0, 1), got {kappa}"));
        }
        Ok((vb, batches, kappa))
    }
}

/// Parses a study-1 cell written as `delta,l` or `(delta,l)`.
pub fn parse_cell(text: &str) -> Result<(f64, usize)> {
    let inner = text.trim().trim_start_matches('(').trim_end_matches(')');
    let bad = || Error::InvalidInput(format!("cell must look like \"delta,l\", got '{text}'"));
    let (delta, l) = inner.split_once(',').ok_or_else(bad)?;
    let delta: f64 = delta.trim().parse().map_err(|_| bad())?;
    let l: usize = l.trim().parse().map_err(|_| bad())?;
    if !delta.is_finite() {
        return Err(bad());
    }
    Ok((delta, l))
}

/// Parses study-2 signal blocks written as `count:value,count:value`.
pub fn parse_blocks(text: &str) -> Result<Vec<(usize, f64)>> {
    let bad = |part: &str| {
        Error::InvalidInput(format!(
            "block must look like \"count:value\", got '{part}'"
        ))
    };
    text.split(',')
        .map(|part| {
            let (count, value) = part.split_once(':').ok_or_else(|| bad(part))?;
            let count: usize = count.trim().parse().map_err(|_| bad(part))?;
            let value: f64 = value.trim().parse().map_err(|_| bad(part))?;
            if !value.is_finite() {
                return Err(bad(part));
            }
            Ok((count, value))
        })
        .collect()
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|m| m.trim().parse()).collect()
}

/// Experiment configurations described by `args` (and its config file), one per cell.
pub fn resolve_simulate(args: &SimulateArgs) -> Result<Vec<ExperimentConfig>> {
    let file = match &args.config {
        Some(path) => SimulateFile::load(path)?,
        None => SimulateFile::default(),
    };
    let pick_vec = |flag: &Vec<String>, key: &Option<Vec<String>>| {
        if flag.is_empty() {
            key.clone().unwrap_or_default()
        } else {
            flag.clone()
        }
    };
    let pick_f64 = |flag: &Vec<f64>, key: &Option<Vec<f64>>| {
        if flag.is_empty() {
            key.clone().unwrap_or_default()
        } else {
            flag.clone()
        }
    };
    let study = args
        .study
        .or(file.study)
        .ok_or_else(|| Error::InvalidInput("--study is required".into()))?;
    let seed = args
        .seed
        .or(file.seed)
        .ok_or_else(|| Error::InvalidInput("--seed is required for simulate".into()))?;
    let cells = pick_vec(&args.cells, &file.cells);
    let rho = pick_f64(&args.rho, &file.rho);
    let c = pick_f64(&args.c, &file.c);
    let blocks = args.blocks.clone().or(file.blocks.clone());
    let zero_mode = args.zero_mode.or(file.zero_mode);
    let test_size = args.test_size.or(file.test_size);

    let conflict = |flag: &str| invalid(format!("{flag} does not apply to study {study}"));
    let designs: Vec<ExperimentConfig> = match study {
        1 => {
            if !rho.is_empty() {
                return conflict("--rho");
            }
            if blocks.is_some() {
                return conflict("--blocks");
            }
            if !c.is_empty() {
                return conflict("--c");
            }
            if test_size.is_some() {
                return conflict("--test-size");
            }
            if cells.is_empty() {
                return invalid("study 1 needs at least one --cell");
            }
            let zm = zero_mode.map_or(ZeroMode::Exact, ZeroMode::from);
            cells
                .iter()
                .map(|cell| parse_cell(cell).map(|(d, l)| ExperimentConfig::study1(d, l, zm)))
                .collect::<Result<_>>()?
        }
        2 => {
            if !cells.is_empty() {
                return conflict("--cell");
            }
            if !c.is_empty() {
                return conflict("--c");
            }
            if test_size.is_some() {
                return conflict("--test-size");
            }
            if rho.is_empty() {
                return invalid("study 2 needs at least one --rho");
            }
            let blocks = parse_blocks(blocks.as_deref().unwrap_or("2000:1"))?;
            let zm = zero_mode.map_or(ZeroMode::Normal, ZeroMode::from);
            rho.iter()
                .map(|&r| {
                    let mut cfg = ExperimentConfig::study2(r, blocks.clone());
                    if let Design::Study2 { zero_mode, .. } = &mut cfg.design {
                        *zero_mode = zm;
                    }
                    cfg
                })
                .collect()
        }
        3 => {
            if !cells.is_empty() {
                return conflict("--cell");
            }
            if !rho.is_empty() {
                return conflict("--rho");
            }
            if blocks.is_some() {
                return conflict("--blocks");
            }
            if zero_mode.is_some() {
                return conflict("--zero-mode");
            }
            if args.s2.or(file.s2).is_some() {
                return conflict("--s2");
            }
            if c.is_empty() {
                return invalid("study 3 needs at least one --c");
            }
            c.iter().map(|&c| ExperimentConfig::study3(c)).collect()
        }
        other => return invalid(format!("--study must be 1, 2 or 3, got {other}")),
    };

    let methods = pick_vec(&args.methods, &file.methods);
    let methods = if methods.is_empty() {
        None
    } else {
        Some(parse_methods(&methods)?)
    };
    let (vb, folds, kappa) = args.fit.resolve(&file, seed)?;

    designs
        .into_iter()
        .map(|mut cfg| {
            cfg.p = args.p.or(file.p).unwrap_or(cfg.p);
            cfg.n = args.n.or(file.n).unwrap_or(cfg.n);
            cfg.s2 = args.s2.or(file.s2).unwrap_or(cfg.s2);
            cfg.reps = args.reps.or(file.reps).unwrap_or(cfg.reps);
            cfg.test_size = test_size.unwrap_or(cfg.test_size);
            if let Some(m) = &methods {
                cfg.methods = m.clone();
            }
            cfg.vb = vb;
            cfg.folds = folds;
            cfg.kappa = kappa;
            cfg.seed = seed;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let configs = resolve_simulate(args)?;
    let mut table = ResultTable {
        seed: configs[0].seed,
        rows: Vec::new(),
    };
    for cfg in &configs {
        let part = run_experiment(cfg)?;
        for row in &part.rows {
            eprintln!(
                "{} {:<10} mean error {:.4} over {} reps",
                row.cell,
                row.method.name(),
                row.mean_error,
                row.reps()
            );
        }
        table.extend(part);
    }
    io::write_text(args.out.as_deref(), &io::results_csv(&table)?)?;
    let per_rep = args
        .per_rep
        .clone()
        .or_else(|| args.out.as_ref().map(|o| o.with_extension("reps.csv")));
    if let Some(path) = per_rep {
        io::write_text(Some(&path), &io::rep_csv(&table)?)?;
    }
    Ok(())
}

/// Fits the model described by `args`.
pub fn fit_model(args: &FitArgs) -> Result<ModelFile> {
    let method: Method = args.method.parse()?;
    let table = io::read_feature_table(&args.data, Some(&args.label_column))?;
    let labels = table.labels.clone().expect("label column requested");
    let data = LabeledDataset::new(table.features, labels)?;
    let (vb, folds, kappa) = args.fit.resolve(&SimulateFile::default(), args.seed)?;
    let mut model = ModelFile::fit(&data, method, &vb, folds, kappa)?;
    model.feature_names = Some(table.names);
    Ok(model)
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let model = fit_model(args)?;
    eprintln!(
        "fitted {} on {} features ({} + {} samples), {} nonzero coefficients",
        model.eta.method,
        model.mu_hat.len(),
        model.n1,
        model.n2,
        model.eta.support_size()
    );
    io::write_text(args.out.as_deref(), &(model.to_json()? + "\n"))
}

/// Scores every row of `table` with `model`.
pub fn predict_table(model: &ModelFile, table: &FeatureTable) -> Result<Vec<Prediction>> {
    let p = model.mu_hat.len();
    if table.names.len() != p {
        return Err(Error::DimensionMismatch {
            what: "feature columns",
            expected: p,
            found: table.names.len(),
        });
    }
    if let Some(names) = &model.feature_names {
        if let Some((want, got)) = names.iter().zip(&table.names).find(|(a, b)| a != b) {
            return invalid(format!(
                "feature column '{got}' does not match model column '{want}'"
            ));
        }
    }
    let classifier = model.classifier()?;
    table
        .features
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let score = classifier.score(&x.to_vec())?;
            Ok(Prediction {
                row: i + 1,
                score,
                label: crate::classifier::label_for(score).as_u8(),
            })
        })
        .collect()
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = ModelFile::load(&args.model)?;
    let table = io::read_feature_table(&args.data, args.label_column.as_deref())?;
    let predictions = predict_table(&model, &table)?;
    if let Some(labels) = &table.labels {
        let wrong = predictions
            .iter()
            .zip(labels)
            .filter(|(p, l)| p.label != l.as_u8())
            .count();
        if !labels.is_empty() {
            eprintln!(
                "error rate {:.4} ({wrong} of {})",
                wrong as f64 / labels.len() as f64,
                labels.len()
            );
        }
    }
    io::write_text(args.out.as_deref(), &io::predictions_csv(&predictions)?)
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let records = io::read_results_csv(&args.input)?;
    let format = match args.format {
        FormatArg::Markdown => ReportFormat::Markdown,
        FormatArg::Csv => ReportFormat::Csv,
    };
    io::write_text(args.out.as_deref(), &io::format_report(&records, format))
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let run = || match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Report(a) => cmd_report(a),
    };
    match cli.workers {
        Some(0) => invalid("--workers must be >= 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Runs the program on `args` and returns the process exit code:
/// 0 on success, 2 for invalid input, 1 for runtime failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> SimulateArgs {
        let mut full = vec!["ebdp", "simulate"];
        full.extend_from_slice(args);
        match Cli::try_parse_from(full).unwrap().command {
            Command::Simulate(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn cell_and_block_parsing() {
        assert_eq!(parse_cell("4,40").unwrap(), (4.0, 40));
        assert_eq!(parse_cell("(1, 2000)").unwrap(), (1.0, 2000));
        assert!(parse_cell("4;40").is_err());
        assert_eq!(
            parse_blocks("2000:1,100:2.5").unwrap(),
            vec![(2000, 1.0), (100, 2.5)]
        );
        assert!(parse_blocks("2000").is_err());
    }

    #[test]
    fn simulate_defaults_and_overrides() {
        let cfgs = resolve_simulate(&parse(&[
            "--study", "1", "--cell", "4,40", "--cell", "1,2000", "--seed", "7", "--reps", "20",
        ]))
        .unwrap();
        assert_eq!(cfgs.len(), 2);
        assert_eq!(cfgs[0].design.to_string(), "(4,40)");
        assert_eq!(cfgs[0].reps, 20);
        assert_eq!(cfgs[0].seed, 7);
        assert_eq!(cfgs[0].vb.sigma2, 16.0);
        assert_eq!(cfgs[0].p, 10_000);
        let cfgs = resolve_simulate(&parse(&[
            "--study",
            "3",
            "--c",
            "0.02",
            "--seed",
            "1",
            "--T",
            "10",
            "--batches",
            "3",
        ]))
        .unwrap();
        assert_eq!(cfgs[0].vb.truncation, 10);
        assert_eq!(cfgs[0].folds, 3);
        assert_eq!(cfgs[0].p, 4500);
    }

    #[test]
    fn simulate_rejects_conflicts_and_missing_seed() {
        assert!(resolve_simulate(&parse(&["--study", "1", "--cell", "4,40"])).is_err());
        assert!(
            resolve_simulate(&parse(&["--study", "2", "--cell", "4,40", "--seed", "1"])).is_err()
        );
        assert!(resolve_simulate(&parse(&[
            "--study", "1", "--cell", "4,40", "--rho", "0.3", "--seed", "1"
        ]))
        .is_err());
        assert!(resolve_simulate(&parse(&["--study", "4", "--seed", "1"])).is_err());
        assert!(resolve_simulate(&parse(&[
            "--study", "1", "--cell", "4,40", "--seed", "1", "--kappa", "1"
        ]))
        .is_err());
    }

    #[test]
    fn config_file_merges_under_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.toml");
        std::fs::write(
            &path,
            "study = 2\nrho = [0.3, 0.5]\nseed = 3\nreps = 4\nT = 12\nmethods = [\"dp\", \"ir\"]\n",
        )
        .unwrap();
        let p = path.to_str().unwrap();
        let cfgs = resolve_simulate(&parse(&["--config", p, "--reps", "5"])).unwrap();
        assert_eq!(cfgs.len(), 2);
        assert_eq!(cfgs[1].reps, 5);
        assert_eq!(cfgs[1].seed, 3);
        assert_eq!(cfgs[1].vb.truncation, 12);
        assert_eq!(cfgs[1].methods, vec![Method::Dp, Method::SampleMean]);

        std::fs::write(&path, "study = 2\nrho = [0.3]\nseed = 3\nsurprise = 1\n").unwrap();
        let err = resolve_simulate(&parse(&["--config", p])).unwrap_err();
        assert!(err.to_string().contains("surprise"));
    }
}
