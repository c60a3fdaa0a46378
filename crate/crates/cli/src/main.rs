//! `copula-impute`: fit a Gaussian copula to a CSV with missing cells and
//! write imputations, intervals, streaming output or evaluation metrics.
//!
//! Floats are written with six significant digits.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use copula_impute::data::{format_value, parse_record, TypeTag};
use copula_impute::evaluation::{coverage, mae, mean_defined, smae};
use copula_impute::imputer::{
    confidence_intervals, impute_multiple, impute_single, DEFAULT_ALPHA, DEFAULT_CI_SAMPLES,
};
use copula_impute::{
    detect_variable_types, fit, fit_lrgc, init_stream, CiKind, CopulaModel, DataTable, Error, FitConfig,
    StepSize, StreamConfig, StreamState, TrainingMode, VariableType,
};
use nalgebra::DMatrix;

#[derive(Parser, Debug)]
#[command(name = "copula-impute", version, about = "Gaussian copula imputation for mixed-type tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a CSV and write the imputed table.
    Impute(ImputeArgs),
    /// Impute rows one at a time while updating the model.
    Stream(StreamArgs),
    /// Score imputations against the complete data.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Standard,
    MinibatchOffline,
    MinibatchOnline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CiArg {
    Analytic,
    Quantile,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Convergence tolerance on the relative change of the correlation matrix
    #[arg(long, default_value_t = 0.01)]
    tol: f64,
    /// Maximum EM iterations
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    /// Rows per mini-batch [default: 100 offline, 40 online]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Passes over the data in mini-batch mode
    #[arg(long, default_value_t = 2)]
    num_pass: usize,
    /// c in the step size c/(c+t)
    #[arg(long, default_value_t = 5.0)]
    stepsize_c: f64,
    /// Fit a low-rank model of this rank
    #[arg(long)]
    rank: Option<usize>,
    /// Observed values kept per column when streaming
    #[arg(long, default_value_t = 200)]
    window_size: usize,
    /// Blend weight of each batch when streaming
    #[arg(long, default_value_t = 0.1)]
    const_stepsize: f64,
    /// Quantile decay when streaming, in (0, 1]
    #[arg(long, default_value_t = 1.0)]
    decay: f64,
    /// Rows used to initialize a stream
    #[arg(long, default_value_t = 100)]
    n_train: usize,
    /// Frequency threshold used when detecting variable types
    #[arg(long, default_value_t = 0.1)]
    min_ord_ratio: f64,
    /// Comma-separated per-column types (continuous, ordinal, lower_truncated,
    /// upper_truncated, twosided_truncated, auto)
    #[arg(long)]
    types: Option<String>,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the E-step
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Log per-iteration progress to stderr
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct ImputeArgs {
    /// Input CSV with a header row
    input: PathBuf,
    /// Output CSV
    #[arg(short, long)]
    output: PathBuf,
    /// Training mode; minibatch-online streams the rows in file order
    #[arg(long, value_enum, default_value_t = Mode::Standard)]
    mode: Mode,
    #[command(flatten)]
    model: ModelArgs,
    /// Write intervals to <output>_lower.csv and <output>_upper.csv
    #[arg(long, value_enum)]
    ci: Option<CiArg>,
    /// Interval level is 1 - alpha
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Draws per cell for quantile intervals
    #[arg(long, default_value_t = DEFAULT_CI_SAMPLES)]
    ci_samples: usize,
    /// Also write N sampled imputations to <output>_1.csv ... <output>_N.csv
    #[arg(long)]
    multiple: Option<usize>,
    /// Write the fitted correlation matrix to this CSV
    #[arg(long)]
    corr_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StreamArgs {
    /// Input CSV, or - for standard input
    #[arg(default_value = "-")]
    input: String,
    /// Output CSV, or - for standard output
    #[arg(short, long, default_value = "-")]
    output: String,
    /// Rows revealed after each imputation, in the same order as the input
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Complete data
    #[arg(long)]
    truth: PathBuf,
    /// Data with the evaluation cells missing
    #[arg(long)]
    masked: PathBuf,
    /// Imputed data
    #[arg(long)]
    imputed: PathBuf,
    /// Lower interval bounds
    #[arg(long, requires = "upper")]
    lower: Option<PathBuf>,
    /// Upper interval bounds
    #[arg(long, requires = "lower")]
    upper: Option<PathBuf>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn parse(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn fit(err: Error) -> Self {
        match err {
            Error::InvalidConfig(_) => Self::usage(err.to_string()),
            Error::Parse { .. } | Error::Csv(_) => Self::parse(err.to_string()),
            other => Self { code: 3, message: other.to_string() },
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let verbose = match &cli.command {
        Command::Impute(a) => a.model.verbose,
        Command::Stream(a) => a.model.verbose,
        Command::Evaluate(_) => false,
    };
    env_logger::Builder::new()
        .filter_level(if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_target(false)
        .format_timestamp(None)
        .init();
    let res = match cli.command {
        Command::Impute(a) => cmd_impute(a),
        Command::Stream(a) => cmd_stream(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_table(path: &Path) -> CliResult<DataTable> {
    let file = File::open(path).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
    DataTable::from_csv_reader(BufReader::new(file)).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}

fn write_table(table: &DataTable, path: &Path) -> CliResult<()> {
    let file = File::create(path).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })?;
    table
        .write_csv(BufWriter::new(file))
        .map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })
}

/// `out.csv` + `_lower` -> `out_lower.csv`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn parse_types(spec: &str, table: &DataTable, min_ord_ratio: f64) -> CliResult<Vec<VariableType>> {
    let entries: Vec<&str> = spec.split(',').map(str::trim).collect();
    if entries.len() != table.n_cols() {
        return Err(Failure::usage(format!(
            "--types lists {} entries but the input has {} columns",
            entries.len(),
            table.n_cols()
        )));
    }
    let detected = detect_variable_types(table, min_ord_ratio).map_err(Failure::fit)?;
    entries
        .iter()
        .enumerate()
        .map(|(j, e)| {
            if e.is_empty() || e.eq_ignore_ascii_case("auto") {
                return Ok(detected[j]);
            }
            let tag: TypeTag = e
                .parse()
                .map_err(|m: String| Failure::usage(format!("--types column {j} ('{}'): {m}", table.col_names()[j])))?;
            tag.resolve(&table.observed(j)).ok_or_else(|| {
                Failure::fit(Error::EmptyColumn { column: j, name: table.col_names()[j].clone() })
            })
        })
        .collect()
}

fn fit_config(m: &ModelArgs, mode: TrainingMode, types: Option<Vec<VariableType>>) -> CliResult<FitConfig> {
    if !(m.stepsize_c > 0.0) {
        return Err(Failure::usage(format!("--stepsize-c must be positive, got {}", m.stepsize_c)));
    }
    if !(m.min_ord_ratio > 0.0 && m.min_ord_ratio < 1.0) {
        return Err(Failure::usage(format!("--min-ord-ratio must be in (0, 1), got {}", m.min_ord_ratio)));
    }
    let cfg = FitConfig {
        tol: m.tol,
        max_iter: m.max_iter,
        mode,
        batch_size: m.batch_size.unwrap_or(FitConfig::default().batch_size),
        num_pass: m.num_pass,
        stepsize: StepSize::Decaying { c: m.stepsize_c },
        seed: m.seed,
        n_workers: m.workers,
        min_ord_ratio: m.min_ord_ratio,
        var_types: types,
        verbose: m.verbose,
        ..Default::default()
    };
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn stream_config(m: &ModelArgs, types: Option<Vec<VariableType>>) -> CliResult<StreamConfig> {
    let cfg = StreamConfig {
        window_size: m.window_size,
        const_stepsize: m.const_stepsize,
        batch_size: m.batch_size.unwrap_or(StreamConfig::default().batch_size),
        decay: m.decay,
        n_train: m.n_train,
        min_ord_ratio: m.min_ord_ratio,
        var_types: types,
        ..Default::default()
    };
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_impute(a: ImputeArgs) -> CliResult<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Failure::usage(format!("--alpha must be in (0, 1), got {}", a.alpha)));
    }
    if a.multiple == Some(0) {
        return Err(Failure::usage("--multiple must be at least 1"));
    }
    if a.mode == Mode::MinibatchOnline {
        if a.model.rank.is_some() {
            return Err(Failure::usage("--rank is not available in streaming mode"));
        }
        if a.ci.is_some() || a.multiple.is_some() {
            return Err(Failure::usage("--ci and --multiple need an offline mode"));
        }
    }
    let table = read_table(&a.input)?;
    let types = match &a.model.types {
        Some(s) => Some(parse_types(s, &table, a.model.min_ord_ratio)?),
        None => None,
    };

    if a.mode == Mode::MinibatchOnline {
        let cfg = stream_config(&a.model, types)?;
        let (imputed, corr) = impute_online(&table, cfg)?;
        write_table(&imputed, &a.output)?;
        if let Some(path) = &a.corr_out {
            write_corr(&corr, table.col_names(), path)?;
        }
        return Ok(());
    }

    let mode = match a.mode {
        Mode::MinibatchOffline => TrainingMode::MinibatchOffline,
        _ => TrainingMode::Standard,
    };
    let cfg = fit_config(&a.model, mode, types)?;
    if mode == TrainingMode::MinibatchOffline && cfg.batch_size < table.n_cols() {
        return Err(Failure::usage(format!(
            "batch size must be ≥ p (batch size {} < {} columns)",
            cfg.batch_size,
            table.n_cols()
        )));
    }
    let model = match a.model.rank {
        Some(k) => {
            if mode != TrainingMode::Standard {
                return Err(Failure::usage("--rank requires --mode standard"));
            }
            if k == 0 || k >= table.n_cols() {
                return Err(Failure::usage(format!(
                    "--rank must be between 1 and {} for {} columns",
                    table.n_cols().saturating_sub(1),
                    table.n_cols()
                )));
            }
            fit_lrgc(&table, k, &cfg)
        }
        None => fit(&table, &cfg),
    }
    .map_err(Failure::fit)?;

    let res = impute_single(&model, &table).map_err(Failure::fit)?;
    write_table(&res.imputed, &a.output)?;
    if let Some(kind) = a.ci {
        let kind = match kind {
            CiArg::Analytic => CiKind::Analytic,
            CiArg::Quantile => CiKind::Quantile,
        };
        let (lo, hi) =
            confidence_intervals(&model, &table, a.alpha, kind, a.ci_samples, a.model.seed).map_err(Failure::fit)?;
        write_table(&lo, &sibling(&a.output, "_lower"))?;
        write_table(&hi, &sibling(&a.output, "_upper"))?;
    }
    if let Some(num) = a.multiple {
        let draws = impute_multiple(&model, &table, num, a.model.seed).map_err(Failure::fit)?;
        for (i, d) in draws.iter().enumerate() {
            write_table(d, &sibling(&a.output, &format!("_{}", i + 1)))?;
        }
    }
    if let Some(path) = &a.corr_out {
        write_corr(&model.corr(), table.col_names(), path)?;
    }
    Ok(())
}

/// Streaming over a whole file: the first `n_train` rows are imputed with the
/// initial model, the rest one at a time.
fn impute_online(table: &DataTable, cfg: StreamConfig) -> CliResult<(DataTable, DMatrix<f64>)> {
    let n_train = cfg.n_train.min(table.n_rows());
    let head: Vec<usize> = (0..n_train).collect();
    let mut state = init_stream(&table.select_rows(&head), cfg).map_err(Failure::fit)?;
    let init: CopulaModel = state.snapshot().map_err(Failure::fit)?;
    let mut out = impute_single(&init, &table.select_rows(&head)).map_err(Failure::fit)?.imputed;
    let mut rows: Vec<Vec<Option<f64>>> = out.rows().map(<[_]>::to_vec).collect();
    for i in n_train..table.n_rows() {
        let r = state.step(table.row(i), None).map_err(|e| Failure::fit(e.at_row(i)))?;
        rows.push(r.into_iter().map(Some).collect());
    }
    out = DataTable::new(table.col_names().to_vec(), rows).map_err(Failure::fit)?;
    Ok((out, state.corr().clone()))
}

fn write_corr(corr: &DMatrix<f64>, names: &[String], path: &Path) -> CliResult<()> {
    let rows = (0..corr.nrows()).map(|i| (0..corr.ncols()).map(|j| Some(corr[(i, j)])).collect()).collect();
    let t = DataTable::new(names.to_vec(), rows).map_err(Failure::fit)?;
    write_table(&t, path)
}

fn open_input(name: &str) -> CliResult<Box<dyn Read>> {
    if name == "-" {
        Ok(Box::new(io::stdin().lock()))
    } else {
        File::open(name)
            .map(|f| Box::new(BufReader::new(f)) as Box<dyn Read>)
            .map_err(|e| Failure::parse(format!("{name}: {e}")))
    }
}

fn open_output(name: &str) -> CliResult<Box<dyn Write>> {
    if name == "-" {
        Ok(Box::new(io::stdout().lock()))
    } else {
        File::create(name)
            .map(|f| Box::new(BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Failure { code: 3, message: format!("{name}: {e}") })
    }
}

/// Row-at-a-time CSV reader that keeps the line number for diagnostics.
struct RowReader {
    records: csv::StringRecordsIntoIter<Box<dyn Read>>,
    header: Vec<String>,
    line: usize,
    source: String,
}

impl RowReader {
    fn new(input: Box<dyn Read>, source: &str) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = rdr
            .headers()
            .map_err(|e| Failure::parse(format!("{source}: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        Ok(Self {
            records: rdr.into_records(),
            header,
            line: 1,
            source: source.to_string(),
        })
    }

    fn next_row(&mut self) -> CliResult<Option<Vec<Option<f64>>>> {
        match self.records.next() {
            None => Ok(None),
            Some(rec) => {
                self.line += 1;
                let rec = rec.map_err(|e| Failure::parse(format!("{}: {e}", self.source)))?;
                parse_record(&rec, self.header.len(), self.line)
                    .map(Some)
                    .map_err(|e| Failure::parse(format!("{}: {e}", self.source)))
            }
        }
    }
}

fn cmd_stream(a: StreamArgs) -> CliResult<()> {
    if a.model.rank.is_some() {
        return Err(Failure::usage("--rank is not available in streaming mode"));
    }
    let mut cfg = stream_config(&a.model, None)?;
    let mut rows = RowReader::new(open_input(&a.input)?, &a.input)?;
    let mut truth = match &a.truth {
        Some(p) => {
            let r = RowReader::new(open_input(&p.to_string_lossy())?, &p.to_string_lossy())?;
            if r.header.len() != rows.header.len() {
                return Err(Failure::parse(format!(
                    "--truth has {} columns, input has {}",
                    r.header.len(),
                    rows.header.len()
                )));
            }
            Some(r)
        }
        None => None,
    };
    let mut out = csv::Writer::from_writer(open_output(&a.output)?);
    let io_err = |e: csv::Error| Failure { code: 3, message: e.to_string() };
    let mut header = rows.header.clone();
    header.push("_warmup".into());
    out.write_record(&header).map_err(io_err)?;

    // warmup block: echoed, then used for initialization
    let mut warm: Vec<Vec<Option<f64>>> = Vec::new();
    while warm.len() < cfg.n_train {
        let Some(row) = rows.next_row()? else { break };
        let mut rec: Vec<String> = row.iter().map(|v| v.map(format_value).unwrap_or_default()).collect();
        rec.push("1".into());
        out.write_record(&rec).map_err(io_err)?;
        // revealed values join the initialization block
        let row = match truth.as_mut() {
            Some(t) => t
                .next_row()?
                .ok_or_else(|| Failure::parse("--truth has fewer rows than the input"))?,
            None => row,
        };
        warm.push(row);
    }
    out.flush().map_err(|e| Failure { code: 3, message: e.to_string() })?;
    let block = DataTable::new(rows.header.clone(), warm).map_err(Failure::fit)?;
    if let Some(s) = &a.model.types {
        cfg.var_types = Some(parse_types(s, &block, a.model.min_ord_ratio)?);
    }
    let mut state: StreamState = init_stream(&block, cfg).map_err(Failure::fit)?;

    let mut i = block.n_rows();
    while let Some(row) = rows.next_row()? {
        let revealed = match truth.as_mut() {
            Some(t) => Some(
                t.next_row()?
                    .ok_or_else(|| Failure::parse("--truth has fewer rows than the input"))?,
            ),
            None => None,
        };
        let imputed = state.step(&row, revealed.as_deref()).map_err(|e| {
            let f = Failure::fit(e.at_row(i));
            Failure { code: f.code, message: format!("row {}: {}", i + 1, f.message) }
        })?;
        let mut rec: Vec<String> = imputed.iter().map(|&v| format_value(v)).collect();
        rec.push("0".into());
        out.write_record(&rec).map_err(io_err)?;
        out.flush().map_err(|e| Failure { code: 3, message: e.to_string() })?;
        i += 1;
    }
    out.flush().map_err(|e| Failure { code: 3, message: e.to_string() })?;
    log::info!("streamed {} rows, {} correlation updates", i, state.n_updates());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let truth = read_table(&a.truth)?;
    let masked = read_table(&a.masked)?;
    let imputed = read_table(&a.imputed)?;
    let scores = smae(&imputed, &truth, &masked).map_err(Failure::fit)?;
    let width = truth.col_names().iter().map(String::len).max().unwrap_or(0).max(6);
    let stdout = io::stdout();
    let mut w = stdout.lock();
    let mut out = |s: String| writeln!(w, "{s}").map_err(|e| Failure { code: 3, message: e.to_string() });
    out(format!("{:<width$}  {:>6}", "column", "smae"))?;
    for (name, s) in truth.col_names().iter().zip(&scores) {
        let cell = s.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        out(format!("{name:<width$}  {cell:>6}"))?;
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    out(format!("mean smae: {}", fmt(mean_defined(&scores))))?;
    out(format!("mae: {}", fmt(mae(&imputed, &truth, &masked).map_err(Failure::fit)?)))?;
    if let (Some(lo), Some(hi)) = (&a.lower, &a.upper) {
        let (lo, hi) = (read_table(lo)?, read_table(hi)?);
        let c = coverage(&lo, &hi, &truth, &masked).map_err(Failure::fit)?;
        out(format!("coverage: {}", fmt(c)))?;
    }
    Ok(())
}
