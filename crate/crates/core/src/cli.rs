//! The `qrel` command line.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage or
//! configuration errors. Options may also come from a JSON file given with
//! `--config`; flags override it.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::classical::{bayes_conditional, bayes_cross_order, fit_joint_from_sequences, JointTable};
use crate::correction::{delta_rows, CorrectionError, DeltaRow};
use crate::data::{
    aggregate, ingest, query2_fixture, write_records, write_records_csv, write_records_json, DataError, Event,
    Format, FrequencyTable, Group, JudgementRecord, FREQUENCY_HEADER,
};
use crate::estimation::{
    bootstrap_ci, EstimationError, FitMethod, FitResult, Fitter, LsqOptions, ModelParams, ParamIntervals,
};
use crate::hilbert::{transition_prob, Dimension, Sign};
use crate::measurement::Question;
use crate::simulate::{run_protocol, Agent, PairedMechanism, Protocol};

#[derive(Debug, Parser)]
#[command(name = "qrel", version, about = "Quantum and classical models of multidimensional relevance judgements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate judgement records from a quantum or classical agent.
    Simulate,
    /// Count records into a frequency table.
    Aggregate,
    /// Estimate (t, u, r, theta) per query.
    Fit,
    /// Inclusion-exclusion deltas and fallacy flags per sign pair.
    Delta,
    /// Empirical conditionals against quantum and Bayesian predictions.
    Compare,
    /// Simulate, aggregate, fit, delta and compare into one directory.
    Pipeline,
    /// Write the two published Query-2 values as a frequency table.
    Fixture,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// Records (.csv/.json) or a frequency-table CSV.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output file, or directory for `pipeline`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// table, csv or json.
    #[arg(long, global = true)]
    pub format: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub query: Option<String>,
    /// closed-form or lsq.
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Bootstrap replicates for fit intervals.
    #[arg(long, global = true)]
    pub bootstrap: Option<usize>,
    /// Quantum model, e.g. t=0.9,u=0.8,r=0.6,theta=pi/2.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// JSON joint table for classical agents.
    #[arg(long, global = true)]
    pub classical: Option<PathBuf>,
    /// Agents per group.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Paired-question mechanism: sequential, sequential-ur, sequential-ru, quantum-logic.
    #[arg(long, global = true)]
    pub paired: Option<String>,
    /// Additive smoothing for the Bayesian joint.
    #[arg(long, global = true)]
    pub smoothing: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Options {
    fn merged_with(self, file: Options) -> Options {
        Options {
            input: self.input.or(file.input),
            output: self.output.or(file.output),
            format: self.format.or(file.format),
            seed: self.seed.or(file.seed),
            query: self.query.or(file.query),
            method: self.method.or(file.method),
            bootstrap: self.bootstrap.or(file.bootstrap),
            model: self.model.or(file.model),
            classical: self.classical.or(file.classical),
            n: self.n.or(file.n),
            paired: self.paired.or(file.paired),
            smoothing: self.smoothing.or(file.smoothing),
            config: self.config,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Table,
    Csv,
    Json,
}

/// Fully validated settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    pub seed: Option<u64>,
    pub query: Option<String>,
    pub method: FitMethod,
    pub bootstrap: Option<usize>,
    pub model: Option<ModelParams>,
    pub classical: Option<JointTable>,
    pub n: usize,
    pub paired: PairedMechanism,
    pub smoothing: f64,
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self, CliError> {
        let mut options = cli.options;
        if let Some(path) = &options.config {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read --config {}: {e}", path.display())))?;
            let file: Options = serde_json::from_str(&text)
                .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
            options = options.merged_with(file);
        }
        let format = match options.format.as_deref() {
            None | Some("table") => OutputFormat::Table,
            Some("csv") => OutputFormat::Csv,
            Some("json") => OutputFormat::Json,
            Some(other) => return Err(usage(format!("--format must be table, csv or json, got {other:?}"))),
        };
        let method = match &options.method {
            None => FitMethod::Lsq,
            Some(m) => m.parse().map_err(|e| usage(format!("--method: {e}")))?,
        };
        let model = match &options.model {
            None => None,
            Some(m) => Some(m.parse::<ModelParams>().map_err(|e| usage(format!("--model: {e}")))?),
        };
        let paired = match &options.paired {
            None => PairedMechanism::default(),
            Some(p) => p.parse().map_err(|e| usage(format!("--paired: {e}")))?,
        };
        if let Some(input) = &options.input {
            if !input.is_file() {
                return Err(usage(format!("--input {} does not exist", input.display())));
            }
        }
        let classical = match &options.classical {
            None => None,
            Some(path) => {
                let file = File::open(path)
                    .map_err(|e| usage(format!("cannot open --classical {}: {e}", path.display())))?;
                Some(
                    serde_json::from_reader(BufReader::new(file))
                        .map_err(|e| usage(format!("invalid joint table {}: {e}", path.display())))?,
                )
            }
        };
        if let Some(out) = &options.output {
            let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            if !parent.is_dir() {
                return Err(usage(format!("directory of --output {} does not exist", out.display())));
            }
        }
        let smoothing = options.smoothing.unwrap_or(0.0);
        if !(smoothing.is_finite() && smoothing >= 0.0) {
            return Err(usage("--smoothing must be a non-negative number"));
        }
        if options.bootstrap.is_some_and(|b| b < 100) {
            return Err(usage("--bootstrap needs at least 100 replicates"));
        }

        let config = RunConfig {
            command: cli.command,
            input: options.input,
            output: options.output,
            format,
            seed: options.seed,
            query: options.query,
            method,
            bootstrap: options.bootstrap,
            model,
            classical,
            n: options.n.unwrap_or(100),
            paired,
            smoothing,
        };
        config.check_command()?;
        Ok(config)
    }

    fn check_command(&self) -> Result<(), CliError> {
        match self.command {
            Command::Simulate | Command::Pipeline => {
                if self.seed.is_none() {
                    return Err(usage(format!("{} requires --seed", command_name(self.command))));
                }
                if self.model.is_some() == self.classical.is_some() {
                    return Err(usage("give exactly one of --model or --classical"));
                }
                if self.command == Command::Pipeline && self.output.is_none() {
                    return Err(usage("pipeline requires --output <directory>"));
                }
            }
            Command::Aggregate | Command::Fit | Command::Delta | Command::Compare => {
                if self.input.is_none() {
                    return Err(usage(format!("{} requires --input", command_name(self.command))));
                }
                if self.bootstrap.is_some() && self.seed.is_none() {
                    return Err(usage("--bootstrap requires --seed"));
                }
            }
            Command::Fixture => {}
        }
        Ok(())
    }
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Simulate => "simulate",
        Command::Aggregate => "aggregate",
        Command::Fit => "fit",
        Command::Delta => "delta",
        Command::Compare => "compare",
        Command::Pipeline => "pipeline",
        Command::Fixture => "fixture",
    }
}

/// Parses arguments, runs the command, prints diagnostics and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = RunConfig::from_cli(cli).and_then(|config| {
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        execute(&config, &mut out)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    match config.command {
        Command::Simulate => cmd_simulate(config, stdout),
        Command::Aggregate => {
            let input = load_input(config)?;
            let mut buf = Vec::new();
            input.table.write_csv(&mut buf).map_err(anyhow::Error::from)?;
            emit(config, &buf, stdout)
        }
        Command::Fit => cmd_fit(config, stdout),
        Command::Delta => cmd_delta(config, stdout),
        Command::Compare => cmd_compare(config, stdout),
        Command::Pipeline => cmd_pipeline(config, stdout),
        Command::Fixture => {
            let mut buf = Vec::new();
            query2_fixture().write_csv(&mut buf).map_err(anyhow::Error::from)?;
            emit(config, &buf, stdout)
        }
    }
}

fn emit(config: &RunConfig, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), CliError> {
    match &config.output {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?,
        None => stdout.write_all(bytes).context("writing to stdout")?,
    }
    Ok(())
}

fn protocol(config: &RunConfig) -> Protocol {
    let agent = match (&config.model, &config.classical) {
        (Some(model), _) => Agent::Quantum { model: *model, mechanism: config.paired },
        (None, Some(joint)) => Agent::Classical { joint: *joint },
        (None, None) => unreachable!("checked by check_command"),
    };
    let query = config.query.clone().unwrap_or_else(|| "q1".to_string());
    Protocol::uniform(&query, config.n, agent, config.seed.expect("checked by check_command"))
}

fn group_summary(p: &Protocol) -> String {
    let sizes: Vec<String> = Group::ALL.iter().map(|g| format!("{g}={}", p.group_sizes[g.index()])).collect();
    format!("query {}: {}\n", p.query_id, sizes.join(" "))
}

pub fn cmd_simulate(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let p = protocol(config);
    let records = run_protocol(&p);
    match &config.output {
        Some(path) => {
            let format = Format::from_path(path).unwrap_or(Format::Csv);
            write_records(path, format, &records).map_err(anyhow::Error::from)?;
            stdout.write_all(group_summary(&p).as_bytes()).context("writing summary")?;
        }
        None => {
            if config.format == OutputFormat::Json {
                write_records_json(&mut *stdout, &records).map_err(anyhow::Error::from)?;
            } else {
                write_records_csv(&mut *stdout, &records).map_err(anyhow::Error::from)?;
            }
            eprint!("{}", group_summary(&p));
        }
    }
    Ok(())
}

struct Input {
    records: Option<Vec<JudgementRecord>>,
    table: FrequencyTable,
}

fn load_input(config: &RunConfig) -> Result<Input, CliError> {
    let path = config.input.as_ref().expect("checked by check_command");
    let mut first = String::new();
    BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?)
        .read_line(&mut first)
        .with_context(|| format!("reading {}", path.display()))?;
    if first.trim().is_empty() {
        return Ok(Input { records: Some(Vec::new()), table: FrequencyTable::new() });
    }
    if first.trim_end() == FREQUENCY_HEADER {
        let table = FrequencyTable::read_csv(File::open(path).context("reopening input")?)
            .with_context(|| format!("reading frequency table {}", path.display()))?;
        return Ok(Input { records: None, table });
    }
    let format = Format::from_path(path).unwrap_or(Format::Csv);
    let records = ingest(path, format).with_context(|| format!("reading records {}", path.display()))?;
    let table = match aggregate(&records) {
        Ok(t) => t,
        Err(DataError::Empty) => FrequencyTable::new(),
        Err(e) => return Err(anyhow::Error::from(e).into()),
    };
    Ok(Input { records: Some(records), table })
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "n/a".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), fmt_num)
}

fn render(format: OutputFormat, header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    match format {
        OutputFormat::Csv | OutputFormat::Json => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header).expect("in-memory write");
            for row in rows {
                w.write_record(row).expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
        OutputFormat::Table => {
            let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
            for row in rows {
                for (w, cell) in widths.iter_mut().zip(row) {
                    *w = (*w).max(cell.chars().count());
                }
            }
            let line = |cells: Vec<&str>| {
                let padded: Vec<String> =
                    cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                format!("{}\n", padded.join("  ").trim_end())
            };
            let mut out = line(header.to_vec());
            for row in rows {
                out.push_str(&line(row.iter().map(String::as_str).collect()));
            }
            out.into_bytes()
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable report");
    v.push(b'\n');
    v
}

/// One query's fit as reported by `fit` and `pipeline`.
#[derive(Debug, Clone, Serialize)]
pub struct FitRow {
    pub query_id: String,
    pub method: FitMethod,
    /// `ok`, `theta-undefined`, or `error: …`.
    pub status: String,
    pub t: Option<f64>,
    pub u: Option<f64>,
    pub r: Option<f64>,
    pub theta: Option<f64>,
    pub residual: Option<f64>,
    pub clamped: Option<crate::estimation::ClampFlags>,
    pub theta_identified: bool,
    pub ci: Option<ParamIntervals>,
    pub estimator: &'static str,
}

impl FitRow {
    fn from_result(query: &str, res: Result<FitResult, EstimationError>, method: FitMethod) -> FitRow {
        let estimator = match method {
            FitMethod::ClosedForm => "closed-form inversion of four sequential probabilities (tool-defined)",
            FitMethod::Lsq => "weighted least squares over all sequential probabilities (tool-defined)",
        };
        let empty = |status: String| FitRow {
            query_id: query.to_string(),
            method,
            status,
            t: None,
            u: None,
            r: None,
            theta: None,
            residual: None,
            clamped: None,
            theta_identified: false,
            ci: None,
            estimator,
        };
        match res {
            Ok(fit) => {
                let p = fit.params;
                FitRow {
                    status: if fit.theta_identified { "ok" } else { "theta-undefined" }.into(),
                    t: Some(p.t()),
                    u: Some(p.u()),
                    r: Some(p.r()),
                    theta: fit.theta_identified.then_some(p.theta()),
                    residual: Some(fit.residual),
                    clamped: Some(fit.clamped),
                    theta_identified: fit.theta_identified,
                    ci: fit.ci,
                    ..empty(String::new())
                }
            }
            Err(EstimationError::Degenerate { t, u, r }) => FitRow {
                t: Some(t),
                u: Some(u),
                r: Some(r),
                ..empty("theta-undefined".into())
            },
            Err(e) => empty(format!("error: {e}")),
        }
    }

    fn model(&self) -> Option<ModelParams> {
        ModelParams::new(self.t?, self.u?, self.r?, self.theta?).ok()
    }

    fn is_error(&self) -> bool {
        self.status.starts_with("error")
    }
}

fn fitter(config: &RunConfig) -> Fitter {
    match config.method {
        FitMethod::ClosedForm => Fitter::ClosedForm,
        FitMethod::Lsq => Fitter::LeastSquares {
            init: None,
            options: LsqOptions { seed: config.seed.unwrap_or(0), ..Default::default() },
        },
    }
}

fn sequence_queries(table: &FrequencyTable, only: Option<&str>) -> Vec<String> {
    table
        .queries()
        .into_iter()
        .filter(|q| only.is_none_or(|o| o == q))
        .filter(|q| table.has_group(q, Group::Tur) || table.has_group(q, Group::Tru))
        .collect()
}

fn fit_rows(config: &RunConfig, input: &Input) -> Result<Vec<FitRow>, CliError> {
    let queries = sequence_queries(&input.table, config.query.as_deref());
    if queries.is_empty() {
        return Err(anyhow!("no sequence (TUR/TRU) groups found").into());
    }
    let fitter = fitter(config);
    let rows = queries
        .iter()
        .map(|q| {
            let res = match (config.bootstrap, &input.records) {
                (Some(b), Some(records)) => {
                    bootstrap_ci(records, q, &fitter, b, config.seed.expect("checked by check_command"))
                }
                (Some(_), None) => return Err(usage("--bootstrap needs record input, not a frequency table")),
                (None, _) => fitter.fit(&input.table, q),
            };
            Ok(FitRow::from_result(q, res, config.method))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(rows)
}

fn render_fit(format: OutputFormat, rows: &[FitRow]) -> Vec<u8> {
    if format == OutputFormat::Json {
        return to_json(&rows);
    }
    let header = [
        "query_id", "method", "status", "t", "u", "r", "theta", "residual", "clamped", "t_ci", "u_ci", "r_ci",
        "theta_ci",
    ];
    let ci = |i: Option<crate::estimation::Interval>| {
        i.map_or_else(|| "n/a".into(), |i| format!("[{}, {}]", fmt_num(i.lo), fmt_num(i.hi)))
    };
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let clamped = row.clamped.map_or_else(
                || "n/a".into(),
                |c| {
                    let names: Vec<&str> = [("t", c.t), ("u", c.u), ("r", c.r), ("theta", c.theta)]
                        .iter()
                        .filter(|(_, on)| *on)
                        .map(|(n, _)| *n)
                        .collect();
                    if names.is_empty() {
                        "none".into()
                    } else {
                        names.join("+")
                    }
                },
            );
            vec![
                row.query_id.clone(),
                row.method.to_string(),
                row.status.clone(),
                fmt_opt(row.t),
                fmt_opt(row.u),
                fmt_opt(row.r),
                row.theta.map_or_else(|| "undefined".into(), fmt_num),
                fmt_opt(row.residual),
                clamped,
                ci(row.ci.map(|c| c.t)),
                ci(row.ci.map(|c| c.u)),
                ci(row.ci.map(|c| c.r)),
                ci(row.ci.map(|c| c.theta)),
            ]
        })
        .collect();
    render(format, &header, &body)
}

pub fn cmd_fit(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let input = load_input(config)?;
    let rows = fit_rows(config, &input)?;
    if let Some(bad) = rows.iter().find(|r| r.is_error()) {
        return Err(anyhow!("fit of query {}: {}", bad.query_id, &bad.status["error: ".len()..]).into());
    }
    emit(config, &render_fit(config.format, &rows), stdout)
}

/// The model used for quantum predictions of `query`: `--model` when given,
/// otherwise a fit of the data.
fn model_for(config: &RunConfig, table: &FrequencyTable, query: &str) -> Option<ModelParams> {
    config.model.or_else(|| fitter(config).fit(table, query).ok().map(|f| f.params))
}

fn delta_report_rows(config: &RunConfig, table: &FrequencyTable) -> Result<Vec<DeltaRow>, CliError> {
    let mut rows = delta_rows(table, |q| model_for(config, table, q)).map_err(|e| match e {
        CorrectionError::NoPairGroups => CliError::Runtime(anyhow!("no conjunction/disjunction groups found")),
        other => CliError::Runtime(other.into()),
    })?;
    if let Some(q) = &config.query {
        rows.retain(|r| &r.query_id == q);
    }
    Ok(rows)
}

fn render_delta(format: OutputFormat, rows: &[DeltaRow]) -> Vec<u8> {
    if format == OutputFormat::Json {
        return to_json(&rows);
    }
    let header = [
        "query_id", "signs", "p_or", "p_and", "p_u", "p_r", "delta", "std_err", "z", "violation", "quantum_delta",
        "conj_fallacy_u", "conj_margin_u", "conj_fallacy_r", "conj_margin_r", "disj_fallacy_u", "disj_margin_u",
        "disj_fallacy_r", "disj_margin_r", "notes",
    ];
    let flag = |b: bool| if b { "yes" } else { "no" }.to_string();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let rep = row.report.as_ref();
            vec![
                row.query_id.clone(),
                format!("U{}R{}", row.signs.0, row.signs.1),
                fmt_opt(row.p_or),
                fmt_opt(row.p_and),
                fmt_opt(row.p_u),
                fmt_opt(row.p_r),
                fmt_opt(rep.map(|r| r.delta)),
                fmt_opt(rep.map(|r| r.std_err)),
                fmt_opt(rep.map(|r| r.z_score)),
                rep.map_or_else(|| "n/a".into(), |r| flag(r.violation)),
                fmt_opt(rep.and_then(|r| r.quantum_predicted_delta)),
                flag(row.conjunction.vs_u()),
                fmt_opt(row.conjunction.margin_u),
                flag(row.conjunction.vs_r()),
                fmt_opt(row.conjunction.margin_r),
                flag(row.disjunction.vs_u()),
                fmt_opt(row.disjunction.margin_u),
                flag(row.disjunction.vs_r()),
                fmt_opt(row.disjunction.margin_r),
                row.notes.join("; "),
            ]
        })
        .collect();
    render(format, &header, &body)
}

pub fn cmd_delta(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let input = load_input(config)?;
    let rows = delta_report_rows(config, &input.table)?;
    emit(config, &render_delta(config.format, &rows), stdout)
}

/// One conditional of the comparison report.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub query_id: String,
    pub event: String,
    pub group: Group,
    pub empirical: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n: u64,
    pub quantum: Option<f64>,
    pub bayes_cross_order: Option<f64>,
    pub bayes_same_order: Option<f64>,
    pub quantum_error: Option<f64>,
    pub bayes_error: Option<f64>,
}

/// `P(target | given, T+)` for every sign pair, in both directions.
pub fn compare_rows(
    table: &FrequencyTable,
    query: &str,
    model: Option<&ModelParams>,
    smoothing: f64,
) -> Vec<CompareRow> {
    let t = Question::t(Sign::Plus);
    let mut rows = Vec::new();
    for (target_dim, given_dim, group) in [
        (Dimension::Reliability, Dimension::Understandability, Group::Tur),
        (Dimension::Understandability, Dimension::Reliability, Group::Tru),
    ] {
        let joint = fit_joint_from_sequences(table, query, group, smoothing).ok();
        for sg in Sign::BOTH {
            for st in Sign::BOTH {
                let target = Question::new(target_dim, st);
                let given = Question::new(given_dim, sg);
                let event = Event::conditional(target, &[t, given]);
                let freq = table.get(query, group, &event);
                let empirical = freq.and_then(|f| f.p_hat());
                let ci = freq.and_then(|f| f.wilson());
                let quantum = model.map(|m| transition_prob(&m.vector(target), &m.vector(given)));
                let cross = bayes_cross_order(table, query, target, given, Sign::Plus).ok();
                let bayes_same_order =
                    joint.as_ref().and_then(|j| bayes_conditional(&j.joint, &[target], &[t, given]).ok());
                let err = |p: Option<f64>| empirical.zip(p).map(|(e, p)| (p - e).abs());
                rows.push(CompareRow {
                    query_id: query.to_string(),
                    event: event.to_string(),
                    group,
                    empirical,
                    ci_lo: ci.map(|c| c.0),
                    ci_hi: ci.map(|c| c.1),
                    n: freq.and_then(|f| f.n()).unwrap_or(0),
                    quantum,
                    bayes_cross_order: cross,
                    bayes_same_order,
                    quantum_error: err(quantum),
                    bayes_error: err(cross),
                });
            }
        }
    }
    rows
}

fn render_compare(format: OutputFormat, rows: &[CompareRow]) -> Vec<u8> {
    if format == OutputFormat::Json {
        return to_json(&rows);
    }
    let header = [
        "query_id", "event", "group", "empirical", "ci_lo", "ci_hi", "n", "quantum", "bayes_cross_order",
        "bayes_same_order", "quantum_error", "bayes_error",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.query_id.clone(),
                r.event.clone(),
                r.group.to_string(),
                fmt_opt(r.empirical),
                fmt_opt(r.ci_lo),
                fmt_opt(r.ci_hi),
                r.n.to_string(),
                fmt_opt(r.quantum),
                fmt_opt(r.bayes_cross_order),
                fmt_opt(r.bayes_same_order),
                fmt_opt(r.quantum_error),
                fmt_opt(r.bayes_error),
            ]
        })
        .collect();
    render(format, &header, &body)
}

fn all_compare_rows(config: &RunConfig, table: &FrequencyTable) -> Result<Vec<CompareRow>, CliError> {
    let queries: Vec<String> = sequence_queries(table, config.query.as_deref())
        .into_iter()
        .filter(|q| table.has_group(q, Group::Tur) && table.has_group(q, Group::Tru))
        .collect();
    if queries.is_empty() {
        return Err(anyhow!("comparison needs both TUR and TRU groups").into());
    }
    Ok(queries
        .iter()
        .flat_map(|q| compare_rows(table, q, model_for(config, table, q).as_ref(), config.smoothing))
        .collect())
}

pub fn cmd_compare(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let input = load_input(config)?;
    let rows = all_compare_rows(config, &input.table)?;
    emit(config, &render_compare(config.format, &rows), stdout)
}

pub fn cmd_pipeline(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let dir = config.output.as_ref().expect("checked by check_command");
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = protocol(config);
    let records = run_protocol(&p);
    let records_path = dir.join("records.csv");
    write_records(&records_path, Format::Csv, &records).map_err(anyhow::Error::from)?;
    let table = aggregate(&records).map_err(anyhow::Error::from)?;

    let mut freq = Vec::new();
    table.write_csv(&mut freq).map_err(anyhow::Error::from)?;
    let input = Input { records: Some(records), table };
    let fits = fit_rows(config, &input)?;
    // A known generator takes precedence over the estimate for predictions.
    let fitted = fits.first().and_then(FitRow::model);
    let predict = RunConfig { model: config.model.or(fitted), ..config.clone() };
    let deltas = delta_report_rows(&predict, &input.table)?;
    let compare = all_compare_rows(&predict, &input.table)?;

    let files: [(&str, Vec<u8>); 4] = [
        ("frequencies.csv", freq),
        ("fit.json", to_json(&fits)),
        ("delta.csv", render_delta(OutputFormat::Csv, &deltas)),
        ("compare.csv", render_compare(OutputFormat::Csv, &compare)),
    ];
    for (name, bytes) in &files {
        let path = dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut summary = group_summary(&p);
    summary.push_str(&format!("wrote {}", records_path.display()));
    for (name, _) in &files {
        summary.push_str(&format!(", {}", dir.join(name).display()));
    }
    summary.push('\n');
    stdout.write_all(summary.as_bytes()).context("writing summary")?;
    Ok(())
}
