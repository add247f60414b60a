//! Command-line front end: `parse`, `generate`, `evaluate`, `simulate` and
//! `bench`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::benchgen::{generate, GenerationConfig};
use crate::convergence::{
    simulate_nested, simulate_parallel, sweep, sweep_csv, theoretical, ParallelModel, SimConfig, SweepSpec,
};
use crate::engine::{Engine, EngineConfig, ParsedLine};
use crate::error::{KelpError, Result};
use crate::evolution::EvolutionConfig;
use crate::freqmap::SlopeMode;
use crate::ingest::{BatchStats, TokenizerConfig};
use crate::metrics::{evaluate, read_file, read_parsed, read_truth, Grouping};

#[derive(Debug, Parser)]
#[command(name = "kelp", version, about = "Online log template mining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine templates from a log file or stdin.
    Parse(ParseArgs),
    /// Write a synthetic benchmark log with ground truth.
    Generate(GenerateArgs),
    /// Score parsed output against ground truth.
    Evaluate(EvaluateArgs),
    /// Monte-Carlo convergence estimates.
    Simulate(SimulateArgs),
    /// Generate, parse and score in memory; report throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SlopeArg {
    LnRank,
    RawRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParallelArg {
    TargetHits,
    DistinctValues,
}

#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    /// Columns with more distinct values than this become wildcards.
    #[arg(long, default_value_t = 8)]
    pub branch_threshold: usize,
    /// Rows a dynamic leaf keeps before the oldest are discarded.
    #[arg(long, default_value_t = 4096)]
    pub trim_capacity: usize,
    /// Lines per bucket between unconditional re-evaluations.
    #[arg(long, default_value_t = 10_000)]
    pub reeval_interval: u64,
    /// Minimum lines per value before a column may be split on.
    #[arg(long, default_value_t = 2)]
    pub min_support: usize,
    /// Extra token separators on top of whitespace.
    #[arg(long, default_value = "")]
    pub delimiters: String,
    /// Lines ingested between root validations.
    #[arg(long, default_value_t = 2048)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = SlopeArg::LnRank)]
    pub slope_mode: SlopeArg,
}

impl Default for TuningArgs {
    fn default() -> Self {
        TuningArgs {
            branch_threshold: 8,
            trim_capacity: 4096,
            reeval_interval: 10_000,
            min_support: 2,
            delimiters: String::new(),
            batch_size: 2048,
            slope_mode: SlopeArg::LnRank,
        }
    }
}

impl TuningArgs {
    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            tokenizer: TokenizerConfig::with_delimiters(&self.delimiters),
            evolution: EvolutionConfig {
                branch_threshold: self.branch_threshold,
                trim_capacity: self.trim_capacity,
                reeval_interval: self.reeval_interval,
                min_support: self.min_support,
            },
            slope_mode: match self.slope_mode {
                SlopeArg::LnRank => SlopeMode::LnRank,
                SlopeArg::RawRank => SlopeMode::RawRank,
            },
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ParseArgs {
    /// Input log; `-` or absent reads stdin.
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Format of the per-line output.
    #[arg(long, value_enum, default_value_t = OutputFormat::Jsonl)]
    pub format: OutputFormat,
    /// Template dump destination; stdout when absent.
    #[arg(long)]
    pub templates_out: Option<PathBuf>,
    /// Per-line structured output.
    #[arg(long)]
    pub parsed_out: Option<PathBuf>,
    /// Do not print the stats line.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub tier: u8,
    #[arg(long, default_value_t = 100_000)]
    pub lines: usize,
    /// Template pool file; the bundled pool when absent.
    #[arg(long)]
    pub pool: Option<PathBuf>,
}

impl DatasetArgs {
    fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            seed: self.seed,
            n_lines: self.lines,
            tier: self.tier,
            pool_path: self.pool.clone(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// File stem; defaults to `synthetic_tier<N>`.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Parsed output (JSONL or CSV).
    pub parsed: PathBuf,
    /// Ground truth CSV.
    pub truth: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 10)]
    pub k: u64,
    #[arg(long, default_value_t = 4)]
    pub m: u32,
    #[arg(long, default_value_t = 3)]
    pub tau: u64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ParallelArg::TargetHits)]
    pub parallel_model: ParallelArg,
    /// Emit a CSV sweep instead of a single point.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [2u64, 3, 4])]
    pub ks: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2, 3, 4])]
    pub ms: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = [2u64, 3])]
    pub taus: Vec<u64>,
    /// Sweep CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

/// What `parse` reports on completion.
#[derive(Debug, Clone, Serialize)]
pub struct ParseSummary {
    pub lines: u64,
    pub buckets: usize,
    pub templates: usize,
    pub elapsed_seconds: f64,
    pub lines_per_sec: f64,
    pub stats: BatchStats,
}

impl ParseSummary {
    pub fn line(&self) -> String {
        format!(
            "lines={} buckets={} templates={} elapsed={:.3}s lines_per_sec={:.0}",
            self.lines, self.buckets, self.templates, self.elapsed_seconds, self.lines_per_sec
        )
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("kelp: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Parse(a) => {
            let s = cmd_parse(&a)?;
            if !a.quiet {
                eprintln!("{}", s.line());
            }
            Ok(())
        }
        Command::Generate(a) => cmd_generate(&a).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn open_input(path: Option<&Path>) -> Result<Box<dyn BufRead>> {
    Ok(match path {
        None => Box::new(BufReader::new(io::stdin())),
        Some(p) if p.as_os_str() == "-" => Box::new(BufReader::new(io::stdin())),
        Some(p) => Box::new(BufReader::with_capacity(1 << 16, File::open(p).map_err(KelpError::file(p))?)),
    })
}

/// Reads newline-terminated lines, replacing invalid UTF-8.
fn for_each_line(mut r: impl BufRead, mut f: impl FnMut(String) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if r.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        let line = match String::from_utf8(std::mem::take(&mut buf)) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        };
        f(line)?;
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(KelpError::file(path))?))
}

#[derive(Serialize)]
struct CsvParsedRow<'a> {
    line_no: u64,
    event_id: &'a str,
    template: &'a str,
    variables: String,
}

/// Streams `cmd_parse`'s per-line records to a writer.
pub struct ParsedWriter<W: Write> {
    format: OutputFormat,
    jsonl: Option<W>,
    csv: Option<csv::Writer<W>>,
}

impl<W: Write> ParsedWriter<W> {
    pub fn new(w: W, format: OutputFormat) -> Self {
        match format {
            OutputFormat::Jsonl => ParsedWriter { format, jsonl: Some(w), csv: None },
            OutputFormat::Csv => ParsedWriter {
                format,
                jsonl: None,
                csv: Some(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)),
            },
        }
    }

    pub fn write(&mut self, p: &ParsedLine) -> Result<()> {
        match self.format {
            OutputFormat::Jsonl => {
                let w = self.jsonl.as_mut().expect("jsonl writer");
                serde_json::to_writer(&mut *w, p)?;
                w.write_all(b"\n")?;
            }
            OutputFormat::Csv => {
                let row = CsvParsedRow {
                    line_no: p.line_no,
                    event_id: &p.event_id,
                    template: &p.template,
                    variables: serde_json::to_string(&p.variables)?,
                };
                self.csv.as_mut().expect("csv writer").serialize(row)?;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if let Some(mut w) = self.jsonl {
            w.flush()?;
        }
        if let Some(mut w) = self.csv {
            w.flush()?;
        }
        Ok(())
    }
}

/// Streams the input through the engine, then writes the template dump and,
/// if requested, the per-line output. Reading stdin with `--parsed-out`
/// keeps the input in memory for the second pass.
pub fn cmd_parse(a: &ParseArgs) -> Result<ParseSummary> {
    let start = Instant::now();
    let cfg = a.tuning.engine_config();
    let batch_size = cfg.batch_size;
    let mut engine = Engine::new(cfg)?;
    let from_stdin = a.input.as_deref().is_none_or(|p| p.as_os_str() == "-");
    let keep = a.parsed_out.is_some() && from_stdin;
    let mut kept: Vec<String> = Vec::new();
    let mut batch: Vec<String> = Vec::with_capacity(batch_size);
    for_each_line(open_input(a.input.as_deref())?, |line| {
        if keep {
            kept.push(line.clone());
        }
        batch.push(line);
        if batch.len() == batch_size {
            engine.ingest_batch(&batch)?;
            batch.clear();
        }
        Ok(())
    })?;
    if !batch.is_empty() {
        engine.ingest_batch(&batch)?;
    }
    engine.flush()?;

    let dump = engine.template_dump()?;
    match &a.templates_out {
        Some(p) => std::fs::write(p, dump).map_err(KelpError::file(p))?,
        None => io::stdout().lock().write_all(dump.as_bytes())?,
    }

    if let Some(out) = &a.parsed_out {
        let mut w = ParsedWriter::new(create(out)?, a.format);
        let mut line_no = 0u64;
        let mut emit = |line: String| -> Result<()> {
            line_no += 1;
            if let Some(p) = engine.match_line(&line, line_no)? {
                w.write(&p)?;
            }
            Ok(())
        };
        if keep {
            for line in std::mem::take(&mut kept) {
                emit(line)?;
            }
        } else {
            for_each_line(open_input(a.input.as_deref())?, emit)?;
        }
        w.finish()?;
    }

    let elapsed = start.elapsed().as_secs_f64();
    let stats = *engine.stats();
    let summary = ParseSummary {
        lines: stats.lines,
        buckets: engine.bucket_count(),
        templates: engine.templates()?.len(),
        elapsed_seconds: elapsed,
        lines_per_sec: if elapsed > 0.0 { stats.lines as f64 / elapsed } else { 0.0 },
        stats,
    };
    info!("{summary:?}");
    Ok(summary)
}

/// Writes `<stem>.log`, `<stem>_truth.csv` and `<stem>_manifest.json`.
/// Returns the three paths.
pub fn cmd_generate(a: &GenerateArgs) -> Result<[PathBuf; 3]> {
    let cfg = a.dataset.generation_config();
    cfg.validate()?;
    let data = generate(&cfg)?;
    let stem = a.name.clone().unwrap_or_else(|| format!("synthetic_tier{}", cfg.tier));
    std::fs::create_dir_all(&a.out_dir).map_err(KelpError::file(&a.out_dir))?;
    let paths = [
        a.out_dir.join(format!("{stem}.log")),
        a.out_dir.join(format!("{stem}_truth.csv")),
        a.out_dir.join(format!("{stem}_manifest.json")),
    ];
    data.write(&paths[0], &paths[1], &paths[2])?;
    info!("wrote {} lines over {} templates to {}", cfg.n_lines, data.manifest.template_count, paths[0].display());
    Ok(paths)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let pred = read_parsed(&read_file(&a.parsed)?)?;
    let truth = read_truth(&read_file(&a.truth)?)?;
    let report = evaluate(&pred, &truth)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let parallel = match a.parallel_model {
        ParallelArg::TargetHits => ParallelModel::TargetHits,
        ParallelArg::DistinctValues => ParallelModel::DistinctValues,
    };
    if a.sweep {
        let rows = sweep(&SweepSpec {
            ks: a.ks.clone(),
            ms: a.ms.clone(),
            taus: a.taus.clone(),
            trials: a.trials,
            seed: a.seed,
            parallel,
            nested: true,
        })?;
        let csv = sweep_csv(&rows)?;
        match &a.out {
            Some(p) => std::fs::write(p, csv).map_err(KelpError::file(p))?,
            None => io::stdout().lock().write_all(csv.as_bytes())?,
        }
        return Ok(());
    }
    let cfg = SimConfig { k: a.k, m: a.m, tau: a.tau, trials: a.trials, seed: a.seed, parallel };
    let nested = simulate_nested(&cfg)?;
    let par = if cfg.validate().is_ok() { simulate_parallel(&cfg)? } else { f64::NAN };
    let th = theoretical(&cfg);
    info!("theory: {th:?}");
    println!("nested_mc={nested:.3} parallel_mc={par:.3} ratio={:.3}", nested / par);
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchReport {
    lines: usize,
    tier: u8,
    gt_templates: usize,
    templates: usize,
    parse_seconds: f64,
    lines_per_sec: f64,
    report: crate::metrics::Report,
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let gen = a.dataset.generation_config();
    gen.validate()?;
    let data = generate(&gen)?;
    let start = Instant::now();
    let mut engine = Engine::new(a.tuning.engine_config())?;
    engine.ingest(data.lines())?;
    engine.flush()?;
    let parse_seconds = start.elapsed().as_secs_f64();
    let mut parsed = Vec::with_capacity(gen.n_lines);
    for (i, l) in data.lines().enumerate() {
        if let Some(p) = engine.match_line(l, i as u64 + 1)? {
            parsed.push(p);
        }
    }
    let pred = Grouping::from_parsed(&parsed)?;
    let truth = read_truth(&data.truth)?;
    let report = evaluate(&pred, &truth)?;
    let out = BenchReport {
        lines: gen.n_lines,
        tier: gen.tier,
        gt_templates: data.manifest.template_count,
        templates: engine.templates()?.len(),
        parse_seconds,
        lines_per_sec: gen.n_lines as f64 / parse_seconds.max(f64::MIN_POSITIVE),
        report,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

/// Maps a clap failure onto the exit-code convention: help and version exit
/// 0, anything else is a usage error.
pub fn usage_exit_code(e: &clap::Error) -> i32 {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
        _ => 1,
    }
}
