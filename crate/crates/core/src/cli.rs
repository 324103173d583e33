//! Command-line front end.
//!
//! Exit codes: 0 success, 1 internal error, 2 domain error (bad LaTeX, bad
//! model, invalid manifest row), 3 I/O error, 4 bad flags. JSON output is
//! compact and newline-terminated. Per-line commands fan work out over a
//! thread pool and write results in input order.

use std::collections::{HashMap, HashSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::Serialize;

use crate::cmerfit::{plan_resolution, FitError, FitParams, PlanReport};
use crate::curation::{
    assign_tier, clean_with_diagnostics, compute_stats, compute_stats_lenient, difficulty_score, is_valid,
    parse_manifest_line, read_manifest, run_pipeline, CorpusStats, CurationConfig, CurationError, DifficultyProfile,
    IdSet, LengthUnit, Provenance, Sample, Stage, StatsAccumulator,
};
use crate::grammar::Grammar;
use crate::latex::{lex, parse_with, render, Diagnostic, ExprNode, ParseError, ParseMode};
use crate::metrics::{aggregate, score_sample, Report};
use crate::sml::{decode_sml, encode_sml, SmlError, SmlSequence};
use crate::tokenizer::{default_specials, load_model, save_model, specials_for, train_bpe, TokenizerError};

/// Environment variable naming the default configuration directory.
pub const CONFIG_DIR_ENV: &str = "EXPRKIT_CONFIG_DIR";

/// Lines handed to the thread pool at a time.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Internal = 1,
    Domain = 2,
    Io = 3,
    Usage = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    fn domain(message: impl Into<String>) -> Self {
        CliError { code: ExitCode::Domain, message: message.into() }
    }

    fn io(context: impl std::fmt::Display, e: std::io::Error) -> Self {
        CliError { code: ExitCode::Io, message: format!("{context}: {e}") }
    }

    fn at_line(self, line: usize) -> Self {
        CliError { message: format!("line {line}: {}", self.message), ..self }
    }
}

impl From<ParseError> for CliError {
    /// The message is the error as a JSON object: code, message and span.
    fn from(e: ParseError) -> Self {
        CliError::domain(to_json(&Diagnostic::from(&e)))
    }
}

impl From<SmlError> for CliError {
    fn from(e: SmlError) -> Self {
        CliError::domain(format!("{}: {e}", e.code()))
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        CliError::domain(e.to_string())
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::Io(io) => CliError::io("tokenizer model", io),
            other => CliError::domain(other.to_string()),
        }
    }
}

impl From<CurationError> for CliError {
    fn from(e: CurationError) -> Self {
        match e {
            CurationError::Io { .. } => CliError { code: ExitCode::Io, message: e.to_string() },
            other => CliError::domain(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Strict,
    Lenient,
}

impl From<Mode> for ParseMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Strict => ParseMode::Strict,
            Mode::Lenient => ParseMode::Lenient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Parser)]
#[command(name = "exprkit", version, about = "LaTeX math parsing, serialization, tokenization, scoring and curation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Parse mode. Lenient repairs malformed input and reports each repair
    /// on stderr.
    #[arg(long, global = true, value_enum, default_value_t = Mode::Lenient)]
    mode: Mode,
    /// Output format. Every command defaults to json except `report`.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Directory whose curation.toml, difficulty.toml and
    /// specials_extra.txt override the shipped defaults. Falls back to
    /// $EXPRKIT_CONFIG_DIR.
    #[arg(long, global = true)]
    config_dir: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Input file; standard input when absent or `-`.
    #[arg(long = "in", alias = "input")]
    input: Option<PathBuf>,
    /// Treat each input line as a separate item.
    #[arg(long)]
    lines: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse LaTeX into a JSON syntax tree.
    Parse {
        #[command(flatten)]
        io: InputArgs,
        /// Expression given inline instead of an input file.
        #[arg(short = 'e', long, conflicts_with_all = ["input", "lines"])]
        expr: Option<String>,
    },
    /// Render a JSON syntax tree to canonical LaTeX.
    Render {
        #[command(flatten)]
        io: InputArgs,
    },
    /// Structured token sequences.
    Sml {
        #[command(subcommand)]
        cmd: SmlCmd,
    },
    /// Byte-level BPE tokenizer.
    Tok {
        #[command(subcommand)]
        cmd: TokCmd,
    },
    /// Plan the resize of an image to a patch budget.
    Fit {
        /// Image height in pixels.
        #[arg(long)]
        h: u32,
        /// Image width in pixels.
        #[arg(long)]
        w: u32,
        /// Patch side in pixels.
        #[arg(long)]
        patch: u32,
        /// Maximum number of patches.
        #[arg(long)]
        budget: u32,
    },
    /// Score predictions against references joined on `id`.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Corpus curation over JSONL manifests.
    Curate {
        #[command(subcommand)]
        cmd: CurateCmd,
    },
    /// Print a score report or corpus statistics JSON as a table.
    Report {
        #[arg(long = "in", alias = "input")]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Repr {
    Latex,
    Ast,
}

#[derive(Debug, Subcommand)]
enum SmlCmd {
    /// LaTeX or a JSON tree to a token sequence.
    Encode {
        #[command(flatten)]
        io: InputArgs,
        #[arg(long, value_enum, default_value_t = Repr::Latex)]
        from: Repr,
    },
    /// A token sequence, as a JSON array or in text form, to LaTeX or a
    /// JSON tree.
    Decode {
        #[command(flatten)]
        io: InputArgs,
        #[arg(long, value_enum, default_value_t = Repr::Latex)]
        to: Repr,
    },
}

#[derive(Debug, Subcommand)]
enum TokCmd {
    /// Train on a corpus with one expression per line.
    Train {
        #[arg(long = "in", alias = "input")]
        input: Option<PathBuf>,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long = "out", alias = "output")]
        output: PathBuf,
        /// Extra special tokens, one per line, added to the command table.
        #[arg(long)]
        specials: Option<PathBuf>,
    },
    /// Each input line to a JSON array of ids.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", alias = "input")]
        input: Option<PathBuf>,
    },
    /// Each JSON id array to a line of text.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", alias = "input")]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Unit {
    Lexer,
    Characters,
}

#[derive(Debug, Args)]
struct CurateArgs {
    #[arg(long = "in", alias = "input")]
    input: Option<PathBuf>,
    /// Output manifest; standard output when absent.
    #[arg(long = "out", alias = "output")]
    output: Option<PathBuf>,
    /// Curation config TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Difficulty profile TOML.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, value_enum)]
    length_unit: Option<Unit>,
}

#[derive(Debug, Subcommand)]
enum CurateCmd {
    /// Strip citation, label and similar tags.
    Clean {
        #[command(flatten)]
        args: CurateArgs,
    },
    /// Keep valid samples and record the dropped ones.
    Filter {
        #[command(flatten)]
        args: CurateArgs,
        /// Where dropped samples are recorded; standard error when absent.
        #[arg(long)]
        provenance: Option<PathBuf>,
    },
    /// Length and line-count bucket tables.
    Stats {
        #[command(flatten)]
        args: CurateArgs,
    },
    /// Attach stats and a difficulty tier to each sample.
    Tier {
        #[command(flatten)]
        args: CurateArgs,
    },
    /// Clean, validate, deduplicate, bucket and tier in one pass.
    Run {
        #[command(flatten)]
        args: CurateArgs,
        /// Where dropped samples are recorded; standard error when absent.
        #[arg(long)]
        provenance: Option<PathBuf>,
        /// Where statistics are written; standard error when absent.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
}

/// Entry point for the binary: real arguments, environment and streams.
pub fn main_entry() -> i32 {
    let stdin = std::io::stdin();
    let mut stdin = stdin.lock();
    let mut stdout = BufWriter::new(std::io::stdout().lock());
    let mut stderr = std::io::stderr().lock();
    let env_dir = std::env::var_os(CONFIG_DIR_ENV).map(PathBuf::from);
    let code = run(std::env::args_os(), env_dir, &mut stdin, &mut stdout, &mut stderr);
    if let Err(e) = stdout.flush() {
        let _ = writeln!(stderr, "error: writing output: {e}");
        return ExitCode::Io as i32;
    }
    code
}

/// Runs one invocation against the given streams and returns the exit code.
/// `env_config_dir` stands in for $EXPRKIT_CONFIG_DIR.
pub fn run<I, T>(
    args: I,
    env_config_dir: Option<PathBuf>,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            // help and version requests are not errors
            return if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                ExitCode::Usage as i32
            } else {
                let _ = stdout.write_all(text.as_bytes());
                ExitCode::Ok as i32
            };
        }
    };
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        let pool = match cli.jobs {
            Some(0) => return Err(CliError { code: ExitCode::Usage, message: "--jobs must be positive".into() }),
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError { code: ExitCode::Internal, message: format!("thread pool: {e}") })?,
            ),
            None => None,
        };
        Ctx { cli: &cli, pool: pool.as_ref(), env_config_dir, stdin, stdout, stderr }.dispatch()
    }));
    match outcome {
        Ok(Ok(())) => ExitCode::Ok as i32,
        Ok(Err(e)) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code as i32
        }
        Err(_) => {
            let _ = writeln!(stderr, "error: internal invariant violated");
            ExitCode::Internal as i32
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    pool: Option<&'a ThreadPool>,
    env_config_dir: Option<PathBuf>,
    stdin: &'a mut dyn BufRead,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

/// Output for one input item plus warnings for stderr.
struct Item {
    output: String,
    warnings: Vec<String>,
}

impl Item {
    fn plain(output: String) -> Self {
        Item { output, warnings: Vec::new() }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn is_stdin(p: &Option<PathBuf>) -> bool {
    p.as_deref().is_none_or(|p| p == Path::new("-"))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path.display(), e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path.display(), e))
}

fn read_path(p: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(p).map_err(|e| CliError::io(p.display(), e))
}

fn write_file(p: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(p, text).map_err(|e| CliError::io(p.display(), e))
}

fn write_out(w: &mut dyn Write, s: &str) -> Result<(), CliError> {
    w.write_all(s.as_bytes()).map_err(|e| CliError::io("writing output", e))
}

fn line_out(w: &mut dyn Write, s: &str) -> Result<(), CliError> {
    writeln!(w, "{s}").map_err(|e| CliError::io("writing output", e))
}

fn warn(err: &mut dyn Write, line: Option<usize>, warnings: &[String]) {
    for w in warnings {
        let _ = match line {
            Some(n) => writeln!(err, "warning: line {n}: {w}"),
            None => writeln!(err, "warning: {w}"),
        };
    }
}

fn in_pool<R: Send>(pool: Option<&ThreadPool>, op: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(op),
        None => op(),
    }
}

/// Calls `f` with the named file, or with `stdin` when no file is named.
fn with_input<R>(
    stdin: &mut dyn BufRead,
    input: &Option<PathBuf>,
    f: impl FnOnce(&mut dyn BufRead) -> Result<R, CliError>,
) -> Result<R, CliError> {
    if is_stdin(input) {
        f(stdin)
    } else {
        f(&mut open(input.as_deref().expect("checked above"))?)
    }
}

/// Maps `f` over lines in parallel chunks, then feeds the results to `sink`
/// sequentially in input order. Line numbers are 1-based.
fn par_lines<T, F, S>(pool: Option<&ThreadPool>, input: &mut dyn BufRead, f: F, mut sink: S) -> Result<(), CliError>
where
    T: Send,
    F: Fn(usize, &str) -> Result<T, CliError> + Sync,
    S: FnMut(usize, T) -> Result<(), CliError>,
{
    let mut lines = input.lines();
    let mut first = 1;
    loop {
        let chunk = lines
            .by_ref()
            .take(CHUNK)
            .collect::<Result<Vec<String>, _>>()
            .map_err(|e| CliError::io("reading input", e))?;
        if chunk.is_empty() {
            return Ok(());
        }
        let results: Vec<_> =
            in_pool(pool, || chunk.par_iter().enumerate().map(|(i, l)| f(first + i, l)).collect());
        for (i, r) in results.into_iter().enumerate() {
            let n = first + i;
            let v = r.map_err(|e| if e.code == ExitCode::Domain { e.at_line(n) } else { e })?;
            sink(n, v).map_err(|e| if e.code == ExitCode::Domain { e.at_line(n) } else { e })?;
        }
        first += chunk.len();
    }
}

/// Parses manifest lines in parallel, skipping blank ones, and rejects
/// duplicate ids.
fn par_manifest<T, F, S>(pool: Option<&ThreadPool>, input: &mut dyn BufRead, f: F, mut sink: S) -> Result<(), CliError>
where
    T: Send,
    F: Fn(Sample) -> Result<T, CliError> + Sync,
    S: FnMut(usize, T) -> Result<(), CliError>,
{
    let mut ids = IdSet::default();
    par_lines(
        pool,
        input,
        |n, line| {
            if line.trim().is_empty() {
                return Ok(None);
            }
            let s = parse_manifest_line(line, n)?;
            let id = s.id.clone();
            Ok(Some((id, f(s)?)))
        },
        |n, v| match v {
            Some((id, t)) => {
                ids.insert(&id)?;
                sink(n, t)
            }
            None => Ok(()),
        },
    )
}

struct Parsed {
    tree: ExprNode,
    warnings: Vec<String>,
}

fn parse_item(s: &str, mode: ParseMode) -> Result<Parsed, CliError> {
    let out = parse_with(&lex(s), mode, Grammar::shipped())?;
    let warnings = out
        .diagnostics
        .iter()
        .map(|d| format!("repaired {} at {}..{}: {}", d.code, d.span.start, d.span.end, d.message))
        .collect();
    Ok(Parsed { tree: out.tree, warnings })
}

fn tree_json(s: &str) -> Result<ExprNode, CliError> {
    serde_json::from_str(s).map_err(|e| CliError::domain(format!("invalid tree JSON: {e}")))
}

impl Ctx<'_> {
    fn format_or(&self, default: Format) -> Format {
        self.cli.format.unwrap_or(default)
    }

    fn config_file(&self, name: &str) -> Option<PathBuf> {
        let dir = self.cli.config_dir.as_ref().or(self.env_config_dir.as_ref())?;
        Some(dir.join(name)).filter(|p| p.exists())
    }

    fn read_all(&mut self, input: &Option<PathBuf>) -> Result<String, CliError> {
        with_input(&mut *self.stdin, input, |r| {
            let mut s = String::new();
            r.read_to_string(&mut s).map_err(|e| CliError::io("reading input", e))?;
            Ok(s)
        })
    }

    /// Applies `f` to each line, or to the whole input without `--lines`,
    /// writing one output line per item.
    fn map_items<F>(&mut self, io: &InputArgs, f: F) -> Result<(), CliError>
    where
        F: Fn(&str) -> Result<Item, CliError> + Sync,
    {
        if !io.lines {
            let text = self.read_all(&io.input)?;
            let item = f(text.strip_suffix('\n').unwrap_or(&text))?;
            warn(self.stderr, None, &item.warnings);
            return line_out(self.stdout, &item.output);
        }
        let (pool, out, err) = (self.pool, &mut *self.stdout, &mut *self.stderr);
        with_input(&mut *self.stdin, &io.input, |r| {
            par_lines(pool, r, |_, line| f(line), |n, item| {
                warn(err, Some(n), &item.warnings);
                line_out(out, &item.output)
            })
        })
    }

    fn dispatch(&mut self) -> Result<(), CliError> {
        let cli = self.cli;
        match &cli.command {
            Command::Parse { io, expr } => self.parse(io, expr.as_deref()),
            Command::Render { io } => self.map_items(io, |s| Ok(Item::plain(render(&tree_json(s)?)))),
            Command::Sml { cmd } => self.sml(cmd),
            Command::Tok { cmd } => self.tok(cmd),
            Command::Fit { h, w, patch, budget } => self.fit(*h, *w, *patch, *budget),
            Command::Score { pred, reference } => self.score(pred, reference),
            Command::Curate { cmd } => self.curate(cmd),
            Command::Report { input } => self.report(input),
        }
    }

    fn parse(&mut self, io: &InputArgs, expr: Option<&str>) -> Result<(), CliError> {
        let mode = ParseMode::from(self.cli.mode);
        let text = self.format_or(Format::Json) == Format::Text;
        let f = |s: &str| -> Result<Item, CliError> {
            let p = parse_item(s, mode)?;
            let output = if text { tree_text(&p.tree) } else { to_json(&p.tree) };
            Ok(Item { output, warnings: p.warnings })
        };
        match expr {
            Some(e) => {
                let item = f(e)?;
                warn(self.stderr, None, &item.warnings);
                line_out(self.stdout, &item.output)
            }
            None => self.map_items(io, f),
        }
    }

    fn sml(&mut self, cmd: &SmlCmd) -> Result<(), CliError> {
        let mode = ParseMode::from(self.cli.mode);
        let text = self.format_or(Format::Json) == Format::Text;
        match cmd {
            SmlCmd::Encode { io, from } => self.map_items(io, |s| {
                let (tree, warnings) = match from {
                    Repr::Latex => {
                        let p = parse_item(s, mode)?;
                        (p.tree, p.warnings)
                    }
                    Repr::Ast => (tree_json(s)?, Vec::new()),
                };
                let seq = encode_sml(&tree);
                let output = if text { seq.to_text() } else { to_json(&seq) };
                Ok(Item { output, warnings })
            }),
            SmlCmd::Decode { io, to } => self.map_items(io, |s| {
                let s = s.trim();
                let seq = if s.starts_with('[') {
                    serde_json::from_str::<SmlSequence>(s)
                        .map_err(|e| CliError::domain(format!("invalid sequence JSON: {e}")))?
                } else {
                    SmlSequence::from_text(s)?
                };
                let tree = decode_sml(&seq)?;
                Ok(Item::plain(match to {
                    Repr::Latex => render(&tree),
                    Repr::Ast => to_json(&tree),
                }))
            }),
        }
    }

    fn tok(&mut self, cmd: &TokCmd) -> Result<(), CliError> {
        match cmd {
            TokCmd::Train { input, vocab_size, output, specials } => {
                let corpus = self.read_all(input)?;
                let specials = match specials.clone().or_else(|| self.config_file("specials_extra.txt")) {
                    Some(p) => specials_for(Grammar::shipped(), &read_path(&p)?),
                    None => default_specials(),
                };
                let model = train_bpe(corpus.lines(), *vocab_size, &specials)?;
                save_model(&model, output)?;
                let summary = serde_json::json!({
                    "vocab_size": model.vocab_size(),
                    "specials": model.specials().len(),
                    "merges": model.merges().len(),
                });
                line_out(self.stdout, &summary.to_string())
            }
            TokCmd::Encode { model, input } => {
                let model = load_model(model)?;
                let io = InputArgs { input: input.clone(), lines: true };
                self.map_items(&io, |s| Ok(Item::plain(to_json(&model.encode(s)))))
            }
            TokCmd::Decode { model, input } => {
                let model = load_model(model)?;
                let io = InputArgs { input: input.clone(), lines: true };
                self.map_items(&io, |s| {
                    let ids: Vec<u32> =
                        serde_json::from_str(s).map_err(|e| CliError::domain(format!("invalid id array: {e}")))?;
                    Ok(Item::plain(model.decode(&ids)?))
                })
            }
        }
    }

    fn fit(&mut self, h: u32, w: u32, patch: u32, budget: u32) -> Result<(), CliError> {
        let plan = plan_resolution(&FitParams::new(h, w, patch, budget)?)?;
        let r = PlanReport::from(&plan);
        let out = match self.format_or(Format::Json) {
            Format::Json => to_json(&r),
            Format::Text => format!(
                "scale         {}\ngrid          {} x {}\ntarget        {} x {}\nresized       {}\nmdr_literal   {}\nmdr_rounding  {}",
                r.s_star, r.grid[0], r.grid[1], r.target[0], r.target[1], r.resized, r.mdr_literal, r.mdr_rounding
            ),
        };
        line_out(self.stdout, &out)
    }

    /// Joins on `id`. A reference without a prediction is scored against an
    /// empty prediction; a prediction without a reference is ignored. Both
    /// are reported on stderr.
    fn score(&mut self, pred: &Path, reference: &Path) -> Result<(), CliError> {
        let preds = read_manifest(open(pred)?).collect::<Result<Vec<_>, _>>()?;
        let refs = read_manifest(open(reference)?).collect::<Result<Vec<_>, _>>()?;
        let mut pred_ids = IdSet::default();
        let mut by_id: HashMap<&str, &str> = HashMap::new();
        for p in &preds {
            pred_ids.insert(&p.id)?;
            by_id.insert(&p.id, &p.latex);
        }
        let mut ref_ids = IdSet::default();
        for r in &refs {
            ref_ids.insert(&r.id)?;
        }
        let ref_set: HashSet<&str> = refs.iter().map(|r| r.id.as_str()).collect();
        for p in preds.iter().filter(|p| !ref_set.contains(p.id.as_str())) {
            let _ = writeln!(self.stderr, "warning: prediction {} has no reference; ignored", p.id);
        }
        for r in refs.iter().filter(|r| !by_id.contains_key(r.id.as_str())) {
            let _ = writeln!(self.stderr, "warning: reference {} has no prediction; scored as empty", r.id);
        }
        let scored: Vec<_> = in_pool(self.pool, || {
            refs.par_iter()
                .map(|r| (score_sample(by_id.get(r.id.as_str()).copied().unwrap_or(""), &r.latex), r.tier))
                .collect()
        });
        let report = aggregate(&scored);
        let out = match self.format_or(Format::Json) {
            Format::Json => to_json(&report),
            Format::Text => report.to_table().trim_end().to_string(),
        };
        line_out(self.stdout, &out)
    }

    fn report(&mut self, input: &Option<PathBuf>) -> Result<(), CliError> {
        let text = self.read_all(input)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::domain(format!("invalid report JSON: {e}")))?;
        let invalid = |kind: &str, e: serde_json::Error| CliError::domain(format!("invalid {kind}: {e}"));
        let (table, json) = if value.get("overall").is_some() {
            let r: Report = serde_json::from_value(value).map_err(|e| invalid("score report", e))?;
            (r.to_table(), to_json(&r))
        } else if value.get("length").is_some() {
            let s: CorpusStats = serde_json::from_value(value).map_err(|e| invalid("corpus statistics", e))?;
            (s.to_table(), to_json(&s))
        } else {
            return Err(CliError::domain("input is neither a score report nor corpus statistics"));
        };
        match self.format_or(Format::Text) {
            Format::Text => line_out(self.stdout, table.trim_end()),
            Format::Json => line_out(self.stdout, &json),
        }
    }

    fn curation_config(&self, args: &CurateArgs) -> Result<CurationConfig, CliError> {
        let mut c = match args.config.clone().or_else(|| self.config_file("curation.toml")) {
            Some(p) => CurationConfig::load(&p)?,
            None => CurationConfig::shipped(),
        };
        match args.length_unit {
            Some(Unit::Lexer) => c.length_unit = LengthUnit::Lexer,
            Some(Unit::Characters) => c.length_unit = LengthUnit::Characters,
            None => {}
        }
        Ok(c)
    }

    fn profile(&self, args: &CurateArgs) -> Result<DifficultyProfile, CliError> {
        Ok(match args.profile.clone().or_else(|| self.config_file("difficulty.toml")) {
            Some(p) => DifficultyProfile::load(&p)?,
            None => DifficultyProfile::shipped(),
        })
    }

    fn curate(&mut self, cmd: &CurateCmd) -> Result<(), CliError> {
        match cmd {
            CurateCmd::Clean { args } => {
                let config = self.curation_config(args)?;
                self.rewrite_manifest(args, None, |mut s| {
                    let c = clean_with_diagnostics(&s.latex, &config);
                    let warnings = c.diagnostics.iter().map(|d| format!("{}: {d}", s.id)).collect();
                    s.latex = c.latex;
                    Ok(Ok(Item { output: to_json(&s), warnings }))
                })
            }
            CurateCmd::Filter { args, provenance } => {
                let config = self.curation_config(args)?;
                self.rewrite_manifest(args, provenance.as_deref(), |s| {
                    let v = is_valid(&s.latex, &config);
                    if v.ok {
                        return Ok(Ok(Item::plain(to_json(&s))));
                    }
                    let reason = v.reasons.iter().map(|r| format!("{r:?}")).collect::<Vec<_>>().join(",");
                    Ok(Err(Provenance { id: s.id, stage: Stage::Validate, reason }))
                })
            }
            CurateCmd::Tier { args } => {
                let config = self.curation_config(args)?;
                let profile = self.profile(args)?;
                self.rewrite_manifest(args, None, |mut s| {
                    let stats = compute_stats_lenient(&s.latex, config.length_unit);
                    s.tier = Some(assign_tier(difficulty_score(&stats, &profile), &profile));
                    s.stats = Some(stats);
                    Ok(Ok(Item::plain(to_json(&s))))
                })
            }
            CurateCmd::Stats { args } => {
                let config = self.curation_config(args)?;
                let unit = config.length_unit;
                let mut acc = StatsAccumulator::new(&config);
                let pool = self.pool;
                with_input(&mut *self.stdin, &args.input, |r| {
                    par_manifest(
                        pool,
                        r,
                        |s| {
                            let stats = match s.stats {
                                Some(st) => Ok(st),
                                None => compute_stats(&s.latex, unit).map_err(|e| format!("{}: {e}", e.code())),
                            };
                            Ok((s.id, stats))
                        },
                        |_, (id, stats)| acc.add_result(&id, stats).map_err(CliError::from),
                    )
                })?;
                let stats = acc.finish();
                for s in &stats.invalid_samples {
                    let _ = writeln!(self.stderr, "invalid {}: {}", s.id, s.reason);
                }
                let out = match self.format_or(Format::Json) {
                    Format::Json => to_json(&stats),
                    Format::Text => stats.to_table().trim_end().to_string(),
                };
                let mut text = out;
                text.push('\n');
                self.write_target(&args.output, &text)
            }
            CurateCmd::Run { args, provenance, stats } => {
                let config = self.curation_config(args)?;
                let profile = self.profile(args)?;
                let samples = with_input(&mut *self.stdin, &args.input, |r| {
                    read_manifest(r).collect::<Result<Vec<_>, _>>().map_err(CliError::from)
                })?;
                let out = run_pipeline(samples, &config, &profile)?;
                let manifest: String = out.samples.iter().map(|s| to_json(s) + "\n").collect();
                self.write_target(&args.output, &manifest)?;
                let prov: String = out.provenance.iter().map(|p| to_json(p) + "\n").collect();
                self.write_side(provenance.as_deref(), &prov)?;
                let summary = match self.format_or(Format::Json) {
                    Format::Json => to_json(&serde_json::json!({ "stats": out.stats, "tiers": out.tiers })) + "\n",
                    Format::Text => format!(
                        "{}\ntier      count\nEasy      {}\nModerate  {}\nComplex   {}\n",
                        out.stats.to_table().trim_end(),
                        out.tiers.easy,
                        out.tiers.moderate,
                        out.tiers.complex
                    ),
                };
                self.write_side(stats.as_deref(), &summary)
            }
        }
    }

    fn write_target(&mut self, output: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
        if is_stdin(output) {
            write_out(self.stdout, text)
        } else {
            write_file(output.as_deref().expect("checked above"), text)
        }
    }

    /// Writes to the named file, or to stderr when none is named.
    fn write_side(&mut self, path: Option<&Path>, text: &str) -> Result<(), CliError> {
        match path {
            Some(p) => write_file(p, text),
            None => write_out(self.stderr, text),
        }
    }

    /// Streams a manifest through `f`. `Ok(item)` is written to the output
    /// manifest and `Err(record)` to the provenance sink.
    fn rewrite_manifest<F>(&mut self, args: &CurateArgs, provenance: Option<&Path>, f: F) -> Result<(), CliError>
    where
        F: Fn(Sample) -> Result<Result<Item, Provenance>, CliError> + Sync,
    {
        let mut out_file = if is_stdin(&args.output) { None } else { Some(create(args.output.as_deref().unwrap())?) };
        let mut prov_file = provenance.map(create).transpose()?;
        let (pool, stdout, err) = (self.pool, &mut *self.stdout, &mut *self.stderr);
        let out: &mut dyn Write = match out_file.as_mut() {
            Some(w) => w,
            None => stdout,
        };
        with_input(&mut *self.stdin, &args.input, |r| {
            par_manifest(pool, r, &f, |n, v| match v {
                Ok(item) => {
                    warn(err, Some(n), &item.warnings);
                    line_out(out, &item.output)
                }
                Err(record) => match prov_file.as_mut() {
                    Some(p) => line_out(p, &to_json(&record)),
                    None => line_out(err, &to_json(&record)),
                },
            })
        })?;
        if let Some(w) = out_file.as_mut() {
            w.flush().map_err(|e| CliError::io("writing output", e))?;
        }
        if let Some(w) = prov_file.as_mut() {
            w.flush().map_err(|e| CliError::io("writing provenance", e))?;
        }
        Ok(())
    }
}

/// Indented one-node-per-line dump of a tree.
fn tree_text(tree: &ExprNode) -> String {
    fn walk(n: &ExprNode, depth: usize, out: &mut Vec<String>) {
        let label = match n {
            ExprNode::Symbol { lexeme } => format!("symbol {lexeme}"),
            ExprNode::Text { content } => format!("text {content:?}"),
            ExprNode::Command { name, .. } => format!("command \\{name}"),
            ExprNode::Group { .. } => "group".into(),
            ExprNode::Sequence { .. } => "sequence".into(),
            ExprNode::Fraction { .. } => "frac".into(),
            ExprNode::Radical { .. } => "sqrt".into(),
            ExprNode::Script { sub, sup, .. } => {
                let mut s = String::from("script");
                if sub.is_some() {
                    s.push_str(" sub");
                }
                if sup.is_some() {
                    s.push_str(" sup");
                }
                s
            }
            ExprNode::Environment { name, rows, .. } => format!("env {name} rows={}", rows.len()),
            ExprNode::Delimited { left, right, .. } => format!("delimited {left} {right}"),
        };
        out.push(format!("{}{label}", "  ".repeat(depth)));
        for c in n.children() {
            walk(c, depth + 1, out);
        }
    }
    let mut out = Vec::new();
    walk(tree, 0, &mut out);
    out.join("\n")
}
