//! The `qss` command-line tool.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 I/O error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AttackSpec, CheatMode, CheatSpec};
use crate::analysis::{
    minimize_average_qber, search_frontier, AnalysisError, EntanglingAttackSpec, SearchConstraint, FRONTIER_GRID,
};
use crate::export::{to_json, write_frontier_csv, write_transcript_csv};
use crate::protocol::{
    run_random_session, run_session_with, DetectionPolicy, ProtocolError, Receiver, RoundRecord, SessionOptions,
    SessionReport,
};
use crate::rng::derive_seed;
use crate::verify::{all_passed, render_table, run_checks, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Message length used by `run` when no message source is given.
pub const DEFAULT_RANDOM_BITS: usize = 1000;

/// How per-repetition seeds are obtained from `--seed`.
pub const SEED_DERIVATION: &str = "splitmix64(seed + repetition)";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Config(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "qss", version, about = "Quantum secret sharing over reusable GHZ carriers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate protocol sessions and report error rates and detection.
    Run(RunArgs),
    /// Search for the smallest average QBER an entangling attack can reach.
    BoundSearch(BoundSearchArgs),
    /// Run the built-in consistency checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackKind {
    None,
    Intercept,
    Entangle,
    Cheat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheatModeArg {
    Flip,
    Random,
}

impl From<CheatModeArg> for CheatMode {
    fn from(m: CheatModeArg) -> Self {
        match m {
            CheatModeArg::Flip => CheatMode::Flip,
            CheatModeArg::Random => CheatMode::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// File of '0'/'1' characters; whitespace is ignored.
    #[arg(long, group = "message")]
    pub message_file: Option<PathBuf>,
    /// Draw N message bits from the session's random stream.
    #[arg(long, value_name = "N", group = "message")]
    pub random_bits: Option<usize>,
    /// Message given inline as a string of '0'/'1'.
    #[arg(long, value_name = "STRING", group = "message")]
    pub bits: Option<String>,
    #[arg(long, value_enum)]
    pub attack: Option<AttackKind>,
    /// JSON attack description, or a bare entangling-attack spec.
    #[arg(long, value_name = "PATH")]
    pub attack_spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub cheat_mode: Option<CheatModeArg>,
    /// Bit-flip probability on each flying data wire.
    #[arg(long, value_name = "P", default_value_t = 0.0)]
    pub noise_p: f64,
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "R", default_value_t = 1)]
    pub reps: usize,
    #[arg(long, value_name = "F", default_value_t = 0.2)]
    pub detect_fraction: f64,
    #[arg(long, value_name = "T", default_value_t = 0.05)]
    pub detect_threshold: f64,
    #[arg(long, value_name = "M", default_value_t = 50)]
    pub min_samples: usize,
    /// Must match the attack's ancilla dimension when given.
    #[arg(long, value_name = "D")]
    pub ancilla_dim: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BoundSearchArgs {
    #[arg(long, value_name = "X", default_value_t = 1.0)]
    pub min_distinguishability: f64,
    #[arg(long, value_name = "K", default_value_t = 10_000)]
    pub budget: u64,
    #[arg(long, value_name = "D", default_value_t = 2)]
    pub ancilla_dim: usize,
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
    /// JSON result path; the frontier CSV goes next to it.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub corrupt_hadamard: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let stdout = io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("qss: {e}");
            e.exit_code()
        }
    }
}

pub fn execute<W: Write>(command: Command, stdout: &mut W) -> CliResult<()> {
    match command {
        Command::Run(a) => cmd_run(&a, stdout),
        Command::BoundSearch(a) => cmd_bound_search(&a, stdout),
        Command::Verify(a) => cmd_verify(&a, stdout),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageSource {
    Random(usize),
    Bits(Vec<u8>),
}

pub fn parse_bits(text: &str) -> CliResult<Vec<u8>> {
    let bits: Vec<u8> = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(CliError::Config(format!("message contains `{other}`; expected 0 or 1"))),
        })
        .collect::<CliResult<_>>()?;
    if bits.is_empty() {
        return Err(CliError::Config("message is empty".into()));
    }
    Ok(bits)
}

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => CliError::Config(format!("{}: file not found", path.display())),
        _ => CliError::Io(format!("{}: {e}", path.display())),
    })
}

fn write_output(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit<W: Write>(out: Option<&Path>, stdout: &mut W, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => write_output(p, bytes),
        None => stdout.write_all(bytes).map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn message_source(a: &RunArgs) -> CliResult<MessageSource> {
    if let Some(p) = &a.message_file {
        return Ok(MessageSource::Bits(parse_bits(&read_input(p)?)?));
    }
    if let Some(b) = &a.bits {
        return Ok(MessageSource::Bits(parse_bits(b)?));
    }
    match a.random_bits {
        Some(0) => Err(CliError::Config("--random-bits must be positive".into())),
        Some(n) => Ok(MessageSource::Random(n)),
        None => Ok(MessageSource::Random(DEFAULT_RANDOM_BITS)),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Attack(AttackSpec),
    Entangling(EntanglingAttackSpec),
}

fn load_attack_file(path: &Path) -> CliResult<AttackSpec> {
    let text = read_input(path)?;
    match serde_json::from_str::<SpecFile>(&text) {
        Ok(SpecFile::Attack(a)) => Ok(a),
        Ok(SpecFile::Entangling(spec)) => Ok(AttackSpec::Entangling { spec, refresh_each_round: true }),
        Err(e) => Err(CliError::Config(format!("{}: not a valid attack spec ({e})", path.display()))),
    }
}

fn variant_matches(kind: AttackKind, a: &AttackSpec) -> bool {
    matches!(
        (kind, a),
        (AttackKind::None, AttackSpec::None)
            | (AttackKind::Intercept, AttackSpec::InterceptResend { .. })
            | (AttackKind::Entangle, AttackSpec::Entangling { .. })
            | (AttackKind::Cheat, AttackSpec::Cheat(_))
    )
}

/// Combines `--attack`, `--attack-spec` and `--cheat-mode` into one attack.
pub fn resolve_attack(a: &RunArgs) -> CliResult<AttackSpec> {
    let from_file = a.attack_spec.as_deref().map(load_attack_file).transpose()?;
    let mut attack = match (a.attack, from_file) {
        (None, None) | (Some(AttackKind::None), None) => AttackSpec::None,
        (None, Some(f)) => f,
        (Some(kind), Some(f)) if variant_matches(kind, &f) => f,
        (Some(kind), Some(_)) => {
            return Err(CliError::Config(format!("--attack-spec does not describe a {kind:?} attack")));
        }
        (Some(AttackKind::Intercept), None) => AttackSpec::intercept_all(),
        (Some(AttackKind::Entangle), None) => {
            return Err(CliError::Config("--attack entangle requires --attack-spec".into()));
        }
        (Some(AttackKind::Cheat), None) => AttackSpec::Cheat(CheatSpec::new(Receiver::Bob, CheatMode::Random)),
    };
    if let Some(mode) = a.cheat_mode {
        match &mut attack {
            AttackSpec::Cheat(c) => c.mode = mode.into(),
            _ => return Err(CliError::Config("--cheat-mode only applies to --attack cheat".into())),
        }
    }
    if let Some(d) = a.ancilla_dim {
        if d != attack.ancilla_dim() {
            return Err(CliError::Config(format!(
                "--ancilla-dim {d} does not match the attack's ancilla dimension {}",
                attack.ancilla_dim()
            )));
        }
    }
    Ok(attack)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stddev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, stddev }
    }
}

/// Number of leading rounds covered by the error profile.
pub const PROFILE_ROUNDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub repetitions: usize,
    pub qber_odd: Stat,
    pub qber_even: Stat,
    pub qber_total: Stat,
    pub detection_rate: f64,
    /// Error frequency of rounds 1, 2, ... across repetitions.
    pub first_rounds_error_rate: Vec<f64>,
}

impl Aggregate {
    pub fn from_runs(reports: &[SessionReport], transcripts: &[Vec<RoundRecord>]) -> Self {
        let col = |f: fn(&SessionReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
        let shortest = transcripts.iter().map(Vec::len).min().unwrap_or(0);
        let first_rounds_error_rate = (0..PROFILE_ROUNDS.min(shortest))
            .map(|k| transcripts.iter().filter(|t| t[k].error).count() as f64 / transcripts.len() as f64)
            .collect();
        Self {
            repetitions: reports.len(),
            qber_odd: col(|r| r.qber_odd),
            qber_even: col(|r| r.qber_even),
            qber_total: col(|r| r.qber_total),
            detection_rate: reports.iter().filter(|r| r.detected).count() as f64 / reports.len() as f64,
            first_rounds_error_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub base_seed: u64,
    pub seed_derivation: String,
    pub aggregate: Aggregate,
    pub reports: Vec<SessionReport>,
}

/// Runs `reps` sessions in parallel with derived seeds; results come back in
/// repetition order.
pub fn run_repetitions(
    source: &MessageSource,
    attack: &AttackSpec,
    policy: &DetectionPolicy,
    options: SessionOptions,
    seed: u64,
    reps: usize,
) -> CliResult<(RunOutput, Vec<Vec<RoundRecord>>)> {
    let runs: Vec<_> = (0..reps as u64)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i);
            match source {
                MessageSource::Random(n) => run_random_session(*n, attack, policy, options, s).map(|(_, r)| r),
                MessageSource::Bits(b) => run_session_with(b, attack, policy, options, s),
            }
        })
        .collect::<Result<_, _>>()?;
    let (reports, transcripts): (Vec<_>, Vec<_>) = runs.into_iter().map(|r| (r.report, r.transcript)).unzip();
    let aggregate = Aggregate::from_runs(&reports, &transcripts);
    Ok((RunOutput { base_seed: seed, seed_derivation: SEED_DERIVATION.into(), aggregate, reports }, transcripts))
}

/// `out.csv` becomes `out-rep3.csv` for repetition 3.
pub fn repetition_path(out: &Path, rep: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}-rep{rep}.{}", ext.to_string_lossy()),
        None => format!("{stem}-rep{rep}"),
    };
    out.with_file_name(name)
}

fn cmd_run<W: Write>(a: &RunArgs, stdout: &mut W) -> CliResult<()> {
    if a.reps == 0 {
        return Err(CliError::Config("--reps must be at least 1".into()));
    }
    if a.format == Format::Csv && a.reps > 1 && a.out.is_none() {
        return Err(CliError::Config("CSV output for several repetitions needs --out".into()));
    }
    let policy = DetectionPolicy {
        sample_fraction: a.detect_fraction,
        abort_threshold: a.detect_threshold,
        min_samples: a.min_samples,
    };
    policy.validate()?;
    if !(0.0..=0.5).contains(&a.noise_p) {
        return Err(ProtocolError::Noise(a.noise_p).into());
    }
    let source = message_source(a)?;
    let attack = resolve_attack(a)?;
    let options = SessionOptions { noise_p: a.noise_p, ..Default::default() };

    let (output, transcripts) = run_repetitions(&source, &attack, &policy, options, a.seed, a.reps)?;
    match a.format {
        Format::Json => {
            let text = to_json(&output).map_err(|e| CliError::Io(e.to_string()))?;
            emit(a.out.as_deref(), stdout, text.as_bytes())
        }
        Format::Csv => {
            for (i, t) in transcripts.iter().enumerate() {
                let mut buf = Vec::new();
                write_transcript_csv(&mut buf, t).map_err(|e| CliError::Io(e.to_string()))?;
                let path = match &a.out {
                    Some(p) if a.reps > 1 => Some(repetition_path(p, i)),
                    other => other.clone(),
                };
                emit(path.as_deref(), stdout, &buf)?;
            }
            Ok(())
        }
    }
}

/// `result.json` → `result.frontier.csv`.
pub fn frontier_path(out: &Path) -> PathBuf {
    out.with_extension("frontier.csv")
}

fn cmd_bound_search<W: Write>(a: &BoundSearchArgs, stdout: &mut W) -> CliResult<()> {
    let constraint = SearchConstraint::new(a.min_distinguishability);
    let result = minimize_average_qber(&constraint, a.budget, a.ancilla_dim, a.seed)?;
    // Without an ancilla only the zero-information level is reachable.
    let grid: Vec<f64> = FRONTIER_GRID.iter().copied().filter(|&x| a.ancilla_dim > 1 || x == 0.0).collect();
    let frontier = search_frontier(&grid, a.budget, a.ancilla_dim, a.seed)?;
    let mut csv = Vec::new();
    write_frontier_csv(&mut csv, &frontier).map_err(|e| CliError::Io(e.to_string()))?;
    match a.format {
        Format::Json => {
            let text = to_json(&result).map_err(|e| CliError::Io(e.to_string()))?;
            emit(a.out.as_deref(), stdout, text.as_bytes())?;
            if let Some(p) = &a.out {
                write_output(&frontier_path(p), &csv)?;
            }
            Ok(())
        }
        Format::Csv => emit(a.out.as_deref(), stdout, &csv),
    }
}

fn cmd_verify<W: Write>(a: &VerifyArgs, stdout: &mut W) -> CliResult<()> {
    let mut opts = VerifyOptions { seed: a.seed, ..Default::default() };
    if a.corrupt_hadamard {
        opts = opts.with_corrupted_hadamard();
    }
    let results = run_checks(&opts);
    stdout.write_all(render_table(&results).as_bytes()).map_err(|e| CliError::Io(format!("stdout: {e}")))?;
    if all_passed(&results) {
        Ok(())
    } else {
        let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
        Err(CliError::Verification(failed.join(", ")))
    }
}
