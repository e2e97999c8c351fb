//! Command-line front end.
//!
//! Exit codes: 0 success (findings are not failures), 1 input error
//! (unreadable or malformed trace, bad arguments, bad spec), 2 internal
//! error, 3 oracle divergence under `analyze --oracle`.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, IsTerminal, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::detectors::{analyze, DetectorOptions};
use crate::estimate::estimate;
use crate::hashing::{hash_bytes, CollisionAuditStore, ContentHash};
use crate::io::{parse_trace, serialize_trace, ParseError};
use crate::model::{TraceEvent, TRACE_VERSION};
use crate::oracle::{diff_findings, oracle_analyze};
use crate::report::{
    attribute, render_json, render_text, ColorChoice, RenderOptions, Verbosity, REPORT_VERSION,
};
use crate::synth::{generate, optimized_counterpart, Pattern, PatternSpec};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_INTERNAL: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dmlens",
    version,
    about = "Find wasteful host/device data mappings in execution traces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze a trace and print the report.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic trace with known issues.
    Gen(GenArgs),
    /// Check payload sidecars for hash collisions.
    Audit(AuditArgs),
    /// Print version information.
    Version,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace file, or `-` for standard input.
    pub trace: PathBuf,
    /// Emit the JSON report instead of text.
    #[arg(long)]
    pub json: bool,
    /// Suppress warnings.
    #[arg(short, long, conflicts_with = "verbose")]
    pub quiet: bool,
    /// List individual findings and print timings to stderr.
    #[arg(short, long)]
    pub verbose: bool,
    /// Cross-check every detector against its brute-force oracle; exit 3 on
    /// any difference.
    #[arg(long)]
    pub oracle: bool,
    /// Run the round-trip detector in its original, unguarded form.
    #[arg(long)]
    pub strict_pseudocode: bool,
    /// Hide duplicate and round-trip transfers smaller than this many bytes.
    #[arg(long, default_value_t = 1, value_name = "BYTES")]
    pub min_bytes: u64,
    /// Write the report here instead of standard output.
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub pattern: Pattern,
    #[arg(short = 'n', long, default_value_t = 1)]
    pub iterations: u32,
    #[arg(long, default_value_t = PatternSpec::default().bytes_per_array)]
    pub bytes: u64,
    /// Device slots including the host.
    #[arg(long, default_value_t = 2)]
    pub devices: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = PatternSpec::default().transfer_ns_per_byte)]
    pub transfer_ns_per_byte: f64,
    #[arg(long, default_value_t = PatternSpec::default().alloc_ns)]
    pub alloc_ns: u64,
    #[arg(long, default_value_t = PatternSpec::default().kernel_ns)]
    pub kernel_ns: u64,
    #[arg(long, default_value_t = 0)]
    pub jitter_ns: u64,
    /// Modify data on the host between transfers (near-miss negatives).
    #[arg(long)]
    pub mutate: bool,
    /// Write the hand-optimized counterpart instead.
    #[arg(long)]
    pub optimized: bool,
    /// Also write every transfer payload as `<seq>.bin` into this directory.
    #[arg(long, value_name = "DIR")]
    pub payload_dir: Option<PathBuf>,
    /// Trace output path; the ground truth goes next to it as
    /// `<name>.truth.json`.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    pub trace: PathBuf,
    /// Directory of `<seq>.bin` payload sidecars.
    #[arg(long, value_name = "DIR")]
    pub payloads: PathBuf,
}

/// An error with its diagnostic class and exit code.
#[derive(Debug)]
pub struct Failure {
    pub class: &'static str,
    pub message: String,
    pub code: u8,
}

impl Failure {
    fn input(class: &'static str, message: impl Into<String>) -> Self {
        Failure {
            class,
            message: message.into(),
            code: EXIT_INPUT,
        }
    }

    fn internal(class: &'static str, message: impl Into<String>) -> Self {
        Failure {
            class,
            message: message.into(),
            code: EXIT_INTERNAL,
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::input("Io", format!("{}: {e}", path.display()))
}

fn parse_failure(path: &Path, e: ParseError) -> Failure {
    Failure::input(e.class(), format!("{}: {e}", path.display()))
}

/// Parses `args` and runs the command. Usage errors exit with 1.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, stdout, stderr),
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{rendered}");
                    EXIT_INPUT
                }
            }
        }
    }
}

pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    let result = match cli.command {
        Command::Analyze(a) => run_analyze(&a, stdout, stderr),
        Command::Gen(g) => run_gen(&g, stdout),
        Command::Audit(a) => run_audit(&a, stdout),
        Command::Version => {
            let _ = writeln!(
                stdout,
                "dmlens {}\ntrace format {TRACE_VERSION}\nreport format {REPORT_VERSION}",
                env!("CARGO_PKG_VERSION")
            );
            Ok(EXIT_OK)
        }
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error[{}]: {}", f.class, f.message);
            f.code
        }
    }
}

fn read_trace(path: &Path) -> Result<crate::model::Trace, Failure> {
    let parsed = if path == Path::new("-") {
        parse_trace(io::stdin().lock())
    } else {
        let file = File::open(path).map_err(|e| io_failure(path, e))?;
        parse_trace(BufReader::new(file))
    };
    parsed.map_err(|e| parse_failure(path, e))
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::internal("Io", format!("standard output: {e}"))),
    }
}

fn run_analyze(
    a: &AnalyzeArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<u8, Failure> {
    let started = Instant::now();
    let trace = read_trace(&a.trace)?;
    let parsed_at = started.elapsed();
    let opts = DetectorOptions {
        strict_pseudocode: a.strict_pseudocode,
    };
    let mut findings =
        analyze(&trace, opts).map_err(|e| Failure::internal("InvalidTrace", e.to_string()))?;
    let analyzed_at = started.elapsed();

    let mut code = EXIT_OK;
    if a.oracle {
        let divergences = diff_findings(&findings, &oracle_analyze(&trace));
        for d in &divergences {
            let _ = writeln!(stderr, "error[OracleDivergence]: {d}");
        }
        if !divergences.is_empty() {
            code = EXIT_DIVERGENCE;
        } else if a.verbose {
            let _ = writeln!(stderr, "oracle: all five detectors agree");
        }
    }

    findings.retain_min_bytes(a.min_bytes);
    let savings =
        estimate(&trace, &findings).map_err(|e| Failure::internal("Estimate", e.to_string()))?;
    let issues = attribute(&trace, &findings);
    let text = if a.json {
        render_json(&trace, &findings, &savings, &issues)
    } else {
        let env = std::env::var("DMLENS_COLOR").ok();
        let to_terminal = a.output.is_none() && io::stdout().is_terminal();
        let opts = RenderOptions {
            color: ColorChoice::from_env_value(env.as_deref()).resolve(to_terminal),
            verbosity: if a.quiet {
                Verbosity::Quiet
            } else if a.verbose {
                Verbosity::Verbose
            } else {
                Verbosity::Normal
            },
        };
        render_text(&trace, &findings, &savings, &issues, opts)
    };
    write_output(a.output.as_deref(), &text, stdout)?;

    if a.verbose {
        let _ = write!(
            stderr,
            "{} events: parse {:.3} s, analyze {:.3} s, total {:.3} s",
            trace.events.len(),
            parsed_at.as_secs_f64(),
            (analyzed_at - parsed_at).as_secs_f64(),
            started.elapsed().as_secs_f64()
        );
        match peak_rss_kib() {
            Some(kib) => writeln!(stderr, ", peak rss {kib} KiB"),
            None => writeln!(stderr),
        }
        .ok();
    }
    Ok(code)
}

/// High-water resident set size of this process, where the platform
/// exposes it.
fn peak_rss_kib() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

/// `foo.ndjson` -> `foo.truth.json`.
pub fn truth_path(trace_path: &Path) -> PathBuf {
    trace_path.with_extension("truth.json")
}

fn run_gen(g: &GenArgs, stdout: &mut dyn Write) -> Result<u8, Failure> {
    if g.optimized && g.payload_dir.is_some() {
        return Err(Failure::input(
            "Usage",
            "--payload-dir is only supported for unoptimized traces",
        ));
    }
    let spec = PatternSpec {
        pattern: g.pattern,
        n_iterations: g.iterations,
        bytes_per_array: g.bytes,
        n_devices: g.devices,
        seed: g.seed,
        transfer_ns_per_byte: g.transfer_ns_per_byte,
        alloc_ns: g.alloc_ns,
        kernel_ns: g.kernel_ns,
        jitter_ns: g.jitter_ns,
        mutate: g.mutate,
    };
    let spec_failure = |e: crate::synth::SynthError| Failure::input("InvalidSpec", e.to_string());
    let synth = generate(&spec).map_err(spec_failure)?;
    let (trace, mut truth) = if g.optimized {
        let t = optimized_counterpart(&spec).map_err(spec_failure)?;
        let mut truth = synth.truth.clone();
        // The fixed program has nothing left to report.
        truth.counts = Default::default();
        truth.expected_union_savings_ns = 0;
        truth.closure_exact = true;
        (t, truth)
    } else {
        (synth.trace.clone(), synth.truth.clone())
    };
    truth.pattern = g.pattern;

    let file = File::create(&g.output).map_err(|e| io_failure(&g.output, e))?;
    let mut w = BufWriter::new(file);
    serialize_trace(&trace, &mut w).map_err(|e| Failure::internal("Serialize", e.to_string()))?;
    w.flush().map_err(|e| io_failure(&g.output, e))?;

    let truth_file = truth_path(&g.output);
    let mut truth_json = serde_json::to_string_pretty(&truth).expect("truth serializes");
    truth_json.push('\n');
    fs::write(&truth_file, truth_json).map_err(|e| io_failure(&truth_file, e))?;

    if let Some(dir) = &g.payload_dir {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        for seq in synth.payloads.entries.keys() {
            let path = dir.join(format!("{seq}.bin"));
            let bytes = synth.payloads.bytes(*seq).expect("listed seq");
            fs::write(&path, bytes).map_err(|e| io_failure(&path, e))?;
        }
    }
    let _ = writeln!(
        stdout,
        "wrote {} events to {} (ground truth: {})",
        trace.events.len(),
        g.output.display(),
        truth_file.display()
    );
    Ok(EXIT_OK)
}

/// Result of replaying payload sidecars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditSummary {
    pub observed: u64,
    pub missing: u64,
    /// Payloads whose recomputed hash differs from the recorded one.
    pub hash_mismatches: u64,
    pub collision_count: u64,
}

/// Feeds every content-carrying transfer's sidecar, under its recorded
/// hash, through a [`CollisionAuditStore`].
pub fn audit_payloads<'a>(
    transfers: impl IntoIterator<Item = &'a TraceEvent>,
    mut load: impl FnMut(u64) -> io::Result<Option<Vec<u8>>>,
) -> io::Result<AuditSummary> {
    let mut store = CollisionAuditStore::new();
    let mut s = AuditSummary::default();
    for e in transfers.into_iter().filter(|e| e.has_content()) {
        let Some(bytes) = load(e.seq)? else {
            s.missing += 1;
            continue;
        };
        if hash_bytes(&bytes).map(|h| h.value()) != Ok(e.hash) {
            s.hash_mismatches += 1;
        }
        store.observe(ContentHash::from_raw(e.hash), &bytes);
    }
    s.observed = store.observations();
    s.collision_count = store.collision_count();
    Ok(s)
}

fn run_audit(a: &AuditArgs, stdout: &mut dyn Write) -> Result<u8, Failure> {
    let trace = read_trace(&a.trace)?;
    let summary = audit_payloads(&trace.events, |seq| {
        let path = a.payloads.join(format!("{seq}.bin"));
        match File::open(&path) {
            Ok(mut f) => {
                let mut buf = Vec::new();
                f.read_to_end(&mut buf)?;
                Ok(Some(buf))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    })
    .map_err(|e| io_failure(&a.payloads, e))?;
    let _ = writeln!(
        stdout,
        "observed: {}\nmissing: {}\nhash_mismatches: {}\ncollision_count: {}",
        summary.observed, summary.missing, summary.hash_mismatches, summary.collision_count
    );
    Ok(EXIT_OK)
}
