use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use granary_core::clients::{MockBackend, MockRates};
use granary_core::config::PipelineConfig;
use granary_core::manifest::{read_manifest, UtteranceRecord};
use granary_core::pipeline::{Pipeline, PipelineError};
use granary_core::stats::{compute_stats, report, Grouping, CorpusStats};
use granary_mock::MockServer;

#[derive(Parser)]
#[command(name = "granary", version, about = "Curate pseudo-labelled speech manifests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

impl Format {
    fn as_str(self) -> &'static str {
        match self {
            Format::Text => "text",
            Format::Json => "json",
        }
    }

    fn for_path(explicit: Option<Format>, path: Option<&Path>) -> Format {
        explicit.unwrap_or(match path.and_then(|p| p.extension()) {
            Some(e) if e == "json" => Format::Json,
            _ => Format::Text,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Group {
    /// One row per corpus and language.
    Language,
    /// One row per corpus.
    Corpus,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured stages over a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
        /// Retention report; stderr when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Unparseable input lines, one JSON object each.
        #[arg(long)]
        errors: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long)]
        shards: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Retention statistics for an input manifest and its filtered output.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Dropped-record sidecar, for per-flag counts.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long, value_enum, default_value = "language")]
        by: Group,
    },
    /// Check a pipeline config and exit.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve the deterministic mock model services over HTTP.
    MockServer {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Disable planted defects.
        #[arg(long)]
        clean: bool,
    },
}

enum Failure {
    Config(String),
    Io(String),
    Service(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Io(_) => 2,
            Failure::Service(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Service(m) => m,
        }
    }
}

fn io_failure(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(io_failure(path))
}

fn open_records(path: &Path) -> Result<impl Iterator<Item = UtteranceRecord>, Failure> {
    let file = File::open(path).map_err(io_failure(path))?;
    let shown = path.display().to_string();
    Ok(read_manifest(BufReader::new(file)).filter_map(move |r| match r {
        Ok(rec) => Some(rec),
        Err(e) => {
            log::warn!("{shown}: skipping {e}");
            None
        }
    }))
}

fn emit(text: &str, path: Option<&Path>) -> Result<(), Failure> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(io_failure(p))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?;
    cfg.apply_env().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &Path,
    input: &Path,
    output: &Path,
    sidecar: &Path,
    report_path: Option<&Path>,
    errors: Option<&Path>,
    format: Option<Format>,
    overrides: (Option<usize>, Option<usize>, Option<u64>),
) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    let (shards, workers, seed) = overrides;
    cfg.shard_count = shards.unwrap_or(cfg.shard_count);
    cfg.worker_count = workers.unwrap_or(cfg.worker_count);
    cfg.seed = seed.unwrap_or(cfg.seed);
    let max_error_rate = cfg.max_error_rate;
    let pipeline = Pipeline::from_config(cfg).map_err(|e| match e {
        PipelineError::Config(e) => Failure::Config(e.to_string()),
        other => Failure::Io(other.to_string()),
    })?;

    let source = File::open(input).map_err(io_failure(input))?;
    let mut out = create(output)?;
    let mut side = create(sidecar)?;
    let mut err_log = errors.map(create).transpose()?;
    let summary = pipeline
        .run(
            read_manifest(BufReader::new(source)),
            &mut out,
            &mut side,
            err_log.as_mut().map(|w| w as &mut dyn Write),
        )
        .map_err(|e| Failure::Io(e.to_string()))?;

    eprintln!(
        "{} lines, {} records after segmentation: {} kept, {} dropped, {} malformed",
        summary.lines_read, summary.records_in, summary.kept, summary.dropped, summary.malformed
    );
    let format = Format::for_path(format, report_path);
    let rendered = report(&summary.stats, format.as_str(), Grouping::CorpusLanguage)
        .map_err(|e| Failure::Config(e.to_string()))?;
    match report_path {
        Some(p) => emit(&rendered, Some(p))?,
        None => eprint!("{rendered}"),
    }
    let rate = summary.service_error_rate();
    if rate > max_error_rate {
        return Err(Failure::Service(format!(
            "{} of {} records failed with service errors ({:.2}% > {:.2}%)",
            summary.service_errors,
            summary.records_in,
            100.0 * rate,
            100.0 * max_error_rate
        )));
    }
    Ok(())
}

fn stats(
    input: &Path,
    output: &Path,
    sidecar: Option<&Path>,
    report_path: Option<&Path>,
    format: Option<Format>,
    by: Group,
) -> Result<(), Failure> {
    let mut s: CorpusStats = compute_stats(open_records(input)?, open_records(output)?);
    if let Some(p) = sidecar {
        for r in open_records(p)? {
            s.add_dropped(&r.flags, r.duration_s);
        }
    }
    let grouping = match by {
        Group::Language => Grouping::CorpusLanguage,
        Group::Corpus => Grouping::Corpus,
    };
    let format = Format::for_path(format, report_path);
    let rendered = report(&s, format.as_str(), grouping).map_err(|e| Failure::Config(e.to_string()))?;
    emit(&rendered, report_path)
}

fn mock_server(seed: u64, host: &str, port: u16, clean: bool) -> Result<(), Failure> {
    let addr: SocketAddr = format!("{host}:{port}").parse().map_err(|e| Failure::Config(format!("address: {e}")))?;
    let mut backend = MockBackend::new(seed);
    if clean {
        backend = backend.with_rates(MockRates::clean());
    }
    let server = MockServer::spawn(Arc::new(backend), addr).map_err(|e| Failure::Io(format!("{addr}: {e}")))?;
    eprintln!("mock services listening on {}", server.base_url());
    server.join();
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, input, output, sidecar, report, errors, format, shards, workers, seed } => run(
            config,
            input,
            output,
            sidecar,
            report.as_deref(),
            errors.as_deref(),
            *format,
            (*shards, *workers, *seed),
        ),
        Command::Stats { input, output, sidecar, report, format, by } => {
            stats(input, output, sidecar.as_deref(), report.as_deref(), *format, *by)
        }
        Command::ValidateConfig { config } => load_config(config).map(|cfg| {
            let stages: Vec<_> = cfg.stages.iter().map(|s| s.as_str()).collect();
            println!("ok: stages {}", stages.join(" -> "));
        }),
        Command::MockServer { seed, port, host, clean } => mock_server(*seed, host, *port, *clean),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
