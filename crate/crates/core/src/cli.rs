//! Command-line front end. Exit codes: 0 success, 1 domain failure,
//! 2 usage or parse failure.

use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::batch::{run_batch, BatchConfig, BatchError};
use crate::builtins::builtin_registry;
use crate::canonical;
use crate::engine::{Engine, Outputs};
use crate::graph::{deserialize_pipeline, validate_graph, FormatError, ModuleRegistry, PipelineGraph, PortRef};
use crate::server::{run_until_interrupted, ServerConfig, ServerError, ServiceConfig, DEFAULT_QUEUE_CAP};
use crate::value::Value;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "segflow", version, about = "Typed dataflow pipelines for segmentation datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Human,
    Structured,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a pipeline file against the builtin modules.
    Validate {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Generate a dataset of `count` accepted samples.
    Run {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=1024))]
        parallelism: u64,
        /// `node.port=literal` or `node.port=@path` for an external input.
        #[arg(long = "bind", value_name = "NODE.PORT=VALUE")]
        bindings: Vec<String>,
        /// Total attempts allowed; defaults to five per requested sample.
        #[arg(long)]
        retry_budget: Option<u64>,
        #[arg(long)]
        overwrite: bool,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Run the job server until interrupted.
    Serve {
        #[arg(long, env = "SEGFLOW_HOST", default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, env = "SEGFLOW_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "SEGFLOW_WORKERS", default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..=256))]
        workers: u64,
        /// Job and pipeline storage; in-memory when absent.
        #[arg(long, env = "SEGFLOW_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long, env = "SEGFLOW_CACHE_MIB", default_value_t = 512)]
        cache_mib: u64,
        #[arg(long, env = "SEGFLOW_QUEUE_CAP", default_value_t = DEFAULT_QUEUE_CAP as u64)]
        queue_cap: u64,
    },
    /// List registered modules, sorted by id.
    Modules {
        #[arg(long)]
        label: Option<String>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn failure(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { file, format } => cmd_validate(&file, format),
        Command::Run {
            file,
            out,
            seed,
            count,
            parallelism,
            bindings,
            retry_budget,
            overwrite,
            format,
        } => {
            let cfg = BatchConfig {
                seed,
                count,
                parallelism: parallelism as usize,
                retry_budget,
                overwrite,
            };
            cmd_run(&file, &out, &bindings, &cfg, format)
        }
        Command::Serve {
            host,
            port,
            workers,
            data_dir,
            cache_mib,
            queue_cap,
        } => {
            let config = ServerConfig {
                addr: SocketAddr::new(host, port),
                data_dir,
                service: ServiceConfig {
                    workers: workers as usize,
                    cache_bytes: (cache_mib as usize).saturating_mul(1 << 20),
                    queue_cap: queue_cap as usize,
                    ..ServiceConfig::default()
                },
            };
            cmd_serve(&config)
        }
        Command::Modules { label, format } => cmd_modules(label.as_deref(), format),
    }
}

/// Reads and parses a pipeline file; both failures are usage errors.
pub fn load_pipeline(path: &Path) -> Result<PipelineGraph, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    deserialize_pipeline(&bytes).map_err(|e| match e {
        FormatError::Parse { line, column, message } => {
            CliError::usage(format!("{}:{line}:{column}: parse error: {message}", path.display()))
        }
        other => CliError::usage(format!("{}: {other}", path.display())),
    })
}

fn cmd_validate(path: &Path, format: Format) -> Result<(), CliError> {
    let graph = load_pipeline(path)?;
    let report = validate_graph(&graph, &builtin_registry());
    let mut out = std::io::stdout().lock();
    let written = match format {
        Format::Structured => writeln!(out, "{}", canonical::pretty_of(&report)),
        Format::Human => write!(out, "{report}"),
    };
    written.map_err(|e| CliError::failure(e.to_string()))?;
    if report.ok {
        Ok(())
    } else {
        Err(CliError::failure(format!("{} violation(s)", report.diagnostics.len())))
    }
}

/// Resolves `--bind` arguments against the declared input types.
pub fn parse_bindings(graph: &PipelineGraph, registry: &ModuleRegistry, args: &[String]) -> Result<Outputs, CliError> {
    let mut inputs = Outputs::new();
    for arg in args {
        let (target, raw) = arg
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--bind {arg}: expected node.port=value")))?;
        let port = PortRef::parse(target).ok_or_else(|| CliError::usage(format!("--bind {arg}: bad port {target:?}")))?;
        let dtype = graph
            .node(&port.node)
            .and_then(|n| registry.spec(&n.module_id))
            .and_then(|spec| spec.input(&port.port))
            .map(|p| p.dtype.clone())
            .ok_or_else(|| CliError::failure(format!("--bind {arg}: no input port {port}")))?;
        let value = match raw.strip_prefix('@') {
            Some(file) => {
                let bytes = fs::read(file).map_err(|e| CliError::usage(format!("--bind {arg}: {e}")))?;
                Value::from_bytes(&dtype, &bytes)
            }
            None => Value::parse_literal(&dtype, raw),
        }
        .map_err(|e| CliError::failure(format!("--bind {arg}: {e}")))?;
        if inputs.insert(port.clone(), value).is_some() {
            return Err(CliError::usage(format!("{port} bound twice")));
        }
    }
    Ok(inputs)
}

fn cmd_run(path: &Path, out: &Path, bindings: &[String], cfg: &BatchConfig, format: Format) -> Result<(), CliError> {
    let graph = load_pipeline(path)?;
    let registry = Arc::new(builtin_registry());
    let inputs = parse_bindings(&graph, &registry, bindings)?;
    let engine = Engine::new(registry);
    let outcome = run_batch(&engine, &graph, &inputs, out, cfg).map_err(|e| match e {
        BatchError::ZeroCount => CliError::usage(e.to_string()),
        other => CliError::failure(other.to_string()),
    })?;
    let s = &outcome.summary;
    match format {
        Format::Structured => {
            let mut brief = serde_json::to_value(s).expect("summary serializes");
            brief.as_object_mut().expect("object").remove("log");
            brief["out"] = out.display().to_string().into();
            println!("{}", canonical::to_pretty(&brief));
        }
        Format::Human => {
            print!(
                "wrote {} samples to {} ({} attempts, acceptance rate {:.3}",
                s.accepted,
                out.display(),
                s.attempts,
                s.acceptance_rate
            );
            match s.mean_miou {
                Some(m) => println!(", mean mIoU {m:.4})"),
                None => println!(")"),
            }
        }
    }
    Ok(())
}

fn cmd_serve(config: &ServerConfig) -> Result<(), CliError> {
    run_until_interrupted(config, |addr| {
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
    })
    .map_err(|e| match e {
        ServerError::Bind { .. } => CliError::failure(e.to_string()),
        other => CliError::failure(other.to_string()),
    })
}

fn cmd_modules(label: Option<&str>, format: Format) -> Result<(), CliError> {
    let registry = builtin_registry();
    let specs = match label {
        Some(l) => registry.with_label(l),
        None => registry.specs(),
    };
    match format {
        Format::Structured => println!("{}", canonical::pretty_of(&specs)),
        Format::Human => {
            for spec in specs {
                let labels: Vec<&str> = spec.labels.iter().map(String::as_str).collect();
                println!("{}\tv{}\t[{}]\t{}", spec.id, spec.version, labels.join(","), spec.display_name);
            }
        }
    }
    Ok(())
}
