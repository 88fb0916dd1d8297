//! `psr-kit`: one binary wiring feature extraction, GCCA/DGCCA, PSR reports,
//! layer reports and linguistic distances.

pub mod args;
pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::io::Write;
use std::sync::OnceLock;

use clap::Parser;

use args::{Cli, Command};
use config::FileConfig;

/// Bad flags, config or inputs; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub fn version_string() -> &'static str {
    static V: OnceLock<String> = OnceLock::new();
    V.get_or_init(|| {
        format!(
            "{} (feature format PSRF v{}, model format PSRM v{})",
            psr_core::VERSION,
            psr_core::feature_io::FORMAT_VERSION,
            psr_core::dgcca::MODEL_VERSION
        )
    })
}

/// Exit code for a failed command: 2 for validation failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<plot::PlotError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<psr_core::Error>() {
            return if e.is_validation() { EXIT_USAGE } else { EXIT_RUNTIME };
        }
    }
    EXIT_RUNTIME
}

fn init_logging(json: bool, verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let mut builder = env_logger::Builder::new();
    builder.filter_level(level).parse_default_env().target(env_logger::Target::Stderr);
    if json {
        builder.format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    let _ = builder.try_init();
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::MelExtract(a) => commands::mel_extract(a, &file),
        Command::Gcca(a) => commands::gcca(a, &file),
        Command::DgccaTrain(a) => commands::dgcca_train(a, &file, cli.seed),
        Command::Psr(a) => commands::psr(a, &file, cli.seed),
        Command::LayerFit(a) => commands::layer_fit(a, &file),
        Command::LayerReport(a) => commands::layer_report(a),
        Command::Lingdist(a) => commands::lingdist(a),
        Command::ValidateManifest(a) => commands::validate_manifest(a),
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
/// Diagnostics go to stderr; results go to files and stdout.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.json_logs, cli.verbose);
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            if cli.json_logs {
                let line = serde_json::json!({"level": "ERROR", "target": "psr_kit", "message": format!("{e:#}")});
                eprintln!("{line}");
            } else {
                eprintln!("error: {e:#}");
            }
            code
        }
    }
}
