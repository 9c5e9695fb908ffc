mod args;
mod jobs;
mod manifest;

use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

/// What went wrong, which decides the exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or option values (exit 1).
    Usage(String),
    /// Unreadable, malformed or inconsistent inputs (exit 2).
    Data(String),
    /// Numerical breakdown (exit 3).
    Numeric(String),
}

impl Failure {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Data(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl From<zsl::Error> for Failure {
    fn from(e: zsl::Error) -> Self {
        let msg = e.to_string();
        if e.is_numeric() {
            Failure::Numeric(msg)
        } else if matches!(e, zsl::Error::Config(_)) {
            Failure::Usage(msg)
        } else {
            Failure::Data(msg)
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    let file = cli.config.as_deref().map(jobs::read_config).transpose()?;
    let file = file.as_ref();
    match &cli.command {
        Command::Ingest(f) => jobs::ingest(jobs::resolve(f, file)?),
        Command::Train(f) => jobs::train(jobs::resolve(f, file)?),
        Command::Retrieve(f) => jobs::retrieve(jobs::resolve(f, file)?),
        Command::Eval(f) => jobs::eval(jobs::resolve(f, file)?),
        Command::EnsembleEval(f) => jobs::ensemble_eval(jobs::resolve(f, file)?),
        Command::Refresh(f) => jobs::refresh(jobs::resolve(f, file)?),
        Command::LossAudit(f) => jobs::loss_audit(jobs::resolve(f, file)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("zsl: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
