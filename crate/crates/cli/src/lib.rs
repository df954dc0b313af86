//! The `iconsim` command line. Each verb parses into an args struct and
//! calls the matching function in [`commands`]; machine-readable results go
//! to the given writer as JSON, logs to standard error.

pub mod commands;
mod smoke;

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};

pub use smoke::{run_pipeline_smoke, SmokeOptions, SmokeReport, StageError};

use commands::*;

#[derive(Parser, Debug)]
#[command(name = "iconsim", version, about = "Icon similarity: train, embed, search and build icon sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic icon dataset.
    Gen(GenArgs),
    /// Assign stratified train/val/test splits.
    Split(SplitArgs),
    /// Train the network with mined triplets.
    Train(TrainArgs),
    /// Embed every manifest icon into an index file.
    Embed(EmbedArgs),
    /// Nearest neighbors of an indexed icon or an image file.
    Search(SearchArgs),
    /// Write ground-truth relative comparisons from collection labels.
    Comparisons(ComparisonsArgs),
    /// Precision and perplexity against relative comparisons.
    Eval(EvalArgs),
    /// Normalized similarity matrix, or the farthest pairs.
    Kernel(KernelArgs),
    /// Propose icon sets across keywords.
    Sets(SetsArgs),
    /// 2D linear projection of the index.
    Project(ProjectArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(#[from] clap::Error),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) if !e.use_stderr() => 0,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn line<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> anyhow::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Runs an already-parsed command.
pub fn execute(command: &Command, out: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::Gen(a) => line(out, &gen(a)?),
        Command::Split(a) => line(out, &split(a)?),
        Command::Train(a) => {
            let mut result = Ok(());
            let summary = train_cmd(a, &mut |m| {
                if result.is_ok() {
                    result = line(out, m);
                }
            })?;
            result?;
            line(out, &summary)
        }
        Command::Embed(a) => line(out, &embed(a)?),
        Command::Search(a) => search(a)?.iter().try_for_each(|n| line(out, n)),
        Command::Comparisons(a) => line(out, &comparisons(a)?),
        Command::Eval(a) => line(out, &eval(a)?),
        Command::Kernel(a) => match kernel(a)? {
            KernelOutput::Pairs(pairs) => pairs.iter().try_for_each(|p| line(out, p)),
            matrix => line(out, &matrix),
        },
        Command::Sets(a) => line(out, &sets(a)?),
        Command::Project(a) => line(out, &project(a)?),
        Command::Serve(a) => serve(a),
    }
}

/// Parses `argv` (program name first) and runs it.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    execute(&cli.command, out)?;
    Ok(())
}

/// Runs `argv` against standard output and returns the exit code: 0 on
/// success, 2 for usage errors, 1 for runtime failures.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(argv, &mut out) {
        Ok(()) => 0,
        Err(CliError::Usage(e)) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
        Err(e) => {
            let _ = out.flush();
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: {message}");
            e.exit_code()
        }
    }
}
