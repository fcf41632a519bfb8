mod args;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use crate::error::CliError;

fn main() -> ExitCode {
    let cli = match args::parse_args(std::env::args_os()) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { 1 } else { 0 });
        }
    };
    let result = thread_pool(cli.threads)
        .and_then(|pool| pool.install(|| commands::run(cli.command, cli.verbose)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("rankmerge: error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads.filter(|&n| n > 0) {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Internal(format!("starting worker pool: {e}")))
}
