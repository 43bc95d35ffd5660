use std::process::ExitCode;

use clap::{ColorChoice, CommandFactory, FromArgMatches};
use jointsac_cli::{run, Cli};

fn main() -> ExitCode {
    let color = match std::env::var_os("NO_COLOR") {
        Some(v) if !v.is_empty() => ColorChoice::Never,
        _ => ColorChoice::Auto,
    };
    let cli = match Cli::command()
        .color(color)
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors; everything else is a
            // usage error with exit code 1.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
