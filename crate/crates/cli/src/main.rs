use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use jmfusion::cli::{run, Cli};
use jmfusion::CliError;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json("jmfusion"));
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(&cli.command) {
        Ok(v) => {
            // a closed stdout (e.g. `| head`) is not a failure of the command
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json(cli.command.name()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
