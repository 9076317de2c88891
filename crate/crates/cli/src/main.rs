use std::process::ExitCode;

use clap::Parser;

use scd_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli.command, cli.config.as_deref(), &cli.all_overrides()) {
        Ok(Some(out)) => {
            log::info!("artifacts in {}", out.display());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
