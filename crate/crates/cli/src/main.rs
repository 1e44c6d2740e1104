use std::process::ExitCode;

use clap::Parser;
use layerbuild_cli::args::{Cli, Command};
use layerbuild_cli::{commands, exit_code, serve};

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Decompose(args) => {
            let report = commands::decompose(&args)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Recolor(args) => {
            for (t, ms) in commands::recolor(&args)?.iter().enumerate() {
                println!("frame {t}: compose {ms:.3} ms");
            }
        }
        Command::Filter(args) => {
            let path = commands::filter(&args)?;
            println!("{}", path.display());
        }
        Command::Inspect(args) => {
            println!("{}", serde_json::to_string_pretty(&commands::inspect(&args)?)?);
        }
        Command::Serve(args) => {
            tokio::runtime::Runtime::new()?.block_on(serve::run(&args))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
