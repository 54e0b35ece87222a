use std::process::ExitCode;

use clap::Parser;

use spikefed_cli::{resolve, run, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match resolve(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg, &mut std::io::stderr()) {
        Ok(summary) => {
            println!("{}", summary.line());
            println!("metrics written to {}", cfg.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
