use std::process::ExitCode;

use clap::Parser;
use mimlcdl_cli::{run_with_progress, Cli, RunConfig};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = RunConfig::from_cli(cli).and_then(|cfg| {
        run_with_progress(&cfg, &mut |r| {
            eprintln!(
                "epoch {:>4}  objective {:.6}  {:.1}s",
                r.epoch, r.objective, r.wall_time
            )
        })
    });
    match result {
        Ok(outcome) => {
            println!("{outcome}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code() as u8)
        }
    }
}
