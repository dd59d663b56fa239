use clap::Parser;
use opfield::scenarios::registry;
use opfield::Verdict;
use opfield_cli::{cmd_export, cmd_list, cmd_run, threads_from_env, Cli, CliResult, Command};
use std::process::ExitCode;

fn run(cli: Cli) -> CliResult<Verdict> {
    match cli.command {
        Command::List { json } => cmd_list(registry(), json, &mut std::io::stdout()).map(|_| Verdict::Pass),
        Command::Export { scenario, path } => cmd_export(&scenario, &path).map(|_| Verdict::Pass),
        Command::Run(args) => {
            let threads = threads_from_env(std::env::var("OPFIELD_THREADS").ok().as_deref())?;
            cmd_run(&args, threads, &mut std::io::stdout(), &mut std::io::stderr())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
