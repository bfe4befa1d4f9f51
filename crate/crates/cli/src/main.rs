use clap::Parser;
use epn_cli::error::{exit_code, EXIT_OK, EXIT_VALIDATION};
use epn_cli::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK });
        }
    };
    if let Err(e) = epn_cli::run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
