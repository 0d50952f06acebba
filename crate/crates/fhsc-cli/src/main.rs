use clap::Parser;

use fhsc_cli::config::Cli;
use fhsc_cli::error::EXIT_OK;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match fhsc_cli::run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("fhsc: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
