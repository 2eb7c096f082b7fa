use clap::Parser;
use env_logger::Env;

use fedsim::cli::{execute, Cli};

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("FEDSIM_LOG", "warn")).init();
    let code = match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.name());
            e.exit_code()
        }
    };
    std::process::exit(code);
}
