use clap::Parser;
use nearbr::cli::{run, Cli, EXIT_USAGE};

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    };
    std::process::exit(code);
}
