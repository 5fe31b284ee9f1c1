use clap::Parser;

use fedhar::cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = execute(cli) {
        eprintln!("error: {}", failure.message);
        std::process::exit(failure.code);
    }
}
