use clap::Parser;
use framefill::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("framefill: {e}");
        std::process::exit(e.exit_code());
    }
}
