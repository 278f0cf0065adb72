use clap::Parser;

use absrate_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("absrate: {e}");
        std::process::exit(e.exit_code());
    }
}
