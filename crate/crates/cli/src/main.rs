use clap::Parser;

use mobiscope_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    mobiscope_cli::logging::init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
