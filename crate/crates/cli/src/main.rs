use clap::Parser;

use wgds_cli::config::Cli;
use wgds_cli::{execute, init_threads, resolve};

fn main() {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| resolve(cli)).and_then(|(c, cfg)| execute(c, cfg));
    if let Err(e) = result {
        eprintln!("wgds: {e}");
        std::process::exit(e.status());
    }
}
