use clap::Parser;
use memreject::cli::{exit_code, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("memreject: {e}");
        std::process::exit(exit_code(&e));
    }
}
