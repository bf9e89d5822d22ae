use clap::Parser;
use logmlm::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let level = if cli.common.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
