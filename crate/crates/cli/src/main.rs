use clap::Parser;

fn main() {
    let cli = tactile_cli::Cli::parse();
    if let Err(e) = tactile_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
