use clap::Parser;

fn main() {
    let cli = arz_cli::Cli::parse();
    if let Err(e) = arz_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
