use clap::Parser;

fn main() {
    let cli = confill_cli::Cli::parse();
    if let Err(e) = confill_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
