use clap::Parser;

fn main() {
    let cli = parabest::cli::Cli::parse();
    if let Err(e) = parabest::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
