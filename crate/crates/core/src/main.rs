use clap::Parser;

fn main() {
    let cli = uav_trend::cli::Cli::parse();
    if let Err(failure) = uav_trend::cli::run(cli) {
        eprintln!("error: {}", failure.message);
        std::process::exit(failure.code);
    }
}
