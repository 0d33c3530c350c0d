use clap::Parser;

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("WAVESIFT_LOG", "warn"),
    )
    .format_timestamp(None)
    .init();
    let cli = wavesift::cli::Cli::parse();
    if let Err(e) = wavesift::cli::run(cli) {
        eprintln!("error[{}]: {e}", e.code());
        std::process::exit(e.exit_code());
    }
}
