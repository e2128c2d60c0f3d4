use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DCTS_LOG_LEVEL", "warn")).init();
    let args = dcts::cli::Args::parse();
    std::process::exit(dcts::cli::main_with(args));
}
