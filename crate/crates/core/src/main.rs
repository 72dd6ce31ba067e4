fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NERKIT_LOG", "warn")).init();
    std::process::exit(nerkit::cli::run(std::env::args_os()));
}
