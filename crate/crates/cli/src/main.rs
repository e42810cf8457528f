fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CROWDMETA_LOG", "warn")).init();
    std::process::exit(crowdmeta_cli::app::run(std::env::args_os()));
}
