fn main() {
    env_logger::init();
    if let Err(e) = milsense::cli::configure_threads() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
    std::process::exit(milsense::cli::run(std::env::args_os()));
}
