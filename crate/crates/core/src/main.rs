fn main() {
    std::process::exit(inbedder::cli::run_cli(std::env::args_os()));
}
