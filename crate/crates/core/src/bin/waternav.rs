fn main() {
    std::process::exit(waternav::harness::cli::run_cli(std::env::args_os()));
}
