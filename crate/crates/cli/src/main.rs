fn main() {
    std::process::exit(binvis_cli::run_from(std::env::args_os()));
}
